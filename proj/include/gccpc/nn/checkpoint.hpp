// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

// Trained network parameters on disk.
//
//   "GCNN"
//   u32 version
//   u64 network config hash
//   u32 parameter count
//   per parameter: u32 name length, name bytes, u32 rows, u32 cols, f64 values (row-major)
//   u32 layer count
//   per layer: u32 channels, f64 running mean, f64 running variance
//   u32 CRC-32 of everything between the magic and the checksum

#pragma once

#include "gccpc/cache.hpp"
#include "gccpc/nn/network.hpp"

namespace gccpc::nn {

inline constexpr char checkpoint_magic[4] = {'G', 'C', 'N', 'N'};
inline constexpr std::uint32_t checkpoint_version = 1;

inline std::vector<char> encode_checkpoint(Classifier& net)
{
    detail::ByteWriter w;
    w.put(checkpoint_version);
    w.put(net.config().config_hash());
    const auto params = net.parameters();
    w.put(static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        w.put(static_cast<std::uint32_t>(p->name.size()));
        w.put_bytes(p->name.data(), p->name.size());
        w.put(static_cast<std::uint32_t>(p->value.rows()));
        w.put(static_cast<std::uint32_t>(p->value.cols()));
        w.put_bytes(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
    }
    w.put(static_cast<std::uint32_t>(net.num_layers()));
    for (const auto& bn : net.norms()) {
        w.put(static_cast<std::uint32_t>(bn.running_mean.size()));
        w.put_bytes(bn.running_mean.data(), static_cast<std::size_t>(bn.running_mean.size()) * sizeof(double));
        w.put_bytes(bn.running_var.data(), static_cast<std::size_t>(bn.running_var.size()) * sizeof(double));
    }
    const std::uint32_t crc = detail::crc32_of(w.bytes());
    std::vector<char> out(4 + w.bytes().size());
    std::memcpy(out.data(), checkpoint_magic, 4);
    std::copy(w.bytes().begin(), w.bytes().end(), out.begin() + 4);
    const auto* c = reinterpret_cast<const char*>(&crc);
    out.insert(out.end(), c, c + sizeof crc);
    return out;
}

// Loads into a network built from the same configuration; a different
// configuration is rejected through the stored hash.
inline void decode_checkpoint(std::span<const char> bytes, Classifier& net)
{
    if (bytes.size() < 8 || std::memcmp(bytes.data(), checkpoint_magic, 4) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    const auto payload = bytes.subspan(4, bytes.size() - 8);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (detail::crc32_of(payload) != stored_crc) {
        throw FormatError("checkpoint: checksum mismatch");
    }
    detail::ByteReader r(payload);
    if (r.get<std::uint32_t>() != checkpoint_version) {
        throw FormatError("checkpoint: unsupported version");
    }
    if (r.get<std::uint64_t>() != net.config().config_hash()) {
        throw InvalidArgument("checkpoint: network configuration does not match the checkpoint");
    }
    const auto params = net.parameters();
    if (r.get<std::uint32_t>() != params.size()) {
        throw FormatError("checkpoint: parameter count mismatch");
    }
    for (Parameter* p : params) {
        std::string name(r.get<std::uint32_t>(), '\0');
        r.get_bytes(name.data(), name.size());
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
            throw FormatError("checkpoint: parameter " + name + " does not match " + p->name);
        }
        r.get_bytes(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
        p->zero_grad();
    }
    if (r.get<std::uint32_t>() != net.num_layers()) {
        throw FormatError("checkpoint: layer count mismatch");
    }
    for (auto& bn : net.norms()) {
        if (r.get<std::uint32_t>() != bn.running_mean.size()) {
            throw FormatError("checkpoint: batch norm width mismatch");
        }
        r.get_bytes(bn.running_mean.data(), static_cast<std::size_t>(bn.running_mean.size()) * sizeof(double));
        r.get_bytes(bn.running_var.data(), static_cast<std::size_t>(bn.running_var.size()) * sizeof(double));
    }
    if (!r.done()) {
        throw FormatError("checkpoint: trailing data");
    }
}

inline void save_checkpoint(const std::filesystem::path& path, Classifier& net)
{
    detail::atomic_write(path, encode_checkpoint(net));
}

inline void load_checkpoint(const std::filesystem::path& path, Classifier& net)
{
    decode_checkpoint(detail::read_all(path), net);
}

} // namespace gccpc::nn
