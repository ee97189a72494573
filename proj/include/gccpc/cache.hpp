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

// On-disk cache of compressed interaction tensors.
//
//   "CIT1"
//   u32 layer count
//   per layer:
//     u32 M, u32 N, u32 K
//     u32 length, u32 ids[length]     input cluster assignment
//     u32 length, u32 ids[length]     output cluster assignment
//     f64 tensor[M][N][K]
//   u32 CRC-32 of everything between the magic and the checksum
//
// All integers and floats little-endian. Files are keyed by model id,
// architecture hash and cluster-config hash through their file name, so a
// changed architecture simply finds no file.

#pragma once

#include "gccpc/compression.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gccpc {

static_assert(std::endian::native == std::endian::little, "cache format assumes a little-endian host");

struct CacheKey {
    std::string model_id;
    std::uint64_t architecture_hash = 0;
    std::uint64_t cluster_hash = 0;

    std::string file_name() const
    {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "-%016llx-%016llx.cit",
                      static_cast<unsigned long long>(architecture_hash),
                      static_cast<unsigned long long>(cluster_hash));
        return model_id + buf;
    }
};

namespace detail {

class ByteWriter {
  public:
    template <typename T>
    void put(const T& v)
    {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    std::vector<char>& bytes() { return bytes_; }

  private:
    std::vector<char> bytes_;
};

class ByteReader {
  public:
    explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}
    template <typename T>
    T get()
    {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n)
    {
        if (pos_ + n > bytes_.size()) {
            throw FormatError("cache: unexpected end of data");
        }
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

  private:
    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const char> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

inline void put_assignment(ByteWriter& w, const ClusterAssignment& a)
{
    w.put(static_cast<std::uint32_t>(a.size()));
    w.put_bytes(a.assign.data(), a.assign.size() * sizeof(std::uint32_t));
}

inline ClusterAssignment get_assignment(ByteReader& r, std::uint32_t clusters)
{
    const auto n = r.get<std::uint32_t>();
    std::vector<std::uint32_t> ids(n);
    r.get_bytes(ids.data(), n * sizeof(std::uint32_t));
    for (auto id : ids) {
        if (id >= clusters) {
            throw FormatError("cache: cluster id out of range");
        }
    }
    return ClusterAssignment::from_labels(std::move(ids), clusters);
}

// Write to a sibling temp file, then rename over the target.
inline void atomic_write(const std::filesystem::path& path, std::span<const char> bytes)
{
    namespace fs = std::filesystem;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::random_device rd;
    const fs::path tmp = path.string() + ".tmp" + std::to_string(rd());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw IoError("cannot write " + tmp.string());
        }
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) {
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
    }
}

inline std::vector<char> read_all(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<char> bytes(static_cast<std::size_t>(is.tellg()));
    is.seekg(0);
    if (!is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw IoError("cannot read " + path.string());
    }
    return bytes;
}

} // namespace detail

inline constexpr char cache_magic[4] = {'C', 'I', 'T', '1'};

inline std::vector<char> encode_cache(std::span<const CompressedInteraction> layers)
{
    detail::ByteWriter w;
    w.put_bytes(cache_magic, 4);
    w.put(static_cast<std::uint32_t>(layers.size()));
    for (const auto& h : layers) {
        w.put(static_cast<std::uint32_t>(h.M));
        w.put(static_cast<std::uint32_t>(h.N));
        w.put(static_cast<std::uint32_t>(h.K));
        detail::put_assignment(w, h.input_assign);
        detail::put_assignment(w, h.output_assign);
        // tensor is M x (N*K) row-major, i.e. [m][n][k]
        w.put_bytes(h.tensor.data(), static_cast<std::size_t>(h.tensor.size()) * sizeof(double));
    }
    auto& bytes = w.bytes();
    const std::uint32_t crc = detail::crc32_of(std::span<const char>(bytes).subspan(4));
    w.put(crc);
    return std::move(bytes);
}

// verify = false skips the checksum for files already checked this run.
inline std::vector<CompressedInteraction> decode_cache(std::span<const char> bytes, bool verify = true)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), cache_magic, 4) != 0) {
        throw FormatError("cache: bad magic");
    }
    const auto payload = bytes.subspan(4, bytes.size() - 8);
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (verify && detail::crc32_of(payload) != stored) {
        throw FormatError("cache: checksum mismatch");
    }
    detail::ByteReader r(payload);
    const auto layers = r.get<std::uint32_t>();
    std::vector<CompressedInteraction> out;
    out.reserve(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        CompressedInteraction h;
        h.M = r.get<std::uint32_t>();
        h.N = r.get<std::uint32_t>();
        h.K = r.get<std::uint32_t>();
        h.input_assign = detail::get_assignment(r, static_cast<std::uint32_t>(h.M));
        h.output_assign = detail::get_assignment(r, static_cast<std::uint32_t>(h.N));
        h.tensor.resize(static_cast<Eigen::Index>(h.M), static_cast<Eigen::Index>(h.N * h.K));
        r.get_bytes(h.tensor.data(), h.M * h.N * h.K * sizeof(double));
        out.push_back(std::move(h));
    }
    if (!r.done()) {
        throw FormatError("cache: trailing bytes");
    }
    return out;
}

inline void cache_write(const std::filesystem::path& path, std::span<const CompressedInteraction> layers)
{
    detail::atomic_write(path, encode_cache(layers));
}

// Corrupt files raise FormatError.
inline std::vector<CompressedInteraction> cache_read(const std::filesystem::path& path, bool verify = true)
{
    return decode_cache(detail::read_all(path), verify);
}

// nullopt when no entry exists for the key (including a stale architecture
// or cluster configuration).
inline std::optional<std::vector<CompressedInteraction>> cache_lookup(const std::filesystem::path& dir,
                                                                      const CacheKey& key)
{
    const auto path = dir / key.file_name();
    if (!std::filesystem::exists(path)) {
        return std::nullopt;
    }
    return cache_read(path);
}

inline void cache_store(const std::filesystem::path& dir, const CacheKey& key,
                        std::span<const CompressedInteraction> layers)
{
    cache_write(dir / key.file_name(), layers);
}

} // namespace gccpc
