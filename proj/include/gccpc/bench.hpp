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

// Work and wall-time comparison of compressed against uncompressed networks.
//
// Per-layer counts come from one model's level geometry. Uncompressed nnz(T)
// is streamed, never stored, so settings whose tensors would not fit in memory
// still get exact counts. Compressed counts use min(M, rows) clusters per side.

#pragma once

#include "gccpc/nn/train.hpp"

#include <iomanip>
#include <ostream>

namespace gccpc {

struct BenchLayer {
    std::size_t layer = 0;
    std::size_t rows_in = 0, rows_out = 0, offsets = 0;
    int channels_in = 0, channels_out = 0;
    std::uint64_t nnz = 0;
    std::uint64_t uncompressed_features = 0, compressed_features = 0;
    std::uint64_t uncompressed_macs = 0, compressed_macs = 0;
};

struct BenchTiming {
    double first_epoch_seconds = 0.0;  // preparation plus one training pass
    double steady_epoch_seconds = 0.0; // the training pass alone
    std::size_t models = 0;
};

struct BenchRow {
    std::size_t points = 0;
    int representatives = 0;
    nn::NetworkMode mode = nn::NetworkMode::translation;
    std::vector<BenchLayer> layers;
    std::optional<BenchTiming> uncompressed, compressed;

    std::uint64_t total(std::uint64_t BenchLayer::*field) const
    {
        std::uint64_t s = 0;
        for (const auto& l : layers) s += l.*field;
        return s;
    }
};

inline std::vector<BenchLayer> bench_counts(const nn::Classifier& net, const PointCloud& cloud, int representatives)
{
    const auto& cfg = net.config();
    const auto levels = net.level_geometry(cloud, "bench");
    const auto out_levels = cfg.output_levels();
    std::vector<BenchLayer> out;
    int c_in = cfg.input_channels();
    for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
        const auto& in = levels[cfg.input_level(l)];
        const auto& dst = levels[out_levels[l]];
        NnzCounter counter;
        if (cfg.is_group()) {
            visit_interaction_group(std::span<const Pose>(in.poses), std::span<const Pose>(dst.poses), net.grid(l),
                                    net.kernel_spec(l), counter);
        } else {
            visit_interaction_translation(std::span<const Vec3>(in.points), std::span<const Vec3>(dst.points),
                                          net.grid(l), net.kernel_spec(l), counter);
        }
        BenchLayer b;
        b.layer = l;
        b.rows_in = in.size();
        b.rows_out = dst.size();
        b.offsets = net.grid(l).size();
        b.channels_in = c_in;
        b.channels_out = cfg.channels[l];
        b.nnz = counter.nnz;
        const std::uint64_t C = static_cast<std::uint64_t>(c_in), Co = static_cast<std::uint64_t>(b.channels_out);
        const std::uint64_t K = b.offsets;
        b.uncompressed_features = b.rows_in;
        b.uncompressed_macs = b.nnz * C + std::uint64_t{b.rows_out} * K * C * Co;
        const std::uint64_t M = std::min<std::uint64_t>(static_cast<std::uint64_t>(representatives), b.rows_in);
        const std::uint64_t N = std::min<std::uint64_t>(static_cast<std::uint64_t>(representatives), b.rows_out);
        b.compressed_features = M;
        b.compressed_macs = M * N * K * C + N * K * C * Co;
        out.push_back(b);
        c_in = b.channels_out;
    }
    return out;
}

// One training epoch over the samples; the models are prepared first and that
// preparation is counted in the first epoch only.
inline BenchTiming bench_epoch(const nn::NetworkConfig& cfg, std::uint64_t init_seed, const nn::Dataset& data,
                               nn::TrainOptions opt)
{
    nn::Classifier net(cfg, init_seed);
    nn::Dataset train_only{data.train, {}, data.classes};
    opt.epochs = 1;
    opt.evaluate_each_epoch = false;
    const nn::TrainResult r = nn::train_classifier(net, train_only, opt);
    BenchTiming t;
    t.models = data.train.size();
    t.first_epoch_seconds = r.epochs.front().wall_seconds;
    t.steady_epoch_seconds = r.epochs.front().wall_seconds - r.train_prepare_seconds;
    return t;
}

inline std::string ratio_string(double a, double b)
{
    if (b <= 0.0) {
        return "";
    }
    std::ostringstream os;
    os << std::setprecision(10) << a / b;
    return os.str();
}

inline void write_bench_header(std::ostream& os)
{
    os << "points,representatives,mode,layer,rows_in,rows_out,offsets,nnz,uncompressed_features,compressed_features,"
          "features_ratio,uncompressed_macs,compressed_macs,macs_ratio,uncompressed_first_epoch_s,"
          "compressed_first_epoch_s,uncompressed_epoch_s,compressed_epoch_s,epoch_speedup\n";
}

// One line per layer, then a `total` line carrying the timings.
inline void write_bench_rows(std::ostream& os, const BenchRow& r)
{
    auto prefix = [&] { os << r.points << ',' << r.representatives << ',' << nn::to_string(r.mode) << ','; };
    for (const auto& l : r.layers) {
        prefix();
        os << l.layer << ',' << l.rows_in << ',' << l.rows_out << ',' << l.offsets << ',' << l.nnz << ','
           << l.uncompressed_features << ',' << l.compressed_features << ','
           << ratio_string(static_cast<double>(l.uncompressed_features), static_cast<double>(l.compressed_features))
           << ',' << l.uncompressed_macs << ',' << l.compressed_macs << ','
           << ratio_string(static_cast<double>(l.uncompressed_macs), static_cast<double>(l.compressed_macs))
           << ",,,,,\n";
    }
    const auto uf = r.total(&BenchLayer::uncompressed_features), cf = r.total(&BenchLayer::compressed_features);
    const auto um = r.total(&BenchLayer::uncompressed_macs), cm = r.total(&BenchLayer::compressed_macs);
    prefix();
    os << "total,,,," << r.total(&BenchLayer::nnz) << ',' << uf << ',' << cf << ','
       << ratio_string(static_cast<double>(uf), static_cast<double>(cf)) << ',' << um << ',' << cm << ','
       << ratio_string(static_cast<double>(um), static_cast<double>(cm)) << ',';
    if (r.uncompressed) os << r.uncompressed->first_epoch_seconds;
    os << ',';
    if (r.compressed) os << r.compressed->first_epoch_seconds;
    os << ',';
    if (r.uncompressed) os << r.uncompressed->steady_epoch_seconds;
    os << ',';
    if (r.compressed) os << r.compressed->steady_epoch_seconds;
    os << ',';
    if (r.uncompressed && r.compressed) {
        os << ratio_string(r.uncompressed->steady_epoch_seconds, r.compressed->steady_epoch_seconds);
    }
    os << '\n';
}

} // namespace gccpc
