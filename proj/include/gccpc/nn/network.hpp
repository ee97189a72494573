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

// The classifier: per-model preparation (sampling hierarchy, surfels,
// interaction tensors, clustering, compressed tensors, cache) and the batched
// forward pass.

#pragma once

#include "gccpc/cache.hpp"
#include "gccpc/cluster.hpp"
#include "gccpc/compression.hpp"
#include "gccpc/geometry.hpp"
#include "gccpc/group.hpp"
#include "gccpc/interaction.hpp"
#include "gccpc/kernel.hpp"
#include "gccpc/nn/ops.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gccpc::nn {

enum class NetworkMode { translation, se3_normal_aligned, so3_full };

inline std::string_view to_string(NetworkMode m)
{
    switch (m) {
    case NetworkMode::translation: return "translation";
    case NetworkMode::se3_normal_aligned: return "se3_normal_aligned";
    case NetworkMode::so3_full: return "so3_full";
    }
    return "?";
}

inline NetworkMode parse_network_mode(std::string_view s)
{
    if (s == "translation") {
        return NetworkMode::translation;
    }
    if (s == "se3_normal_aligned" || s == "se3-normal-aligned" || s == "se3") {
        return NetworkMode::se3_normal_aligned;
    }
    if (s == "so3_full" || s == "so3-full" || s == "so3") {
        return NetworkMode::so3_full;
    }
    throw InvalidArgument("unknown network mode: " + std::string(s));
}

// p, p/4, p/16, ... down to 16.
inline std::vector<std::size_t> default_level_counts(std::size_t points)
{
    std::vector<std::size_t> counts;
    std::size_t p = points;
    while (p > 16 && p % 4 == 0) {
        counts.push_back(p);
        p /= 4;
    }
    if (p != 16 || counts.empty()) {
        throw InvalidArgument("no level plan for " + std::to_string(points) +
                              " points: the count must be 16 * 4^d with d >= 1, or give the levels explicitly");
    }
    counts.push_back(16);
    return counts;
}

struct NetworkConfig {
    NetworkMode mode = NetworkMode::translation;
    std::vector<int> channels{24, 32, 48, 64, 80, 96};
    std::size_t points = 1024;
    std::vector<std::size_t> level_counts; // empty: default_level_counts(points)
    double initial_spacing = 0.02;
    int grid_size = 3;
    std::optional<double> lambda; // unset: (spacing / pi)^2 per layer
    int ring_rotations = 8;
    int so3_rotations = 46;
    int classes = 6;
    bool use_colors = false;
    ClusterConfig cluster;
    std::uint64_t seed = 0; // sampling hierarchy and rotation samples

    bool compressed() const noexcept { return cluster.representatives > 0; }
    bool is_group() const noexcept { return mode != NetworkMode::translation; }
    std::size_t num_layers() const noexcept { return channels.size(); }
    int input_channels() const noexcept { return use_colors ? 4 : 1; }

    std::vector<std::size_t> levels() const
    {
        return level_counts.empty() ? default_level_counts(points) : level_counts;
    }

    // Sampling level written by each layer. The first layer always moves down
    // one level; the remaining steps are taken by the final layers.
    std::vector<std::size_t> output_levels() const
    {
        const std::size_t L = num_layers();
        const std::size_t D = levels().size() - 1;
        std::vector<std::size_t> out(L);
        for (std::size_t l = 0; l < L; ++l) {
            out[l] = l == 0 ? 1 : 1 + (D - 1 > L - 1 - l ? D - 1 - (L - 1 - l) : 0);
        }
        return out;
    }

    std::size_t input_level(std::size_t layer) const { return layer == 0 ? 0 : output_levels()[layer - 1]; }

    double spacing(std::size_t layer) const { return std::ldexp(initial_spacing, static_cast<int>(layer)); }

    KernelSpec kernel_spec(std::size_t layer) const
    {
        KernelSpec spec;
        spec.spacing = spacing(layer);
        spec.grid_size = grid_size;
        if (is_group()) {
            spec.mode = KernelMode::radial_group;
            spec.lambda = lambda.value_or(KernelSpec::default_lambda(spec.spacing));
        }
        return spec;
    }

    std::size_t rotations_per_point() const
    {
        switch (mode) {
        case NetworkMode::translation: return 1;
        case NetworkMode::se3_normal_aligned: return static_cast<std::size_t>(ring_rotations);
        case NetworkMode::so3_full: return static_cast<std::size_t>(so3_rotations);
        }
        return 1;
    }

    void validate() const
    {
        require(!channels.empty(), "network: at least one layer required");
        for (int c : channels) {
            require(c >= 1, "network: channel counts must be positive");
        }
        const auto lv = levels();
        require(lv.size() >= 2, "network: the level plan needs at least one downsampling step");
        for (std::size_t l = 1; l < lv.size(); ++l) {
            require(lv[l] < lv[l - 1], "network: level counts must be strictly decreasing");
        }
        require(lv.back() == 16, "network: the level plan must end at 16 points");
        require(lv.size() - 1 <= num_layers(),
                "network: infeasible level plan: " + std::to_string(lv.size() - 1) + " downsampling steps but only " +
                    std::to_string(num_layers()) + " layers");
        require(initial_spacing > 0.0, "network: spacing must be positive");
        require(!lambda || *lambda >= 0.0, "network: lambda must be non-negative");
        require(ring_rotations >= 1 && so3_rotations >= 1, "network: rotation counts must be positive");
        require(classes >= 2, "network: at least two classes required");
        cluster.validate();
        kernel_spec(0).validate();
    }

    // Everything the interaction tensors depend on.
    std::uint64_t architecture_hash() const
    {
        Fnv1a h;
        h.add("arch1").add(to_string(mode));
        for (int c : channels) {
            h.add_value(static_cast<std::int64_t>(c));
        }
        for (auto n : levels()) {
            h.add_value(static_cast<std::uint64_t>(n));
        }
        h.add_value(initial_spacing).add_value(static_cast<std::int64_t>(grid_size));
        h.add_value(lambda.has_value()).add_value(lambda.value_or(0.0));
        h.add_value(static_cast<std::int64_t>(rotations_per_point()));
        h.add_value(use_colors).add_value(seed);
        return h.value();
    }

    std::uint64_t cluster_hash() const
    {
        Fnv1a h;
        h.add("clst1").add(gccpc::to_string(cluster.algorithm)).add(gccpc::to_string(cluster.target));
        h.add_value(static_cast<std::int64_t>(cluster.max_iter)).add_value(static_cast<std::int64_t>(cluster.representatives));
        h.add_value(cluster.seed);
        return h.value();
    }

    // Identity of a trained network: architecture, compression and head.
    std::uint64_t config_hash() const
    {
        Fnv1a h;
        h.add_value(architecture_hash()).add_value(cluster_hash()).add_value(static_cast<std::int64_t>(classes));
        h.add_value(cluster.recluster_each_epoch);
        return h.value();
    }
};

// Surfels of one sampling level: plain positions, or poses in group modes.
struct LevelGeometry {
    std::vector<Vec3> points;
    std::vector<Pose> poses;

    std::size_t size() const noexcept { return poses.empty() ? points.size() : poses.size(); }
};

// A model ready for the forward pass.
struct PreparedModel {
    std::string id;
    int label = -1;
    bool compressed = false;

    // Uncompressed path (and compressed preparation): per-level surfels and
    // per-surfel input features.
    std::vector<LevelGeometry> levels;
    Matrix input_features;
    std::vector<std::shared_ptr<const SparseInteraction>> interactions; // optional, kept on request

    // Compressed path.
    std::vector<CompressedInteraction> layers;
    Matrix input_representatives;
    std::filesystem::path cache_file; // where layers can be reloaded from
    bool cache_hit = false;

    std::vector<double> pool_weights; // one per row of the last layer's output
    double prepare_seconds = 0.0;

    std::size_t tensor_bytes() const
    {
        std::size_t b = 0;
        for (const auto& h : layers) {
            b += static_cast<std::size_t>(h.tensor.size()) * sizeof(double);
        }
        return b;
    }

    bool tensors_loaded() const { return !compressed || !layers.empty(); }

    void release_tensors()
    {
        if (compressed && !cache_file.empty()) {
            layers.clear();
            layers.shrink_to_fit();
        }
    }

    // The file was written or checksummed when the model was prepared.
    void ensure_tensors()
    {
        if (!tensors_loaded()) {
            layers = cache_read(cache_file, false);
        }
    }
};

struct PrepareOptions {
    std::optional<std::filesystem::path> cache_dir; // unset: no caching
    bool keep_interactions = false;                 // uncompressed: retain T per layer
    std::string cache_suffix; // distinguishes transformed copies of a model in the cache
};

struct ForwardOptions {
    BnMode bn_mode = BnMode::train;
    std::vector<LayerCounters>* counters = nullptr; // one entry per layer, accumulated
    std::vector<BatchStats>* bn_stats = nullptr;    // filled per layer
};

class Classifier {
  public:
    Classifier(NetworkConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg))
    {
        cfg_.validate();
        build_geometry_tables();
        int c_in = cfg_.input_channels();
        for (std::size_t l = 0; l < cfg_.num_layers(); ++l) {
            const int c_out = cfg_.channels[l];
            const auto K = static_cast<Eigen::Index>(grids_[l].size());
            const double a = std::sqrt(6.0 / static_cast<double>(K * c_in + c_out));
            conv_.emplace_back("conv" + std::to_string(l) + ".weight",
                               uniform_matrix(K * c_in, c_out, a, derive_seed(init_seed, 0x494e4954ULL, l)));
            bn_.emplace_back("bn" + std::to_string(l), c_out);
            c_in = c_out;
        }
        const double a = std::sqrt(6.0 / static_cast<double>(c_in + cfg_.classes));
        fc_w_ = Parameter("fc.weight", uniform_matrix(c_in, cfg_.classes, a, derive_seed(init_seed, 0x46435700ULL)));
        fc_b_ = Parameter("fc.bias", Matrix::Zero(1, cfg_.classes));
    }

    const NetworkConfig& config() const noexcept { return cfg_; }
    std::size_t num_layers() const noexcept { return cfg_.num_layers(); }
    const OffsetGrid& grid(std::size_t layer) const { return grids_.at(layer); }
    const KernelSpec& kernel_spec(std::size_t layer) const { return specs_.at(layer); }
    const RotationSet& surfel_rotations() const noexcept { return surfel_rotations_; }

    Parameter& conv_weight(std::size_t layer) { return conv_.at(layer); }
    BatchNorm& norm(std::size_t layer) { return bn_.at(layer); }
    std::vector<BatchNorm>& norms() { return bn_; }

    std::vector<Parameter*> parameters()
    {
        std::vector<Parameter*> out;
        for (std::size_t l = 0; l < conv_.size(); ++l) {
            out.push_back(&conv_[l]);
            out.push_back(&bn_[l].gamma);
            out.push_back(&bn_[l].beta);
        }
        out.push_back(&fc_w_);
        out.push_back(&fc_b_);
        return out;
    }

    void zero_grad()
    {
        for (auto* p : parameters()) {
            p->zero_grad();
        }
    }

    // Hash of the current parameter values; activation-based cluster targets
    // depend on them.
    std::uint64_t weights_hash()
    {
        Fnv1a h;
        for (auto* p : parameters()) {
            h.add(std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                   static_cast<std::size_t>(p->value.size()) * sizeof(double)));
        }
        for (const auto& b : bn_) {
            h.add(std::string_view(reinterpret_cast<const char*>(b.running_mean.data()),
                                   static_cast<std::size_t>(b.running_mean.size()) * sizeof(double)));
        }
        return h.value();
    }

    CacheKey cache_key(const std::string& model_id)
    {
        std::uint64_t cluster = cfg_.cluster_hash();
        if (cfg_.cluster.target != ClusterTarget::geometry_only) {
            cluster = derive_seed(cluster, weights_hash());
        }
        return CacheKey{model_id, cfg_.architecture_hash(), cluster};
    }

    // Per-level surfels of a cloud, following the configured level plan.
    std::vector<LevelGeometry> level_geometry(const PointCloud& cloud, const std::string& model_id,
                                              PointCloud* level0 = nullptr) const
    {
        const auto counts = cfg_.levels();
        if (cloud.size() < counts.front()) {
            throw InvalidArgument("model " + model_id + " has " + std::to_string(cloud.size()) +
                                  " points, the level plan needs " + std::to_string(counts.front()));
        }
        if (cfg_.mode == NetworkMode::se3_normal_aligned && !cloud.has_normals()) {
            throw InvalidArgument("model " + model_id + ": normal-aligned frames need normals");
        }
        if (cfg_.use_colors && !cloud.has_colors()) {
            throw InvalidArgument("model " + model_id + ": color channels requested but the cloud has none");
        }
        const auto h = build_hierarchy(cloud, counts, derive_seed(cfg_.seed, 0x48494552ULL, model_key(model_id)));
        std::vector<LevelGeometry> out(h.levels.size());
        for (std::size_t l = 0; l < h.levels.size(); ++l) {
            const PointCloud& lv = h.levels[l];
            switch (cfg_.mode) {
            case NetworkMode::translation: out[l].points = lv.positions; break;
            case NetworkMode::se3_normal_aligned: out[l].poses = normal_aligned_poses(lv, cfg_.ring_rotations); break;
            case NetworkMode::so3_full:
                out[l].poses.reserve(lv.size() * surfel_rotations_.size());
                for (const auto& p : lv.positions) {
                    for (const auto& r : surfel_rotations_.rotations) {
                        out[l].poses.push_back(Pose{r, p});
                    }
                }
                break;
            }
        }
        if (level0) {
            *level0 = h.levels.front();
        }
        return out;
    }

    // One constant channel per surfel, plus the point's color when enabled.
    Matrix input_features(const PointCloud& level0) const
    {
        const std::size_t R = cfg_.rotations_per_point();
        Matrix x = Matrix::Ones(static_cast<Eigen::Index>(level0.size() * R), cfg_.input_channels());
        if (cfg_.use_colors) {
            for (std::size_t i = 0; i < level0.size(); ++i) {
                for (std::size_t r = 0; r < R; ++r) {
                    x.row(static_cast<Eigen::Index>(i * R + r)).tail<3>() = (*level0.colors)[i].transpose();
                }
            }
        }
        return x;
    }

    std::shared_ptr<const SparseInteraction> interaction(std::size_t layer, const LevelGeometry& in,
                                                         const LevelGeometry& out) const
    {
        if (cfg_.is_group()) {
            return std::make_shared<const SparseInteraction>(
                build_interaction_group(in.poses, out.poses, grids_[layer], specs_[layer]));
        }
        return std::make_shared<const SparseInteraction>(
            build_interaction_translation(in.points, out.points, grids_[layer], specs_[layer]));
    }

    std::shared_ptr<const SparseInteraction> interaction(std::size_t layer, const PreparedModel& m) const
    {
        if (layer < m.interactions.size() && m.interactions[layer]) {
            return m.interactions[layer];
        }
        return interaction(layer, m.levels[cfg_.input_level(layer)], m.levels[cfg_.output_levels()[layer]]);
    }

    PreparedModel prepare(const PointCloud& cloud, const std::string& model_id, int label,
                          const PrepareOptions& opt = {})
    {
        const auto start = std::chrono::steady_clock::now();
        PreparedModel m;
        m.id = model_id;
        m.label = label;
        m.compressed = cfg_.compressed();
        if (!m.compressed) {
            PointCloud level0;
            m.levels = level_geometry(cloud, model_id, &level0);
            m.input_features = input_features(level0);
            if (opt.keep_interactions) {
                for (std::size_t l = 0; l < num_layers(); ++l) {
                    m.interactions.push_back(interaction(l, m));
                }
            }
            m.pool_weights.assign(m.levels[cfg_.output_levels().back()].size(), 1.0);
        } else {
            prepare_compressed(m, cloud, opt);
            m.pool_weights.clear();
            for (auto s : m.layers.back().output_assign.sizes) {
                m.pool_weights.push_back(static_cast<double>(s));
            }
        }
        m.prepare_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return m;
    }

    Var forward(Tape& tape, std::span<PreparedModel* const> batch, const ForwardOptions& opt)
    {
        require(!batch.empty(), "forward: empty batch");
        const std::size_t L = num_layers();
        if (opt.counters && opt.counters->size() < L) {
            opt.counters->resize(L);
        }
        if (opt.bn_stats) {
            opt.bn_stats->assign(L, BatchStats{});
        }
        std::size_t rows = 0;
        for (const auto* m : batch) {
            require(m->compressed == cfg_.compressed(), "forward: model prepared for a different mode");
            rows += static_cast<std::size_t>(m->compressed ? m->input_representatives.rows() : m->input_features.rows());
        }
        Matrix x0(static_cast<Eigen::Index>(rows), cfg_.input_channels());
        std::size_t off = 0;
        for (const auto* m : batch) {
            const Matrix& src = m->compressed ? m->input_representatives : m->input_features;
            x0.middleRows(static_cast<Eigen::Index>(off), src.rows()) = src;
            off += static_cast<std::size_t>(src.rows());
        }
        Var x = tape.constant(std::move(x0));
        for (std::size_t l = 0; l < L; ++l) {
            std::vector<ConvOperand> ops;
            ops.reserve(batch.size());
            for (auto* m : batch) {
                ConvOperand op;
                if (m->compressed) {
                    m->ensure_tensors();
                    op.compressed = &m->layers[l];
                } else {
                    op.sparse = interaction(l, *m);
                }
                ops.push_back(std::move(op));
            }
            x = conv(tape, x, std::move(ops), tape.parameter(conv_[l]), opt.counters ? &(*opt.counters)[l] : nullptr);
            x = batch_norm(tape, x, tape.parameter(bn_[l].gamma), tape.parameter(bn_[l].beta), bn_[l], opt.bn_mode,
                           opt.bn_stats ? &(*opt.bn_stats)[l] : nullptr);
            x = relu(tape, x);
        }
        std::vector<std::size_t> offsets{0};
        std::vector<double> weights;
        for (const auto* m : batch) {
            offsets.push_back(offsets.back() + m->pool_weights.size());
            weights.insert(weights.end(), m->pool_weights.begin(), m->pool_weights.end());
        }
        x = weighted_pool(tape, x, std::move(offsets), std::move(weights));
        x = linear(tape, x, tape.parameter(fc_w_), tape.parameter(fc_b_));
        return log_softmax(tape, x);
    }

  private:
    static std::uint64_t model_key(const std::string& id) { return Fnv1a().add(id).value(); }

    static Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, double a, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-a, a);
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = u(rng);
        }
        return m;
    }

    void build_geometry_tables()
    {
        RotationSet kernel_rotations;
        if (cfg_.mode == NetworkMode::se3_normal_aligned) {
            kernel_rotations = octahedral_rotations();
        } else if (cfg_.mode == NetworkMode::so3_full) {
            surfel_rotations_ = sample_so3_poisson(cfg_.so3_rotations, derive_seed(cfg_.seed, 0x534f3300ULL));
            kernel_rotations = surfel_rotations_;
        }
        for (std::size_t l = 0; l < cfg_.num_layers(); ++l) {
            specs_.push_back(cfg_.kernel_spec(l));
            KernelSpec spatial = specs_.back();
            spatial.mode = KernelMode::tensor_product_spatial;
            OffsetGrid g = spatial_offset_grid(spatial);
            grids_.push_back(cfg_.is_group() ? group_offset_product(g, kernel_rotations) : std::move(g));
        }
    }

    // Per-point activations used as clustering targets for one layer, and
    // the per-point layer output that feeds the next layer.
    Matrix activation_target(std::size_t layer, const SparseInteraction& t, Matrix& phi)
    {
        const Matrix h = apply_interaction(t, phi);
        Tape tape;
        Var y = tape.constant(h * conv_[layer].value);
        const ClusterTarget target = cfg_.cluster.target;
        Matrix result = target == ClusterTarget::after_interaction ? h : tape.value(y);
        BatchNorm& bn = bn_[layer];
        Var n = batch_norm(tape, y, tape.constant(bn.gamma.value), tape.constant(bn.beta.value), bn,
                           BnMode::train_frozen);
        Var r = relu(tape, n);
        if (target == ClusterTarget::after_norm) {
            result = tape.value(n);
        } else if (target == ClusterTarget::after_nonlinearity) {
            result = tape.value(r);
        }
        phi = tape.value(r);
        return result;
    }

    void prepare_compressed(PreparedModel& m, const PointCloud& cloud, const PrepareOptions& opt)
    {
        const int M = cfg_.cluster.representatives;
        const std::size_t L = num_layers();
        std::optional<CacheKey> key;
        if (opt.cache_dir) {
            key = cache_key(m.id + opt.cache_suffix);
            m.cache_file = *opt.cache_dir / key->file_name();
            if (auto hit = cache_lookup(*opt.cache_dir, *key)) {
                m.layers = std::move(*hit);
                m.cache_hit = true;
            }
        }
        if (m.cache_hit && m.layers.size() != L) {
            throw FormatError("cache entry " + m.cache_file.string() + " has the wrong layer count");
        }

        PointCloud level0;
        Matrix features;
        if (!m.cache_hit || cfg_.use_colors) {
            m.levels = level_geometry(cloud, m.id, &level0);
            features = input_features(level0);
        }
        if (!m.cache_hit) {
            const std::uint64_t cseed = derive_seed(cfg_.cluster.seed, 0x434c5354ULL, model_key(m.id));
            // Input clusters of the first layer: the features are constant
            // (or per-point colors), so grouping surfels by position keeps
            // the representatives meaningful.
            const LevelGeometry& g0 = m.levels[0];
            Matrix pos(static_cast<Eigen::Index>(g0.size()), 3);
            for (std::size_t i = 0; i < g0.size(); ++i) {
                pos.row(static_cast<Eigen::Index>(i)) =
                    (g0.poses.empty() ? g0.points[i] : g0.poses[i].translation).transpose();
            }
            ClusterAssignment in_assign = cluster_features(pos, M, cfg_.cluster, derive_seed(cseed, 1000));
            Matrix phi = features; // per-point activations, activation targets only
            for (std::size_t l = 0; l < L; ++l) {
                const auto t = interaction(l, m);
                Matrix target;
                if (cfg_.cluster.target == ClusterTarget::geometry_only) {
                    target = geometry_descriptor_features(static_cast<int>(l), *t,
                                                          l == 0 ? std::nullopt
                                                                 : std::optional<ClusterAssignment>(in_assign));
                } else {
                    target = activation_target(l, *t, phi);
                }
                ClusterAssignment out_assign = cluster_features(target, M, cfg_.cluster, derive_seed(cseed, l));
                m.layers.push_back(compress_interaction(*t, in_assign, out_assign));
                in_assign = std::move(out_assign);
            }
            if (key) {
                cache_store(*opt.cache_dir, *key, m.layers);
            }
        }
        if (features.size() == 0) {
            features = Matrix::Ones(static_cast<Eigen::Index>(m.layers.front().input_assign.size()), 1);
        }
        m.input_representatives = cluster_means(features, m.layers.front().input_assign);
        m.levels.clear();
    }

    NetworkConfig cfg_;
    RotationSet surfel_rotations_;
    std::vector<KernelSpec> specs_;
    std::vector<OffsetGrid> grids_;
    std::vector<Parameter> conv_;
    std::vector<BatchNorm> bn_;
    Parameter fc_w_, fc_b_;
};

} // namespace gccpc::nn
