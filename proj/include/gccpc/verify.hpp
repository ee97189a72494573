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

// End-to-end property checks behind `gccpc verify`.
//
// The reference sides are deliberately slow: kernels are evaluated for every
// (input, output, offset) triple and summed densely, so they share no code
// with the sparse builders or the compressed tensors they are compared with.

#pragma once

#include "gccpc/nn/network.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace gccpc {

struct VerifyOptions {
    std::uint64_t seed = 0;
    std::optional<double> lambda; // group kernels; unset: per-layer default
    int oracle_instances = 20;
    int rigid_motions = 20;
};

struct CheckResult {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    double seconds = 0.0;
    std::string detail;
};

namespace verify_detail {

inline double relative_error(const Matrix& a, const Matrix& b)
{
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = g(rng);
    }
    return m;
}

inline PointCloud test_cloud(ShapeKind kind, std::size_t n, std::uint64_t seed)
{
    return orient_normals(normalize_unit_cube(synthesize_shape(kind, n, seed)));
}

inline Matrix run(nn::Classifier& net, std::vector<nn::PreparedModel*> batch)
{
    nn::Tape tape;
    nn::ForwardOptions fo;
    fo.bn_mode = nn::BnMode::train_frozen;
    const nn::Var out = net.forward(tape, batch, fo);
    return tape.value(out);
}

inline CheckResult timed(const std::string& name, double tolerance, const std::function<double(std::string&)>& body)
{
    CheckResult r;
    r.name = name;
    r.tolerance = tolerance;
    const auto start = std::chrono::steady_clock::now();
    r.error = body(r.detail);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.passed = std::isfinite(r.error) && r.error <= tolerance;
    return r;
}

// Largest entry difference between two tensors, matching entries by index.
inline double tensor_difference(const SparseInteraction& a, const SparseInteraction& b)
{
    auto sorted = [](const SparseInteraction& t) {
        auto e = t.entries();
        std::sort(e.begin(), e.end(), [](const auto& x, const auto& y) {
            return std::tie(x.j, x.k, x.i) < std::tie(y.j, y.k, y.i);
        });
        return e;
    };
    if (a.num_inputs() != b.num_inputs() || a.num_outputs() != b.num_outputs() || a.num_offsets() != b.num_offsets()) {
        return std::numeric_limits<double>::infinity();
    }
    const auto ea = sorted(a), eb = sorted(b);
    double worst = 0.0;
    std::size_t p = 0, q = 0;
    auto key = [](const SparseInteraction::Entry& e) { return std::tie(e.j, e.k, e.i); };
    while (p < ea.size() || q < eb.size()) {
        if (q == eb.size() || (p < ea.size() && key(ea[p]) < key(eb[q]))) {
            worst = std::max(worst, std::abs(ea[p++].value));
        } else if (p == ea.size() || key(eb[q]) < key(ea[p])) {
            worst = std::max(worst, std::abs(eb[q++].value));
        } else {
            worst = std::max(worst, std::abs(ea[p++].value - eb[q++].value));
        }
    }
    return worst;
}

} // namespace verify_detail

// Compressed convolution on cluster means against the per-point definition:
// substitute each input's representative, convolve, average every output
// cluster.
inline CheckResult check_compressed_oracle(const VerifyOptions& opt)
{
    using namespace verify_detail;
    return timed("compressed_vs_naive_oracle", 1e-6, [&](std::string& detail) {
        std::mt19937_64 rng(derive_seed(opt.seed, 0x4f52434cULL));
        double worst = 0.0;
        for (int inst = 0; inst < opt.oracle_instances; ++inst) {
            std::uniform_int_distribution<int> pick_i(20, 200), pick_c(1, 3);
            const auto I = static_cast<std::size_t>(pick_i(rng));
            const auto J = std::max<std::size_t>(4, I / 4);
            const int C = pick_c(rng), Cout = pick_c(rng);
            std::uniform_real_distribution<double> u(-0.1, 0.1);
            std::vector<Vec3> in(I), out(J);
            for (auto& p : in) p = Vec3(u(rng), u(rng), u(rng));
            for (auto& p : out) p = Vec3(u(rng), u(rng), u(rng));
            KernelSpec spec;
            spec.spacing = 0.04;
            const OffsetGrid grid = spatial_offset_grid(spec);
            const auto K = grid.size();

            const Matrix phi = gaussian(static_cast<Eigen::Index>(I), C, rng);
            const int M = std::max(2, static_cast<int>(I / 8)), N = std::max(2, static_cast<int>(J / 3));
            const auto ain = kmeans_cluster(phi, M, 10, rng());
            Matrix out_xyz(static_cast<Eigen::Index>(J), 3);
            for (std::size_t j = 0; j < J; ++j) out_xyz.row(static_cast<Eigen::Index>(j)) = out[j].transpose();
            const auto aout = kmeans_cluster(out_xyz, N, 10, rng());
            const Matrix rep = cluster_means(phi, ain);
            const Matrix w = gaussian(static_cast<Eigen::Index>(K) * C, Cout, rng);

            const SparseInteraction t = build_interaction_translation(in, out, grid, spec);
            const CompressedInteraction h = compress_interaction(t, ain, aout);
            const Matrix fast = nn::compressed_interaction_apply(h, rep) * w;

            Matrix per_point = Matrix::Zero(static_cast<Eigen::Index>(J), Cout);
            for (std::size_t j = 0; j < J; ++j) {
                for (std::size_t i = 0; i < I; ++i) {
                    for (std::size_t k = 0; k < K; ++k) {
                        const double tv = spatial_kernel_value(out[j] + grid.vectors[k] - in[i], spec);
                        if (tv == 0.0) continue;
                        for (int c = 0; c < C; ++c) {
                            per_point.row(static_cast<Eigen::Index>(j)) +=
                                tv * rep(ain.assign[i], c) * w.row(static_cast<Eigen::Index>(k) * C + c);
                        }
                    }
                }
            }
            Matrix slow = Matrix::Zero(N, Cout);
            for (std::size_t j = 0; j < J; ++j) {
                slow.row(aout.assign[j]) += per_point.row(static_cast<Eigen::Index>(j)) / aout.sizes[aout.assign[j]];
            }
            worst = std::max(worst, relative_error(fast, slow));
        }
        detail = std::to_string(opt.oracle_instances) + " instances";
        return worst;
    });
}

// Compressed network with one cluster per surfel against the uncompressed one.
inline CheckResult check_singleton_exactness(const VerifyOptions& opt)
{
    using namespace verify_detail;
    return timed("singleton_cluster_exactness", 1e-6, [&](std::string& detail) {
        nn::NetworkConfig cfg;
        cfg.mode = nn::NetworkMode::translation;
        cfg.channels = {8, 8, 12, 12, 16, 16};
        cfg.points = 256;
        cfg.initial_spacing = 0.05;
        cfg.seed = derive_seed(opt.seed, 1);
        const auto cloud = test_cloud(ShapeKind::torus, 512, derive_seed(opt.seed, 2));
        nn::Classifier plain(cfg, derive_seed(opt.seed, 3));
        cfg.cluster.representatives = static_cast<int>(cfg.points);
        nn::Classifier comp(cfg, derive_seed(opt.seed, 3));
        nn::PreparedModel a = plain.prepare(cloud, "singleton", 0);
        nn::PreparedModel b = comp.prepare(cloud, "singleton", 0);
        for (const auto& l : b.layers) {
            if (l.M != l.input_assign.size() || l.N != l.output_assign.size()) {
                detail = "clusters are not singletons";
                return std::numeric_limits<double>::infinity();
            }
        }
        detail = std::to_string(cfg.num_layers()) + " layers, " + std::to_string(cfg.points) + " points";
        return relative_error(run(comp, {&b}), run(plain, {&a}));
    });
}

// The 27 shifted tensor-product kernels sum to one near the grid center.
inline CheckResult check_partition_of_unity(const VerifyOptions& opt)
{
    return verify_detail::timed("partition_of_unity", 1e-9, [&](std::string& detail) {
        KernelSpec spec;
        spec.spacing = 0.1;
        const OffsetGrid grid = spatial_offset_grid(spec);
        std::mt19937_64 rng(derive_seed(opt.seed, 0x504f5500ULL));
        std::uniform_real_distribution<double> u(-0.5 * spec.spacing, 0.5 * spec.spacing);
        double worst = 0.0;
        for (int q = 0; q < 1000; ++q) {
            const Vec3 x(u(rng), u(rng), u(rng));
            double sum = 0.0;
            for (const auto& d : grid.vectors) sum += spatial_kernel_value(x - d, spec);
            worst = std::max(worst, std::abs(sum - 1.0));
        }
        detail = "1000 query points";
        return worst;
    });
}

// se3 network outputs and interaction tensors under global rigid motions.
inline std::vector<CheckResult> check_equivariance(const VerifyOptions& opt)
{
    using namespace verify_detail;
    nn::NetworkConfig cfg;
    cfg.mode = nn::NetworkMode::se3_normal_aligned;
    cfg.channels = {8, 16};
    cfg.points = 256;
    cfg.initial_spacing = 0.05;
    cfg.lambda = opt.lambda;
    cfg.cluster.representatives = 32;
    cfg.seed = derive_seed(opt.seed, 4);
    cfg.validate();

    const auto cloud = test_cloud(ShapeKind::cone, 512, derive_seed(opt.seed, 5));
    nn::Classifier net(cfg, derive_seed(opt.seed, 6));
    nn::NetworkConfig plain_cfg = cfg;
    plain_cfg.cluster.representatives = 0;
    nn::Classifier plain(plain_cfg, derive_seed(opt.seed, 6));

    nn::PreparedModel base = net.prepare(cloud, "eq", 0);
    const Matrix y0 = run(net, {&base});
    nn::PrepareOptions keep;
    keep.keep_interactions = true;
    nn::PreparedModel pbase = plain.prepare(cloud, "eq", 0, keep);

    double out_err = 0.0, t_err = 0.0;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(opt.seed, 7));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int m = 0; m < opt.rigid_motions; ++m) {
        const Rotation r = Rotation::uniform_random(rng);
        const Vec3 t(u(rng), u(rng), u(rng));
        const auto moved = transformed(cloud, r.matrix(), t);
        nn::PreparedModel pm = net.prepare(moved, "eq", 0);
        out_err = std::max(out_err, relative_error(run(net, {&pm}), y0));
        nn::PreparedModel pp = plain.prepare(moved, "eq", 0, keep);
        for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
            t_err = std::max(t_err, tensor_difference(*pp.interactions[l], *pbase.interactions[l]));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string detail = std::to_string(opt.rigid_motions) + " rigid motions";
    return {
        CheckResult{"equivariance_log_probs", out_err, 1e-5, out_err <= 1e-5, secs, detail},
        CheckResult{"equivariance_interaction_tensors", t_err, 1e-12, t_err <= 1e-12, 0.0, detail},
    };
}

// Backpropagated parameter gradients against central differences on a small
// compressed network.
inline CheckResult check_gradients(const VerifyOptions& opt)
{
    using namespace verify_detail;
    return timed("parameter_gradients", 1e-4, [&](std::string& detail) {
        nn::NetworkConfig cfg;
        cfg.mode = nn::NetworkMode::translation;
        cfg.channels = {6, 8};
        cfg.points = 64;
        cfg.initial_spacing = 0.15;
        cfg.classes = 3;
        cfg.cluster.representatives = 12;
        cfg.seed = derive_seed(opt.seed, 8);
        nn::Classifier net(cfg, derive_seed(opt.seed, 9));
        nn::PreparedModel a = net.prepare(test_cloud(ShapeKind::box, 128, derive_seed(opt.seed, 10)), "g0", 0);
        nn::PreparedModel b = net.prepare(test_cloud(ShapeKind::sphere, 128, derive_seed(opt.seed, 11)), "g1", 2);
        const std::vector<int> labels{0, 2};
        auto loss = [&](nn::Tape& tape) {
            nn::ForwardOptions fo;
            fo.bn_mode = nn::BnMode::train_frozen;
            const std::vector<nn::PreparedModel*> batch{&a, &b};
            return nn::nll_loss(tape, net.forward(tape, batch, fo), labels);
        };
        auto value = [&] {
            nn::Tape t;
            return t.value(loss(t))(0, 0);
        };
        nn::Tape tape;
        net.zero_grad();
        tape.backward(loss(tape));
        const double h = 1e-4;
        double worst = 0.0;
        std::size_t checked = 0;
        for (nn::Parameter* p : net.parameters()) {
            Matrix num(p->value.rows(), p->value.cols());
            for (Eigen::Index i = 0; i < p->value.size(); ++i) {
                const double keep = p->value.data()[i];
                p->value.data()[i] = keep + h;
                const double up = value();
                p->value.data()[i] = keep - h;
                const double down = value();
                p->value.data()[i] = keep;
                num.data()[i] = (up - down) / (2.0 * h);
            }
            worst = std::max(worst, relative_error(p->grad, num));
            checked += static_cast<std::size_t>(p->value.size());
        }
        detail = std::to_string(checked) + " parameters";
        return worst;
    });
}

inline std::vector<CheckResult> run_verification(const VerifyOptions& opt)
{
    std::vector<CheckResult> out;
    out.push_back(check_compressed_oracle(opt));
    out.push_back(check_singleton_exactness(opt));
    out.push_back(check_partition_of_unity(opt));
    for (auto& r : check_equivariance(opt)) out.push_back(std::move(r));
    out.push_back(check_gradients(opt));
    return out;
}

} // namespace gccpc
