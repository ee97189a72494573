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

#pragma once

#include "gccpc/common.hpp"
#include "gccpc/group.hpp"
#include "gccpc/kernel.hpp"
#include "gccpc/spatial_hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace gccpc {

// Values at or below this are not stored.
inline constexpr double interaction_zero_threshold = 1e-12;

// Sparse T[i, j, k], stored as compressed rows over (j, k) with input indices
// ascending inside a row; i.e. entries are sorted by (j, k, i).
class SparseInteraction {
  public:
    struct Entry {
        std::uint32_t i, j, k;
        double value;
    };

    SparseInteraction() = default;
    SparseInteraction(std::size_t inputs, std::size_t outputs, std::size_t offsets)
        : inputs_(inputs), outputs_(outputs), offsets_(offsets), row_ptr_(outputs * offsets + 1, 0)
    {
    }

    std::size_t num_inputs() const noexcept { return inputs_; }
    std::size_t num_outputs() const noexcept { return outputs_; }
    std::size_t num_offsets() const noexcept { return offsets_; }
    std::size_t nnz() const noexcept { return value_.size(); }
    std::size_t bytes() const noexcept
    {
        return value_.size() * (sizeof(double) + sizeof(std::uint32_t)) + row_ptr_.size() * sizeof(std::size_t);
    }

    std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
    std::span<const std::uint32_t> input_index() const noexcept { return input_; }
    std::span<const double> values() const noexcept { return value_; }

    template <typename Fn>
    void for_each_entry(Fn&& fn) const
    {
        for (std::size_t row = 0; row + 1 < row_ptr_.size(); ++row) {
            const auto j = static_cast<std::uint32_t>(row / offsets_);
            const auto k = static_cast<std::uint32_t>(row % offsets_);
            for (std::size_t e = row_ptr_[row]; e < row_ptr_[row + 1]; ++e) {
                fn(input_[e], j, k, value_[e]);
            }
        }
    }

    std::vector<Entry> entries() const
    {
        std::vector<Entry> out;
        out.reserve(nnz());
        for_each_entry([&](std::uint32_t i, std::uint32_t j, std::uint32_t k, double v) {
            out.push_back({i, j, k, v});
        });
        return out;
    }

    // Builder interface: rows must be appended in (j, k) order.
    class RowWriter {
      public:
        explicit RowWriter(SparseInteraction& t) : t_(t) {}
        void push(std::uint32_t i, double v)
        {
            t_.input_.push_back(i);
            t_.value_.push_back(v);
        }
        void end_row() { t_.row_ptr_[++row_] = t_.value_.size(); }

      private:
        SparseInteraction& t_;
        std::size_t row_ = 0;
    };

  private:
    std::size_t inputs_ = 0, outputs_ = 0, offsets_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::uint32_t> input_;
    std::vector<double> value_;
};

// All (i, j) with |outputs[j] - inputs[i]| <= radius, sorted by (j, i).
inline std::vector<std::pair<std::uint32_t, std::uint32_t>>
neighbor_candidates(std::span<const Vec3> inputs, std::span<const Vec3> outputs, double radius)
{
    require(radius > 0.0, "neighbor_candidates: radius must be positive");
    SpatialHash grid(radius, inputs);
    const double r2 = radius * radius;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::vector<std::uint32_t> near;
    for (std::size_t j = 0; j < outputs.size(); ++j) {
        near.clear();
        grid.for_each_candidate(outputs[j], radius, [&](std::uint32_t i) {
            if ((inputs[i] - outputs[j]).squaredNorm() <= r2) {
                near.push_back(i);
            }
        });
        std::sort(near.begin(), near.end());
        for (auto i : near) {
            pairs.emplace_back(i, static_cast<std::uint32_t>(j));
        }
    }
    return pairs;
}

namespace detail {

inline void sorted_neighbors(const SpatialHash& grid, std::span<const Vec3> inputs, const Vec3& center,
                             double radius, std::vector<std::uint32_t>& out)
{
    out.clear();
    const double r2 = radius * radius;
    grid.for_each_candidate(center, radius, [&](std::uint32_t i) {
        if ((inputs[i] - center).squaredNorm() <= r2) {
            out.push_back(i);
        }
    });
    std::sort(out.begin(), out.end());
}

} // namespace detail

// Streams the rows of T[i, j, k] = sigma(p'_j + d_k - p_i) (tensor-product
// spatial kernel) into writer.push(i, v) / writer.end_row(), in (j, k) order.
template <typename Writer>
void visit_interaction_translation(std::span<const Vec3> inputs, std::span<const Vec3> outputs,
                                   const OffsetGrid& grid, const KernelSpec& spec, Writer& writer)
{
    require(spec.mode == KernelMode::tensor_product_spatial,
            "build_interaction_translation: spatial kernel spec required");
    require(!grid.is_group(), "build_interaction_translation: spatial offset grid required");
    spec.validate();
    const std::size_t K = grid.size();
    if (inputs.empty()) {
        for (std::size_t r = 0; r < outputs.size() * K; ++r) {
            writer.end_row();
        }
        return;
    }
    const double radius = spec.support_radius() * std::sqrt(3.0) + grid.max_translation();
    SpatialHash hash(radius, inputs);
    const double inv = 1.0 / spec.spacing;
    std::vector<std::uint32_t> near;

    // A grid produced by spatial_offset_grid is separable: 1D spline values
    // per axis and offset are computed once per candidate.
    const std::size_t G = grid.axis_values.size();
    const bool separable = G > 0 && G * G * G == K;
    std::vector<double> bx, by, bz;
    std::vector<std::uint32_t> list_a;
    std::vector<std::pair<std::uint32_t, double>> list_ab;

    // Separable support is a box, which is much tighter than the ball.
    double box = 0.0;
    for (double o : grid.axis_values) {
        box = std::max(box, std::abs(o));
    }
    box += spec.support_radius();

    for (std::size_t j = 0; j < outputs.size(); ++j) {
        if (separable) {
            near.clear();
            hash.for_each_candidate(outputs[j], box, [&](std::uint32_t i) {
                if (((inputs[i] - outputs[j]).cwiseAbs().array() < box).all()) {
                    near.push_back(i);
                }
            });
            std::sort(near.begin(), near.end());
        } else {
            detail::sorted_neighbors(hash, inputs, outputs[j], radius, near);
        }
        const std::size_t n = near.size();
        if (separable) {
            bx.assign(G * n, 0.0);
            by.assign(G * n, 0.0);
            bz.assign(G * n, 0.0);
            for (std::size_t c = 0; c < n; ++c) {
                const Vec3 diff = outputs[j] - inputs[near[c]];
                for (std::size_t a = 0; a < G; ++a) {
                    const double o = grid.axis_values[a];
                    bx[a * n + c] = bspline_quadratic((diff.x() + o) * inv);
                    by[a * n + c] = bspline_quadratic((diff.y() + o) * inv);
                    bz[a * n + c] = bspline_quadratic((diff.z() + o) * inv);
                }
            }
            // Candidates are narrowed axis by axis so that only nonzero
            // products are visited; the order within a row stays ascending.
            for (std::size_t a = 0; a < G; ++a) {
                list_a.clear();
                for (std::size_t c = 0; c < n; ++c) {
                    if (bx[a * n + c] > 0.0) list_a.push_back(static_cast<std::uint32_t>(c));
                }
                for (std::size_t b = 0; b < G; ++b) {
                    list_ab.clear();
                    for (auto c : list_a) {
                        const double v = bx[a * n + c] * by[b * n + c];
                        if (v > 0.0) list_ab.emplace_back(c, v);
                    }
                    for (std::size_t cz = 0; cz < G; ++cz) {
                        for (const auto& [c, vab] : list_ab) {
                            const double v = vab * bz[cz * n + c];
                            if (v > interaction_zero_threshold) {
                                writer.push(near[c], v);
                            }
                        }
                        writer.end_row();
                    }
                }
            }
        } else {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t c = 0; c < n; ++c) {
                    const double v =
                        spatial_kernel_value(outputs[j] + grid.vectors[k] - inputs[near[c]], spec);
                    if (v > interaction_zero_threshold) {
                        writer.push(near[c], v);
                    }
                }
                writer.end_row();
            }
        }
    }
}

inline SparseInteraction build_interaction_translation(std::span<const Vec3> inputs,
                                                       std::span<const Vec3> outputs,
                                                       const OffsetGrid& grid, const KernelSpec& spec)
{
    SparseInteraction t(inputs.size(), outputs.size(), grid.size());
    SparseInteraction::RowWriter writer(t);
    visit_interaction_translation(inputs, outputs, grid, spec, writer);
    return t;
}

// Streams T[i, j, k] = B(d_SE3(inverse(g_i) o g'_j o delta_k) / spacing) row
// by row, like visit_interaction_translation.
template <typename Writer>
void visit_interaction_group(std::span<const Pose> inputs, std::span<const Pose> outputs, const OffsetGrid& grid,
                             const KernelSpec& spec, Writer& writer)
{
    require(spec.mode == KernelMode::radial_group, "build_interaction_group: radial group kernel spec required");
    require(grid.is_group(), "build_interaction_group: group offset grid required");
    spec.validate();
    const std::size_t K = grid.size();

    std::vector<Vec3> in_pos(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        in_pos[i] = inputs[i].translation;
    }
    const double support = spec.support_radius();
    const double support2 = support * support;
    const double radius = support + grid.max_translation();
    const double inv = 1.0 / spec.spacing;

    struct Hit {
        std::uint32_t k, i;
        double v;
    };
    std::vector<Hit> hits;
    std::vector<std::uint32_t> near;
    std::vector<std::size_t> per_k(K + 1);
    std::vector<Hit> sorted;
    std::unique_ptr<SpatialHash> hash;
    if (!inputs.empty()) {
        hash = std::make_unique<SpatialHash>(radius, in_pos);
    }

    for (std::size_t j = 0; j < outputs.size(); ++j) {
        hits.clear();
        if (hash) {
            detail::sorted_neighbors(*hash, in_pos, outputs[j].translation, radius, near);
        } else {
            near.clear();
        }
        const Mat3& rj = outputs[j].rotation.matrix();
        for (auto i : near) {
            const Mat3 rin_t = inputs[i].rotation.matrix().transpose();
            const Mat3 a = rin_t * rj;
            const Vec3 b = rin_t * (outputs[j].translation - inputs[i].translation);
            for (std::size_t k = 0; k < K; ++k) {
                const Vec3 trans = a * grid.poses[k].translation + b;
                const double dt2 = trans.squaredNorm();
                if (dt2 >= support2) {
                    continue;
                }
                const double theta = rotation_angle_of(a * grid.poses[k].rotation.matrix());
                const double d2 = dt2 + spec.lambda * theta * theta;
                if (d2 >= support2) {
                    continue;
                }
                const double v = bspline_quadratic(std::sqrt(d2) * inv);
                if (v > interaction_zero_threshold) {
                    hits.push_back({static_cast<std::uint32_t>(k), i, v});
                }
            }
        }
        // Bucket by k; i order within a bucket is preserved (near is sorted).
        std::fill(per_k.begin(), per_k.end(), 0);
        for (const auto& h : hits) {
            ++per_k[h.k + 1];
        }
        for (std::size_t k = 0; k < K; ++k) {
            per_k[k + 1] += per_k[k];
        }
        sorted.resize(hits.size());
        for (const auto& h : hits) {
            sorted[per_k[h.k]++] = h;
        }
        std::size_t e = 0;
        for (std::size_t k = 0; k < K; ++k) {
            while (e < sorted.size() && sorted[e].k == k) {
                writer.push(sorted[e].i, sorted[e].v);
                ++e;
            }
            writer.end_row();
        }
    }
}

inline SparseInteraction build_interaction_group(std::span<const Pose> inputs, std::span<const Pose> outputs,
                                                 const OffsetGrid& grid, const KernelSpec& spec)
{
    SparseInteraction t(inputs.size(), outputs.size(), grid.size());
    SparseInteraction::RowWriter writer(t);
    visit_interaction_group(inputs, outputs, grid, spec, writer);
    return t;
}

// Counts entries without storing them.
struct NnzCounter {
    std::uint64_t nnz = 0;
    std::uint64_t rows = 0;
    void push(std::uint32_t, double) { ++nnz; }
    void end_row() { ++rows; }
};

namespace detail {

// Column blocks of fixed width keep the accumulator in registers. Each
// output element sees the same terms in the same order as a plain loop.
template <int W>
inline void gather_block(double* dst, const double* src, Eigen::Index stride, const std::uint32_t* in,
                         const double* val, std::size_t n)
{
    using Block = Eigen::Matrix<double, 1, W>;
    Block acc = Eigen::Map<const Block>(dst);
    for (std::size_t e = 0; e < n; ++e) {
        acc.noalias() += val[e] * Eigen::Map<const Block>(src + in[e] * stride);
    }
    Eigen::Map<Block> out(dst);
    out = acc;
}

template <int W>
inline void scatter_block(double* dst, Eigen::Index stride, const double* src, const std::uint32_t* in,
                          const double* val, std::size_t n)
{
    using Block = Eigen::Matrix<double, 1, W>;
    const Block s = Eigen::Map<const Block>(src);
    for (std::size_t e = 0; e < n; ++e) {
        Eigen::Map<Block> out(dst + in[e] * stride);
        out.noalias() += val[e] * s;
    }
}

// Calls f.template operator()<W>(c) for column blocks covering [0, C).
template <class F>
inline void for_column_blocks(Eigen::Index C, F&& f)
{
    Eigen::Index c = 0;
    for (; c + 16 <= C; c += 16) {
        f.template operator()<16>(c);
    }
    for (; c + 8 <= C; c += 8) {
        f.template operator()<8>(c);
    }
    for (; c < C; ++c) {
        f.template operator()<1>(c);
    }
}

} // namespace detail

// h[j, k*C + c] = sum_i T[i, j, k] * phi[i, c]
inline Matrix apply_interaction(const SparseInteraction& t, const Matrix& phi)
{
    if (static_cast<std::size_t>(phi.rows()) != t.num_inputs()) {
        throw InvalidArgument("apply_interaction: feature rows do not match interaction inputs");
    }
    const Eigen::Index C = phi.cols();
    const std::size_t K = t.num_offsets();
    Matrix h = Matrix::Zero(static_cast<Eigen::Index>(t.num_outputs()), static_cast<Eigen::Index>(K) * C);
    const auto rp = t.row_ptr();
    const auto in = t.input_index();
    const auto val = t.values();
    for (std::size_t row = 0; row + 1 < rp.size(); ++row) {
        const std::size_t b = rp[row];
        const std::size_t n = rp[row + 1] - b;
        if (n == 0) {
            continue;
        }
        double* dst = h.data() + static_cast<Eigen::Index>(row / K) * h.cols() + static_cast<Eigen::Index>(row % K) * C;
        detail::for_column_blocks(C, [&]<int W>(Eigen::Index c) {
            detail::gather_block<W>(dst + c, phi.data() + c, C, in.data() + b, val.data() + b, n);
        });
    }
    return h;
}

// Adjoint of apply_interaction: g_phi[i, c] = sum_{j,k} T[i, j, k] * g_h[j, k*C + c]
inline Matrix apply_interaction_adjoint(const SparseInteraction& t, const Matrix& grad_h, Eigen::Index channels)
{
    const std::size_t K = t.num_offsets();
    require(static_cast<std::size_t>(grad_h.rows()) == t.num_outputs() &&
                grad_h.cols() == static_cast<Eigen::Index>(K) * channels,
            "apply_interaction_adjoint: gradient shape mismatch");
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(t.num_inputs()), channels);
    const auto rp = t.row_ptr();
    const auto in = t.input_index();
    const auto val = t.values();
    for (std::size_t row = 0; row + 1 < rp.size(); ++row) {
        const std::size_t b = rp[row];
        const std::size_t n = rp[row + 1] - b;
        if (n == 0) {
            continue;
        }
        const double* src = grad_h.data() + static_cast<Eigen::Index>(row / K) * grad_h.cols() +
                            static_cast<Eigen::Index>(row % K) * channels;
        detail::for_column_blocks(channels, [&]<int W>(Eigen::Index c) {
            detail::scatter_block<W>(g.data() + c, channels, src + c, in.data() + b, val.data() + b, n);
        });
    }
    return g;
}

} // namespace gccpc
