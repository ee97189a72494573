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

#include "gccpc/cluster.hpp"
#include "gccpc/common.hpp"
#include "gccpc/interaction.hpp"

#include <optional>
#include <vector>

namespace gccpc {

// H[m, n, k] = 1/|C'_n| * sum_{j in C'_n} sum_{i in C_m} T[i, j, k]
//
// Stored dense, m-major: as an M x (N*K) row-major matrix, row m holds
// H[m, n, k] at column n*K + k. That layout makes the first contraction a
// single GEMM whose result is already the N x (K*C) input of the second.
struct CompressedInteraction {
    std::size_t M = 0, N = 0, K = 0;
    Matrix tensor; // M x (N*K)
    ClusterAssignment input_assign;
    ClusterAssignment output_assign;

    double at(std::size_t m, std::size_t n, std::size_t k) const
    {
        return tensor(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n * K + k));
    }
};

inline CompressedInteraction compress_interaction(const SparseInteraction& t, const ClusterAssignment& in,
                                                  const ClusterAssignment& out)
{
    if (in.size() != t.num_inputs() || out.size() != t.num_outputs()) {
        throw InvalidArgument("compress_interaction: assignment lengths do not match the interaction tensor");
    }
    require(!in.has_empty_cluster() && !out.has_empty_cluster(), "compress_interaction: empty cluster");
    CompressedInteraction h;
    h.M = in.cluster_count;
    h.N = out.cluster_count;
    h.K = t.num_offsets();
    h.tensor = Matrix::Zero(static_cast<Eigen::Index>(h.M), static_cast<Eigen::Index>(h.N * h.K));
    std::vector<double> inv_size(h.N);
    for (std::size_t n = 0; n < h.N; ++n) {
        inv_size[n] = 1.0 / static_cast<double>(out.sizes[n]);
    }
    const std::size_t K = h.K;
    t.for_each_entry([&](std::uint32_t i, std::uint32_t j, std::uint32_t k, double v) {
        const std::uint32_t n = out.assign[j];
        h.tensor(in.assign[i], static_cast<Eigen::Index>(n * K + k)) += v * inv_size[n];
    });
    h.input_assign = in;
    h.output_assign = out;
    return h;
}

inline Matrix one_hot(const ClusterAssignment& a)
{
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(a.size()), a.cluster_count);
    for (std::size_t i = 0; i < a.size(); ++i) {
        x(static_cast<Eigen::Index>(i), a.assign[i]) = 1.0;
    }
    return x;
}

// Weight-free clustering features for the outputs of layer `layer_index`.
// Layer 0 sees a single constant input channel, so row j is
// [sum_i T[i, j, 0], ..., sum_i T[i, j, K-1]]. Later layers feed one-hot
// encodings of the previous layer's cluster ids through T, giving K * M_prev
// columns.
inline Matrix geometry_descriptor_features(int layer_index, const SparseInteraction& t,
                                           const std::optional<ClusterAssignment>& prev_assign)
{
    require(layer_index >= 0, "geometry_descriptor_features: negative layer index");
    if (layer_index == 0) {
        return apply_interaction(t, Matrix::Ones(static_cast<Eigen::Index>(t.num_inputs()), 1));
    }
    if (!prev_assign) {
        throw InvalidArgument("geometry_descriptor_features: layers after the first need the previous assignment");
    }
    // apply_interaction(t, one_hot(prev)) without the zero products.
    const auto& assign = prev_assign->assign;
    require(assign.size() == t.num_inputs(), "geometry_descriptor_features: assignment does not match the inputs");
    const auto M = static_cast<Eigen::Index>(prev_assign->cluster_count);
    const std::size_t K = t.num_offsets();
    Matrix h = Matrix::Zero(static_cast<Eigen::Index>(t.num_outputs()), static_cast<Eigen::Index>(K) * M);
    const auto rp = t.row_ptr();
    const auto in = t.input_index();
    const auto val = t.values();
    for (std::size_t row = 0; row + 1 < rp.size(); ++row) {
        double* dst = h.data() + static_cast<Eigen::Index>(row) * M;
        for (std::size_t e = rp[row]; e < rp[row + 1]; ++e) {
            dst[assign[in[e]]] += val[e];
        }
    }
    return h;
}

} // namespace gccpc
