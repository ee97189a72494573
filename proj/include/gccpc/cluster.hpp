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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gccpc {

struct ClusterAssignment {
    std::vector<std::uint32_t> assign;
    std::uint32_t cluster_count = 0;
    std::vector<std::uint32_t> sizes;

    std::size_t size() const noexcept { return assign.size(); }

    static ClusterAssignment from_labels(std::vector<std::uint32_t> labels, std::uint32_t clusters)
    {
        ClusterAssignment a;
        a.assign = std::move(labels);
        a.cluster_count = clusters;
        a.sizes.assign(clusters, 0);
        for (auto m : a.assign) {
            require(m < clusters, "ClusterAssignment: cluster id out of range");
            ++a.sizes[m];
        }
        return a;
    }

    static ClusterAssignment singletons(std::size_t n)
    {
        std::vector<std::uint32_t> ids(n);
        std::iota(ids.begin(), ids.end(), 0u);
        return from_labels(std::move(ids), static_cast<std::uint32_t>(n));
    }

    bool has_empty_cluster() const
    {
        return std::any_of(sizes.begin(), sizes.end(), [](auto s) { return s == 0; });
    }

    // Members of each cluster, ascending point index.
    std::vector<std::vector<std::uint32_t>> members() const
    {
        std::vector<std::vector<std::uint32_t>> out(cluster_count);
        for (std::size_t i = 0; i < assign.size(); ++i) {
            out[assign[i]].push_back(static_cast<std::uint32_t>(i));
        }
        return out;
    }
};

enum class ClusterAlgorithm { kmeans, random_subset, farthest_point };
enum class ClusterTarget { geometry_only, after_interaction, after_weights, after_norm, after_nonlinearity };

inline std::string_view to_string(ClusterAlgorithm a)
{
    switch (a) {
    case ClusterAlgorithm::kmeans: return "kmeans";
    case ClusterAlgorithm::random_subset: return "random_subset";
    case ClusterAlgorithm::farthest_point: return "farthest_point";
    }
    return "?";
}

inline std::string_view to_string(ClusterTarget t)
{
    switch (t) {
    case ClusterTarget::geometry_only: return "geometry_only";
    case ClusterTarget::after_interaction: return "after_interaction";
    case ClusterTarget::after_weights: return "after_weights";
    case ClusterTarget::after_norm: return "after_norm";
    case ClusterTarget::after_nonlinearity: return "after_nonlinearity";
    }
    return "?";
}

inline ClusterAlgorithm parse_cluster_algorithm(std::string_view s)
{
    for (auto a : {ClusterAlgorithm::kmeans, ClusterAlgorithm::random_subset, ClusterAlgorithm::farthest_point}) {
        if (to_string(a) == s) {
            return a;
        }
    }
    if (s == "random") {
        return ClusterAlgorithm::random_subset;
    }
    if (s == "fps") {
        return ClusterAlgorithm::farthest_point;
    }
    throw InvalidArgument("unknown cluster algorithm: " + std::string(s));
}

inline ClusterTarget parse_cluster_target(std::string_view s)
{
    for (auto t : {ClusterTarget::geometry_only, ClusterTarget::after_interaction, ClusterTarget::after_weights,
                   ClusterTarget::after_norm, ClusterTarget::after_nonlinearity}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw InvalidArgument("unknown cluster target: " + std::string(s));
}

struct ClusterConfig {
    ClusterAlgorithm algorithm = ClusterAlgorithm::kmeans;
    int max_iter = 10;
    ClusterTarget target = ClusterTarget::geometry_only;
    int representatives = 0; // per level; 0 = uncompressed
    bool recluster_each_epoch = false;
    std::uint64_t seed = 0;

    void validate() const
    {
        require(max_iter >= 0, "ClusterConfig: max_iter must be >= 0");
        require(representatives >= 0, "ClusterConfig: representatives must be >= 0");
        require(!(recluster_each_epoch && target == ClusterTarget::geometry_only),
                "recluster_each_epoch requires an activation-based cluster target: geometry-only "
                "assignments depend on geometry alone and cannot change between epochs");
    }
};

namespace detail {

// Groups rows that agree after snapping to a grid of 2^-32 times the largest
// magnitude, so that rows equal up to rounding noise count as one (rigidly
// moved inputs must not change which rows are duplicates). Returns an id per
// row (ids follow the sorted order) and the number of distinct rows.
inline std::size_t distinct_row_ids(const Matrix& x, std::vector<std::uint32_t>& ids)
{
    const auto n = static_cast<std::size_t>(x.rows());
    const double scale = x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
    Matrix snapped = x;
    if (scale > 0.0) {
        const double q = std::ldexp(scale, -32);
        snapped = (x / q).array().round().matrix();
    }
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    auto less = [&](std::uint32_t a, std::uint32_t b) {
        for (Eigen::Index c = 0; c < snapped.cols(); ++c) {
            if (snapped(a, c) != snapped(b, c)) {
                return snapped(a, c) < snapped(b, c);
            }
        }
        return false;
    };
    std::stable_sort(order.begin(), order.end(), less);
    ids.assign(n, 0);
    std::size_t distinct = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (r > 0 && less(order[r - 1], order[r])) {
            ++distinct;
        }
        ids[order[r]] = static_cast<std::uint32_t>(distinct);
    }
    return n == 0 ? 0 : distinct + 1;
}

// Nonzeros of each row. Geometry descriptors are mostly zero, and the
// center products only need their nonzero columns.
struct SparseRows {
    std::vector<std::size_t> ptr;
    std::vector<Eigen::Index> col;
    std::vector<double> val;

    // Unset when more than a quarter of the entries are nonzero.
    static std::optional<SparseRows> of(const Matrix& x)
    {
        const auto nnz = static_cast<Eigen::Index>((x.array() != 0.0).count());
        if (4 * nnz > x.size()) {
            return std::nullopt;
        }
        SparseRows s;
        s.ptr.reserve(static_cast<std::size_t>(x.rows()) + 1);
        s.col.reserve(static_cast<std::size_t>(nnz));
        s.val.reserve(static_cast<std::size_t>(nnz));
        s.ptr.push_back(0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                if (x(i, c) != 0.0) {
                    s.col.push_back(c);
                    s.val.push_back(x(i, c));
                }
            }
            s.ptr.push_back(s.col.size());
        }
        return s;
    }
};

// Squared distances rows x centers. Small problems are evaluated directly;
// larger ones through one GEMM, or row by row over the nonzeros of sparse rows.
inline Matrix squared_distances(const Matrix& x, const Matrix& centers, const SparseRows* sparse = nullptr,
                                const Vector* row_norms = nullptr)
{
    const Eigen::Index n = x.rows(), m = centers.rows(), d = x.cols();
    Matrix out(n, m);
    if (n * m * d <= (1 << 16)) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index c = 0; c < m; ++c) {
                out(i, c) = (x.row(i) - centers.row(c)).squaredNorm();
            }
        }
        return out;
    }
    const Vector xn = row_norms ? *row_norms : Vector(x.rowwise().squaredNorm());
    const Vector cn = centers.rowwise().squaredNorm();
    if (sparse) {
        const Matrix ct = centers.transpose();
        out.setZero();
        for (Eigen::Index i = 0; i < n; ++i) {
            auto row = out.row(i);
            for (std::size_t e = sparse->ptr[static_cast<std::size_t>(i)];
                 e < sparse->ptr[static_cast<std::size_t>(i) + 1]; ++e) {
                row.noalias() += sparse->val[e] * ct.row(sparse->col[e]);
            }
        }
        out *= -2.0;
    } else {
        out.noalias() = -2.0 * x * centers.transpose();
    }
    out.colwise() += xn;
    out.rowwise() += cn.transpose();
    out = out.cwiseMax(0.0);
    return out;
}

// Nearest center per row. Distances within rounding noise of the minimum
// (relative to the squared norms involved) count as ties, and ties go to the
// lower center index, so mathematically tied rows are assigned the same way
// however the features were computed.
inline std::vector<std::uint32_t> nearest_center(const Matrix& x, const Matrix& centers,
                                                 const SparseRows* sparse = nullptr,
                                                 const Vector* row_norms = nullptr)
{
    const Matrix dist = squared_distances(x, centers, sparse, row_norms);
    const double cmax = centers.rows() == 0 ? 0.0 : centers.rowwise().squaredNorm().maxCoeff();
    std::vector<std::uint32_t> out(static_cast<std::size_t>(dist.rows()));
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
        const double tol = 1e-10 * ((row_norms ? (*row_norms)(i) : x.row(i).squaredNorm()) + cmax);
        const double best_d = dist.row(i).minCoeff();
        Eigen::Index best = 0;
        while (dist(i, best) > best_d + tol) {
            ++best;
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
    }
    return out;
}

inline void check_cluster_request(const Matrix& features, int clusters, std::vector<std::uint32_t>& ids,
                                  std::size_t& distinct)
{
    require(clusters >= 1, "clustering: cluster count must be >= 1");
    distinct = distinct_row_ids(features, ids);
    if (static_cast<std::size_t>(clusters) > distinct) {
        throw InvalidArgument("clustering: " + std::to_string(clusters) + " clusters requested but only " +
                              std::to_string(distinct) + " distinct feature rows");
    }
}

inline Matrix means_of(const Matrix& x, std::span<const std::uint32_t> labels, Eigen::Index clusters,
                       std::vector<std::uint32_t>& sizes, const SparseRows* sparse = nullptr)
{
    Matrix c = Matrix::Zero(clusters, x.cols());
    sizes.assign(static_cast<std::size_t>(clusters), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (sparse) {
            // Same sums as the dense loop; the skipped terms are zeros.
            for (std::size_t e = sparse->ptr[i]; e < sparse->ptr[i + 1]; ++e) {
                c(labels[i], sparse->col[e]) += sparse->val[e];
            }
        } else {
            c.row(labels[i]) += x.row(static_cast<Eigen::Index>(i));
        }
        ++sizes[labels[i]];
    }
    for (Eigen::Index m = 0; m < clusters; ++m) {
        if (sizes[static_cast<std::size_t>(m)] > 0) {
            c.row(m) /= static_cast<double>(sizes[static_cast<std::size_t>(m)]);
        }
    }
    return c;
}

} // namespace detail

struct KMeansResult {
    ClusterAssignment assignment;
    Matrix centers;
    // Within-cluster SSE after the initial assignment and after each iteration.
    std::vector<double> objective;
    int iterations = 0;
};

inline double within_cluster_sse(const Matrix& x, std::span<const std::uint32_t> labels, const Matrix& centers)
{
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        s += (x.row(static_cast<Eigen::Index>(i)) - centers.row(labels[i])).squaredNorm();
    }
    return s;
}

// Lloyd's algorithm. Centers start as a seeded random subset of distinct rows;
// max_iter = 0 is a single nearest-center pass over those centers.
inline KMeansResult kmeans_detailed(const Matrix& features, int clusters, int max_iter, std::uint64_t seed)
{
    require(max_iter >= 0, "kmeans: max_iter must be >= 0");
    std::vector<std::uint32_t> ids;
    std::size_t distinct = 0;
    detail::check_cluster_request(features, clusters, ids, distinct);
    const auto n = static_cast<std::size_t>(features.rows());
    const Eigen::Index M = clusters;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix centers(M, features.cols());
    {
        std::vector<bool> used(distinct, false);
        Eigen::Index filled = 0;
        for (auto r : order) {
            if (filled == M) {
                break;
            }
            if (!used[ids[r]]) {
                used[ids[r]] = true;
                centers.row(filled++) = features.row(r);
            }
        }
    }

    KMeansResult result;
    const auto sparse = detail::SparseRows::of(features);
    const detail::SparseRows* sp = sparse ? &*sparse : nullptr;
    const Vector norms = features.rowwise().squaredNorm();
    std::vector<std::uint32_t> labels = detail::nearest_center(features, centers, sp, &norms);
    std::vector<std::uint32_t> sizes;
    result.objective.push_back(within_cluster_sse(features, labels, centers));

    // Means of the current labels, carried over from the previous iteration.
    Matrix fresh = detail::means_of(features, labels, M, sizes, sp);
    for (int iter = 0; iter < max_iter; ++iter) {
        centers = std::move(fresh);
        // Re-seed empty clusters at the point farthest from its own center.
        for (Eigen::Index m = 0; m < M; ++m) {
            if (sizes[static_cast<std::size_t>(m)] != 0) {
                continue;
            }
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[labels[i]] <= 1) {
                    continue;
                }
                const double d =
                    (features.row(static_cast<Eigen::Index>(i)) - centers.row(labels[i])).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far == n) {
                break;
            }
            --sizes[labels[far]];
            labels[far] = static_cast<std::uint32_t>(m);
            sizes[static_cast<std::size_t>(m)] = 1;
            centers.row(m) = features.row(static_cast<Eigen::Index>(far));
        }
        auto next = detail::nearest_center(features, centers, sp, &norms);
        const bool changed = next != labels;
        labels = std::move(next);
        result.iterations = iter + 1;
        fresh = detail::means_of(features, labels, M, sizes, sp);
        Matrix eval_centers = centers;
        for (Eigen::Index m = 0; m < M; ++m) {
            if (sizes[static_cast<std::size_t>(m)] > 0) {
                eval_centers.row(m) = fresh.row(m);
            }
        }
        result.objective.push_back(within_cluster_sse(features, labels, eval_centers));
        if (!changed) {
            break;
        }
    }

    // A final pass may leave a cluster empty; move the worst-fit point into it.
    centers = detail::means_of(features, labels, M, sizes, sp);
    for (Eigen::Index m = 0; m < M; ++m) {
        if (sizes[static_cast<std::size_t>(m)] != 0) {
            continue;
        }
        std::size_t far = n;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (sizes[labels[i]] <= 1) {
                continue;
            }
            const double d = (features.row(static_cast<Eigen::Index>(i)) - centers.row(labels[i])).squaredNorm();
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        --sizes[labels[far]];
        labels[far] = static_cast<std::uint32_t>(m);
        sizes[static_cast<std::size_t>(m)] = 1;
        centers.row(m) = features.row(static_cast<Eigen::Index>(far));
    }
    result.centers = detail::means_of(features, labels, M, sizes, sp);
    result.assignment = ClusterAssignment::from_labels(std::move(labels), static_cast<std::uint32_t>(M));
    return result;
}

inline ClusterAssignment kmeans_cluster(const Matrix& features, int clusters, int max_iter, std::uint64_t seed)
{
    return kmeans_detailed(features, clusters, max_iter, seed).assignment;
}

inline ClusterAssignment random_subset_cluster(const Matrix& features, int clusters, std::uint64_t seed)
{
    return kmeans_cluster(features, clusters, 0, seed);
}

// Greedy farthest-point centers starting from row `first`; ties go to the
// lower row index.
inline std::vector<std::uint32_t> farthest_point_centers(const Matrix& features, int clusters, std::uint32_t first)
{
    const auto n = static_cast<std::size_t>(features.rows());
    require(first < n, "farthest_point_centers: first index out of range");
    std::vector<std::uint32_t> chosen{first};
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist[i] = (features.row(static_cast<Eigen::Index>(i)) - features.row(first)).squaredNorm();
    }
    while (chosen.size() < static_cast<std::size_t>(clusters)) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (dist[i] > dist[best]) {
                best = i;
            }
        }
        chosen.push_back(static_cast<std::uint32_t>(best));
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (features.row(static_cast<Eigen::Index>(i)) -
                                         features.row(static_cast<Eigen::Index>(best)))
                                            .squaredNorm());
        }
    }
    return chosen;
}

inline ClusterAssignment farthest_point_cluster(const Matrix& features, int clusters, std::uint64_t seed)
{
    std::vector<std::uint32_t> ids;
    std::size_t distinct = 0;
    detail::check_cluster_request(features, clusters, ids, distinct);
    std::mt19937_64 rng(seed);
    const auto first = static_cast<std::uint32_t>(
        std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(features.rows()) - 1)(rng));
    const auto picks = farthest_point_centers(features, clusters, first);
    Matrix centers(clusters, features.cols());
    for (std::size_t m = 0; m < picks.size(); ++m) {
        centers.row(static_cast<Eigen::Index>(m)) = features.row(picks[m]);
    }
    return ClusterAssignment::from_labels(detail::nearest_center(features, centers),
                                          static_cast<std::uint32_t>(clusters));
}

// Row m = mean of the member rows of cluster m.
inline Matrix cluster_means(const Matrix& features, const ClusterAssignment& a)
{
    require(a.size() == static_cast<std::size_t>(features.rows()),
            "cluster_means: assignment does not cover the feature rows");
    std::vector<std::uint32_t> sizes;
    Matrix means = detail::means_of(features, a.assign, a.cluster_count, sizes);
    for (auto s : sizes) {
        if (s == 0) {
            throw InvalidArgument("cluster_means: empty cluster");
        }
    }
    return means;
}

// Dispatch on the configured algorithm. Asking for at least as many clusters
// as there are distinct rows yields one cluster per distinct row.
inline ClusterAssignment cluster_features(const Matrix& features, int clusters, const ClusterConfig& cfg,
                                          std::uint64_t seed)
{
    std::vector<std::uint32_t> ids;
    const std::size_t distinct = detail::distinct_row_ids(features, ids);
    if (static_cast<std::size_t>(clusters) >= static_cast<std::size_t>(features.rows()) &&
        distinct == static_cast<std::size_t>(features.rows())) {
        return ClusterAssignment::singletons(distinct);
    }
    const int m = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(clusters), distinct));
    switch (cfg.algorithm) {
    case ClusterAlgorithm::kmeans: return kmeans_cluster(features, m, cfg.max_iter, seed);
    case ClusterAlgorithm::random_subset: return random_subset_cluster(features, m, seed);
    case ClusterAlgorithm::farthest_point: return farthest_point_cluster(features, m, seed);
    }
    throw InvalidArgument("cluster_features: bad algorithm");
}

} // namespace gccpc
