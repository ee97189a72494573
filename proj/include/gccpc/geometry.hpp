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
#include "gccpc/spatial_hash.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gccpc {

struct PointCloud {
    std::vector<Vec3> positions;
    std::optional<std::vector<Vec3>> normals;
    std::optional<std::vector<Vec3>> colors;
    std::optional<int> label;

    std::size_t size() const noexcept { return positions.size(); }
    bool empty() const noexcept { return positions.empty(); }
    bool has_normals() const noexcept { return normals.has_value(); }
    bool has_colors() const noexcept { return colors.has_value(); }

    // Rows in the given order, carrying normals/colors/label along.
    PointCloud subset(std::span<const std::uint32_t> indices) const
    {
        PointCloud out;
        out.label = label;
        out.positions.reserve(indices.size());
        for (auto i : indices) {
            out.positions.push_back(positions.at(i));
        }
        if (normals) {
            out.normals.emplace();
            out.normals->reserve(indices.size());
            for (auto i : indices) {
                out.normals->push_back((*normals)[i]);
            }
        }
        if (colors) {
            out.colors.emplace();
            out.colors->reserve(indices.size());
            for (auto i : indices) {
                out.colors->push_back((*colors)[i]);
            }
        }
        return out;
    }

    Vec3 centroid() const
    {
        Vec3 c = Vec3::Zero();
        for (const auto& p : positions) {
            c += p;
        }
        return positions.empty() ? c : Vec3(c / static_cast<double>(positions.size()));
    }
};

// Rigidly transforms positions (R p + t) and normals (R n).
inline PointCloud transformed(const PointCloud& cloud, const Mat3& rotation, const Vec3& translation)
{
    PointCloud out = cloud;
    for (auto& p : out.positions) {
        p = rotation * p + translation;
    }
    if (out.normals) {
        for (auto& n : *out.normals) {
            n = rotation * n;
        }
    }
    return out;
}

inline PointCloud normalize_unit_cube(const PointCloud& cloud)
{
    require(!cloud.empty(), "normalize_unit_cube: empty cloud");
    Vec3 lo = cloud.positions.front();
    Vec3 hi = lo;
    for (const auto& p : cloud.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0.0) || !std::isfinite(extent)) {
        throw InvalidArgument("normalize_unit_cube: degenerate (zero-extent) cloud");
    }
    const Vec3 center = 0.5 * (lo + hi);
    const double scale = 1.0 / extent;
    PointCloud out = cloud;
    for (auto& p : out.positions) {
        p = (p - center) * scale;
    }
    return out;
}

namespace detail {

// Greedy dart throwing in a fixed visiting order: a point is accepted when no
// earlier accepted point lies closer than `radius`.
inline std::vector<std::uint32_t> dart_throw(std::span<const Vec3> points,
                                             std::span<const std::uint32_t> order, double radius,
                                             std::size_t stop_after)
{
    std::vector<std::uint32_t> accepted;
    if (radius <= 0.0) {
        accepted.assign(order.begin(), order.begin() + std::min(order.size(), stop_after));
        return accepted;
    }
    const double r2 = radius * radius;

    // Dense cell grid over the bounding box with per-cell linked lists; the
    // hash grid is the fallback when the box holds too many cells.
    Vec3 lo = points[order.front()], hi = lo;
    for (auto idx : order) {
        lo = lo.cwiseMin(points[idx]);
        hi = hi.cwiseMax(points[idx]);
    }
    const double inv = 1.0 / radius;
    const Eigen::Array3d extent = ((hi - lo) * inv).array().floor() + 1.0;
    if (extent.prod() <= static_cast<double>(std::max<std::size_t>(8 * order.size(), 1u << 16))) {
        const std::array<std::int64_t, 3> dim{static_cast<std::int64_t>(extent[0]),
                                              static_cast<std::int64_t>(extent[1]),
                                              static_cast<std::int64_t>(extent[2])};
        std::vector<std::int32_t> head(static_cast<std::size_t>(dim[0] * dim[1] * dim[2]), -1);
        std::vector<std::int32_t> next;
        std::vector<std::uint32_t> stored;
        auto cell = [&](double v, int a) {
            return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((v - lo[a]) * inv)), 0, dim[a] - 1);
        };
        for (auto idx : order) {
            const Vec3& p = points[idx];
            const std::int64_t cx = cell(p.x(), 0), cy = cell(p.y(), 1), cz = cell(p.z(), 2);
            bool blocked = false;
            for (std::int64_t x = std::max<std::int64_t>(cx - 1, 0); !blocked && x <= std::min(cx + 1, dim[0] - 1); ++x) {
                for (std::int64_t y = std::max<std::int64_t>(cy - 1, 0); !blocked && y <= std::min(cy + 1, dim[1] - 1);
                     ++y) {
                    for (std::int64_t z = std::max<std::int64_t>(cz - 1, 0);
                         !blocked && z <= std::min(cz + 1, dim[2] - 1); ++z) {
                        for (std::int32_t e = head[static_cast<std::size_t>((x * dim[1] + y) * dim[2] + z)]; e >= 0;
                             e = next[static_cast<std::size_t>(e)]) {
                            if ((points[stored[static_cast<std::size_t>(e)]] - p).squaredNorm() < r2) {
                                blocked = true;
                                break;
                            }
                        }
                    }
                }
            }
            if (blocked) {
                continue;
            }
            const auto c = static_cast<std::size_t>((cx * dim[1] + cy) * dim[2] + cz);
            next.push_back(head[c]);
            head[c] = static_cast<std::int32_t>(stored.size());
            stored.push_back(idx);
            accepted.push_back(idx);
            if (accepted.size() >= stop_after) {
                break;
            }
        }
        return accepted;
    }

    SpatialHash grid(radius);
    for (auto idx : order) {
        const Vec3& p = points[idx];
        bool blocked = false;
        grid.for_each_candidate(p, radius, [&](std::uint32_t other) {
            if (!blocked && (points[other] - p).squaredNorm() < r2) {
                blocked = true;
            }
        });
        if (blocked) {
            continue;
        }
        grid.insert(idx, p);
        accepted.push_back(idx);
        if (accepted.size() >= stop_after) {
            break;
        }
    }
    return accepted;
}

} // namespace detail

// Indices (into the input) of a Poisson-disc subset of exactly target_count
// points, in ascending order.
inline std::vector<std::uint32_t> poisson_disc_indices(std::span<const Vec3> points,
                                                       std::size_t target_count,
                                                       std::uint64_t seed)
{
    const std::size_t n = points.size();
    require(target_count >= 1, "poisson_disc_downsample: target_count must be >= 1");
    require(target_count <= n, "poisson_disc_downsample: target_count exceeds cloud size");
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    if (target_count == n) {
        return all;
    }

    std::vector<std::uint32_t> order = all;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // The bracket must not depend on the frame, or the chosen subset would
    // change under rigid motions.
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) {
        centroid += p;
    }
    centroid /= static_cast<double>(n);
    double extent = 0.0;
    for (const auto& p : points) {
        extent = std::max(extent, (p - centroid).norm());
    }
    // count(lo_r) >= target > count(hi_r); a radius accepting exactly the
    // target count ends the search.
    // Counts fall off roughly like r^-2, so the next radius is interpolated in
    // log-log space and kept inside the inner 80% of the bracket; every
    // fourth step bisects to guarantee progress.
    double lo_r = 0.0;
    double hi_r = 2.0 * extent + 1.0;
    double lo_n = static_cast<double>(n);
    double hi_n = 1.0;
    for (int iter = 0; iter < 100 && hi_r - lo_r > 1e-12 * (1.0 + hi_r); ++iter) {
        double mid = 0.5 * (lo_r + hi_r);
        if (iter % 4 != 3) {
            const double t = static_cast<double>(target_count) + 0.5;
            const double guess = lo_r > 0.0 ? std::exp(std::log(lo_r) + std::log(hi_r / lo_r) *
                                                                            std::log(lo_n / t) /
                                                                            std::log(lo_n / hi_n))
                                            : hi_r * std::sqrt(hi_n / t);
            const double w = hi_r - lo_r;
            mid = std::clamp(guess, lo_r + 0.1 * w, hi_r - 0.1 * w);
        }
        const std::size_t got = detail::dart_throw(points, order, mid, std::numeric_limits<std::size_t>::max()).size();
        if (got >= target_count) {
            lo_r = mid;
            lo_n = static_cast<double>(got);
        } else {
            hi_r = mid;
            hi_n = static_cast<double>(std::max<std::size_t>(got, 1));
        }
        if (got == target_count) {
            break;
        }
    }
    auto picked = detail::dart_throw(points, order, lo_r, target_count);
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline PointCloud poisson_disc_downsample(const PointCloud& cloud, std::size_t target_count,
                                          std::uint64_t seed)
{
    const auto idx = poisson_disc_indices(cloud.positions, target_count, seed);
    return cloud.subset(idx);
}

struct SamplingHierarchy {
    std::vector<PointCloud> levels;
    std::vector<std::size_t> level_counts;
    // parent_index[l][r]: row of level l-1 (or of the source cloud, for l=0)
    // that level l's row r was drawn from.
    std::vector<std::vector<std::uint32_t>> parent_index;
};

inline SamplingHierarchy build_hierarchy(const PointCloud& cloud, std::span<const std::size_t> counts,
                                         std::uint64_t seed)
{
    require(!counts.empty(), "build_hierarchy: empty count schedule");
    for (std::size_t l = 1; l < counts.size(); ++l) {
        require(counts[l] < counts[l - 1], "build_hierarchy: counts must be strictly decreasing");
    }
    require(counts.front() <= cloud.size(), "build_hierarchy: first level exceeds cloud size");

    SamplingHierarchy h;
    h.level_counts.assign(counts.begin(), counts.end());
    h.levels.reserve(counts.size());
    const PointCloud* source = &cloud;
    for (std::size_t l = 0; l < counts.size(); ++l) {
        auto idx = poisson_disc_indices(source->positions, counts[l], derive_seed(seed, 0x4c45564cULL, l));
        h.levels.push_back(source->subset(idx));
        h.parent_index.push_back(std::move(idx));
        source = &h.levels.back();
    }
    return h;
}

inline PointCloud orient_normals(const PointCloud& cloud)
{
    require(cloud.has_normals(), "orient_normals: cloud has no normals");
    PointCloud out = cloud;
    const Vec3 c = cloud.centroid();
    for (std::size_t i = 0; i < out.size(); ++i) {
        Vec3& n = (*out.normals)[i];
        if (n.dot(out.positions[i] - c) < 0.0) {
            n = -n;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeKind { sphere, box, cylinder, torus, cone, two_spheres };

inline constexpr std::array<ShapeKind, 6> all_shape_kinds = {
    ShapeKind::sphere, ShapeKind::box,  ShapeKind::cylinder,
    ShapeKind::torus,  ShapeKind::cone, ShapeKind::two_spheres};

inline std::string_view shape_name(ShapeKind kind)
{
    switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cone: return "cone";
    case ShapeKind::two_spheres: return "two-spheres";
    }
    return "unknown";
}

inline ShapeKind parse_shape_kind(std::string_view name)
{
    for (auto k : all_shape_kinds) {
        if (shape_name(k) == name) {
            return k;
        }
    }
    throw InvalidArgument("unknown shape kind: " + std::string(name));
}

// Shape parameters drawn per seed; exposed so tests can evaluate implicit forms.
struct ShapeParams {
    double radius = 1.0;         // sphere, cylinder, cone base, first sphere
    double radius2 = 0.5;        // torus tube, second sphere
    double major_radius = 1.0;   // torus
    double height = 1.0;         // cylinder, cone
    Vec3 box_half = Vec3::Ones();
    double separation = 2.0;     // two-spheres: center distance along x
};

inline ShapeParams shape_params(ShapeKind kind, std::uint64_t seed)
{
    std::mt19937_64 rng(derive_seed(seed, 0x5348415045ULL));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ShapeParams sp;
    switch (kind) {
    case ShapeKind::sphere: sp.radius = 1.0; break;
    case ShapeKind::box:
        sp.box_half = Vec3(0.5 + u(rng), 0.5 + u(rng), 0.5 + u(rng));
        break;
    case ShapeKind::cylinder:
        sp.radius = 0.4 + 0.6 * u(rng);
        sp.height = 1.0 + 1.5 * u(rng);
        break;
    case ShapeKind::torus:
        sp.major_radius = 1.0;
        sp.radius2 = 0.2 + 0.4 * u(rng);
        break;
    case ShapeKind::cone:
        sp.radius = 0.5 + 0.5 * u(rng);
        sp.height = 1.0 + 1.0 * u(rng);
        break;
    case ShapeKind::two_spheres:
        sp.radius = 0.6 + 0.4 * u(rng);
        sp.radius2 = 0.4 + 0.4 * u(rng);
        sp.separation = (sp.radius + sp.radius2) * (1.2 + 0.6 * u(rng));
        break;
    }
    return sp;
}

namespace detail {

inline Vec3 unit_sphere_sample(std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    for (;;) {
        Vec3 v(g(rng), g(rng), g(rng));
        const double n = v.norm();
        if (n > 1e-12) {
            return v / n;
        }
    }
}

// Chooses index i with probability weights[i] / sum(weights).
inline std::size_t pick_weighted(std::mt19937_64& rng, std::span<const double> weights)
{
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
        if (r < weights[i]) {
            return i;
        }
        r -= weights[i];
    }
    return weights.size() - 1;
}

} // namespace detail

// Analytic surface samples with outward normals; label = shape index.
inline PointCloud synthesize_shape(ShapeKind kind, std::size_t n_points, std::uint64_t seed)
{
    require(n_points >= 16, "synthesize_shape: n_points must be >= 16");
    const ShapeParams sp = shape_params(kind, seed);
    std::mt19937_64 rng(derive_seed(seed, 0x53414d504cULL));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    PointCloud cloud;
    cloud.positions.reserve(n_points);
    cloud.normals.emplace();
    cloud.normals->reserve(n_points);
    auto emit = [&](const Vec3& p, const Vec3& n) {
        cloud.positions.push_back(p);
        cloud.normals->push_back(n.normalized());
    };

    for (std::size_t s = 0; s < n_points; ++s) {
        switch (kind) {
        case ShapeKind::sphere: {
            const Vec3 d = detail::unit_sphere_sample(rng);
            emit(sp.radius * d, d);
            break;
        }
        case ShapeKind::box: {
            const Vec3& h = sp.box_half;
            const std::array<double, 3> face_area = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
            const std::size_t axis = detail::pick_weighted(rng, face_area);
            const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
            Vec3 p;
            for (int a = 0; a < 3; ++a) {
                p[a] = (2.0 * u(rng) - 1.0) * h[a];
            }
            p[static_cast<int>(axis)] = sign * h[static_cast<int>(axis)];
            Vec3 n = Vec3::Zero();
            n[static_cast<int>(axis)] = sign;
            emit(p, n);
            break;
        }
        case ShapeKind::cylinder: {
            const double r = sp.radius, hh = 0.5 * sp.height;
            const std::array<double, 2> area = {two_pi * r * sp.height, 2.0 * std::numbers::pi * r * r};
            const double theta = two_pi * u(rng);
            if (detail::pick_weighted(rng, area) == 0) {
                const double z = (2.0 * u(rng) - 1.0) * hh;
                emit(Vec3(r * std::cos(theta), r * std::sin(theta), z),
                     Vec3(std::cos(theta), std::sin(theta), 0.0));
            } else {
                const double rho = r * std::sqrt(u(rng));
                const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
                emit(Vec3(rho * std::cos(theta), rho * std::sin(theta), sign * hh), Vec3(0, 0, sign));
            }
            break;
        }
        case ShapeKind::torus: {
            const double big = sp.major_radius, small = sp.radius2;
            double phi = 0.0;
            // Area element is proportional to (R + r cos(phi)).
            for (;;) {
                phi = two_pi * u(rng);
                if (u(rng) * (big + small) <= big + small * std::cos(phi)) {
                    break;
                }
            }
            const double theta = two_pi * u(rng);
            const double ring = big + small * std::cos(phi);
            emit(Vec3(ring * std::cos(theta), ring * std::sin(theta), small * std::sin(phi)),
                 Vec3(std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi)));
            break;
        }
        case ShapeKind::cone: {
            // Apex at z = height, base disk at z = 0.
            const double r = sp.radius, h = sp.height;
            const double slant = std::sqrt(r * r + h * h);
            const std::array<double, 2> area = {std::numbers::pi * r * slant, std::numbers::pi * r * r};
            const double theta = two_pi * u(rng);
            if (detail::pick_weighted(rng, area) == 0) {
                const double t = std::sqrt(u(rng)); // 0 at apex, 1 at base rim
                const double rho = t * r;
                emit(Vec3(rho * std::cos(theta), rho * std::sin(theta), h * (1.0 - t)),
                     Vec3(h * std::cos(theta), h * std::sin(theta), r));
            } else {
                const double rho = r * std::sqrt(u(rng));
                emit(Vec3(rho * std::cos(theta), rho * std::sin(theta), 0.0), Vec3(0, 0, -1));
            }
            break;
        }
        case ShapeKind::two_spheres: {
            const std::array<double, 2> area = {sp.radius * sp.radius, sp.radius2 * sp.radius2};
            const Vec3 d = detail::unit_sphere_sample(rng);
            if (detail::pick_weighted(rng, area) == 0) {
                emit(sp.radius * d, d);
            } else {
                emit(Vec3(sp.separation, 0, 0) + sp.radius2 * d, d);
            }
            break;
        }
        }
    }
    cloud.label = static_cast<int>(kind);
    return cloud;
}

} // namespace gccpc
