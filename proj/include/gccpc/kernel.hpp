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

#include <cmath>
#include <numbers>
#include <vector>

namespace gccpc {

// Uniform quadratic B-spline, support [-3/2, 3/2], C1.
constexpr double bspline_quadratic(double x) noexcept
{
    const double a = x < 0.0 ? -x : x;
    if (a <= 0.5) {
        return 0.75 - a * a;
    }
    if (a <= 1.5) {
        const double t = 1.5 - a;
        return 0.5 * t * t;
    }
    return 0.0;
}

enum class KernelMode { tensor_product_spatial, radial_group };

struct KernelSpec {
    double spacing = 0.02;
    int grid_size = 3;
    KernelMode mode = KernelMode::tensor_product_spatial;
    double lambda = 0.0; // radial_group only

    void validate() const
    {
        require(spacing > 0.0 && std::isfinite(spacing), "KernelSpec: spacing must be positive");
        require(grid_size >= 1 && grid_size % 2 == 1, "KernelSpec: grid_size must be odd");
        require(lambda >= 0.0, "KernelSpec: lambda must be non-negative");
    }

    double support_radius() const noexcept { return 1.5 * spacing; }

    // lambda making a rotation by pi cost one spacing.
    static double default_lambda(double spacing) noexcept
    {
        const double s = spacing / std::numbers::pi;
        return s * s;
    }
};

inline double spatial_kernel_value(const Vec3& v, const KernelSpec& spec)
{
    require(spec.mode == KernelMode::tensor_product_spatial,
            "spatial_kernel_value: kernel spec is not in tensor-product spatial mode");
    const double inv = 1.0 / spec.spacing;
    return bspline_quadratic(v.x() * inv) * bspline_quadratic(v.y() * inv) *
           bspline_quadratic(v.z() * inv);
}

inline double group_kernel_value(const Pose& rel, const KernelSpec& spec)
{
    require(spec.mode == KernelMode::radial_group,
            "group_kernel_value: kernel spec is not in radial group mode");
    return bspline_quadratic(se3_distance(rel, spec.lambda) / spec.spacing);
}

// Kernel offsets d_k. A spatial grid keeps its per-axis values so that
// separable kernels can be evaluated axis by axis; index k = (a*G + b)*G + c
// for d_k = (axis_values[a], axis_values[b], axis_values[c]).
struct OffsetGrid {
    std::vector<Vec3> vectors;     // spatial grid
    std::vector<double> axis_values;
    std::vector<Pose> poses;       // group grid

    bool is_group() const noexcept { return !poses.empty(); }
    std::size_t size() const noexcept { return is_group() ? poses.size() : vectors.size(); }

    double max_translation() const
    {
        double m = 0.0;
        for (const auto& v : vectors) {
            m = std::max(m, v.norm());
        }
        for (const auto& p : poses) {
            m = std::max(m, p.translation.norm());
        }
        return m;
    }
};

inline OffsetGrid spatial_offset_grid(const KernelSpec& spec)
{
    spec.validate();
    OffsetGrid grid;
    const int half = spec.grid_size / 2;
    for (int a = -half; a <= half; ++a) {
        grid.axis_values.push_back(a * spec.spacing);
    }
    for (double x : grid.axis_values) {
        for (double y : grid.axis_values) {
            for (double z : grid.axis_values) {
                grid.vectors.emplace_back(x, y, z);
            }
        }
    }
    return grid;
}

// delta_k = (R, d) for every rotation R and spatial offset d; index
// k = r * |spatial| + s.
inline OffsetGrid group_offset_product(const OffsetGrid& spatial, const RotationSet& rotations)
{
    require(!spatial.is_group(), "group_offset_product: spatial grid expected");
    OffsetGrid grid;
    grid.poses.reserve(spatial.size() * rotations.size());
    for (const auto& r : rotations.rotations) {
        for (const auto& d : spatial.vectors) {
            grid.poses.push_back(Pose{r, d});
        }
    }
    return grid;
}

} // namespace gccpc
