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

#include <gccpc/kernel.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace gccpc;

TEST(BSpline, ClosedFormValues)
{
    EXPECT_DOUBLE_EQ(bspline_quadratic(0.0), 0.75);
    EXPECT_DOUBLE_EQ(bspline_quadratic(1.0), 0.125);
    EXPECT_DOUBLE_EQ(bspline_quadratic(-1.0), 0.125);
    EXPECT_DOUBLE_EQ(bspline_quadratic(1.5), 0.0);
    EXPECT_DOUBLE_EQ(bspline_quadratic(7.0), 0.0);
    EXPECT_DOUBLE_EQ(bspline_quadratic(0.5), 0.5);
}

TEST(BSpline, ContinuousWithContinuousDerivative)
{
    const double h = 1e-7;
    for (double knot : {0.5, 1.5}) {
        EXPECT_NEAR(bspline_quadratic(knot - h), bspline_quadratic(knot + h), 1e-6);
        const double left = (bspline_quadratic(knot - h) - bspline_quadratic(knot - 2 * h)) / h;
        const double right = (bspline_quadratic(knot + 2 * h) - bspline_quadratic(knot + h)) / h;
        EXPECT_NEAR(left, right, 1e-5);
    }
}

TEST(BSpline, PartitionOfUnity1D)
{
    for (double x = -0.5; x <= 0.5; x += 0.01) {
        const double s = bspline_quadratic(x - 1) + bspline_quadratic(x) + bspline_quadratic(x + 1);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(SpatialKernel, ValuesAndSymmetry)
{
    KernelSpec spec;
    spec.spacing = 0.05;
    EXPECT_DOUBLE_EQ(spatial_kernel_value(Vec3::Zero(), spec), 0.421875);
    EXPECT_DOUBLE_EQ(spatial_kernel_value(Vec3(1.5 * spec.spacing, 0, 0), spec), 0.0);
    std::mt19937_64 rng(1);
    for (const auto& v : oracle::random_points(200, 0.1, rng)) {
        const double s = spatial_kernel_value(v, spec);
        EXPECT_DOUBLE_EQ(s, spatial_kernel_value(-v, spec));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 0.421875);
        EXPECT_NEAR(s, oracle::tensor_kernel(v, spec.spacing), 1e-15);
        if (v.cwiseAbs().maxCoeff() > 1.5 * spec.spacing) {
            EXPECT_EQ(s, 0.0);
        }
    }
}

TEST(SpatialKernel, PartitionOfUnity3D)
{
    KernelSpec spec;
    const auto grid = spatial_offset_grid(spec);
    std::mt19937_64 rng(2);
    for (const auto& q : oracle::random_points(500, 0.5 * spec.spacing, rng)) {
        double s = 0.0;
        for (const auto& d : grid.vectors) s += spatial_kernel_value(q - d, spec);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(SpatialKernel, WrongModeThrows)
{
    KernelSpec spec;
    spec.mode = KernelMode::radial_group;
    EXPECT_THROW(spatial_kernel_value(Vec3::Zero(), spec), InvalidArgument);
    KernelSpec s2;
    EXPECT_THROW(group_kernel_value(Pose::identity(), s2), InvalidArgument);
}

TEST(GroupKernel, ValuesAndInvariance)
{
    KernelSpec spec;
    spec.mode = KernelMode::radial_group;
    spec.lambda = KernelSpec::default_lambda(spec.spacing);
    EXPECT_DOUBLE_EQ(group_kernel_value(Pose::identity(), spec), 0.75);
    const Pose edge = Pose::from_translation(Vec3(0, 1.5 * spec.spacing, 0));
    EXPECT_DOUBLE_EQ(group_kernel_value(edge, spec), 0.0);
    // a rotation by pi costs exactly one spacing under the default lambda
    const Pose flip{Rotation::about_axis(Vec3::UnitX(), std::numbers::pi), Vec3::Zero()};
    EXPECT_NEAR(group_kernel_value(flip, spec), 0.125, 1e-9);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.02, 0.02);
    for (int t = 0; t < 50; ++t) {
        const Pose gi{Rotation::uniform_random(rng), Vec3(u(rng), u(rng), u(rng))};
        const Pose gj{Rotation::uniform_random(rng), Vec3(u(rng), u(rng), u(rng))};
        const Pose g{Rotation::uniform_random(rng), Vec3(u(rng), u(rng), u(rng))};
        const double a = group_kernel_value(relative_element(gi, gj, Pose::identity()), spec);
        const double b = group_kernel_value(relative_element(compose(g, gi), compose(g, gj), Pose::identity()), spec);
        EXPECT_NEAR(a, b, 1e-12);
    }
}

TEST(OffsetGrid, SpatialGrid)
{
    KernelSpec spec;
    const auto grid = spatial_offset_grid(spec);
    ASSERT_EQ(grid.size(), 27u);
    EXPECT_FALSE(grid.is_group());
    EXPECT_DOUBLE_EQ(grid.axis_values.front(), -0.02);
    EXPECT_DOUBLE_EQ(grid.axis_values.back(), 0.02);
    bool has_origin = false;
    for (const auto& d : grid.vectors) {
        has_origin = has_origin || d.isZero();
        bool mirrored = false;
        for (const auto& e : grid.vectors) mirrored = mirrored || (d + e).isZero();
        EXPECT_TRUE(mirrored);
    }
    EXPECT_TRUE(has_origin);
    // index order k = (a*G + b)*G + c
    EXPECT_EQ(grid.vectors[1 * 9 + 2 * 3 + 0], Vec3(0, 0.02, -0.02));

    KernelSpec one;
    one.grid_size = 1;
    const auto single = spatial_offset_grid(one);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_TRUE(single.vectors[0].isZero());

    KernelSpec even;
    even.grid_size = 2;
    EXPECT_THROW(spatial_offset_grid(even), InvalidArgument);
    KernelSpec neg;
    neg.spacing = -1;
    EXPECT_THROW(spatial_offset_grid(neg), InvalidArgument);
}

TEST(OffsetGrid, GroupProductSizes)
{
    KernelSpec spec;
    const auto spatial = spatial_offset_grid(spec);
    const auto octa = group_offset_product(spatial, octahedral_rotations());
    EXPECT_EQ(octa.size(), 648u);
    EXPECT_TRUE(octa.is_group());
    const auto so3 = group_offset_product(spatial, sample_so3_poisson(46, 1));
    EXPECT_EQ(so3.size(), 1242u);
    bool has_identity = false;
    for (const auto& p : octa.poses)
        has_identity = has_identity || (p.translation.isZero() && p.rotation.matrix().isIdentity());
    EXPECT_TRUE(has_identity);
    EXPECT_THROW(group_offset_product(octa, octahedral_rotations()), InvalidArgument);
}
