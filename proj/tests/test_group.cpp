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

#include <gccpc/group.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace gccpc;

namespace {

Pose random_pose(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return Pose{Rotation::uniform_random(rng), Vec3(u(rng), u(rng), u(rng))};
}

bool near(const Pose& a, const Pose& b, double tol)
{
    return (a.rotation.matrix() - b.rotation.matrix()).cwiseAbs().maxCoeff() <= tol &&
           (a.translation - b.translation).cwiseAbs().maxCoeff() <= tol;
}

} // namespace

TEST(Pose, ComposeWithIdentityAndInverse)
{
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const Pose g = random_pose(rng);
        EXPECT_TRUE(near(compose(g, Pose::identity()), g, 1e-15));
        EXPECT_TRUE(near(compose(g, inverse(g)), Pose::identity(), 1e-9));
        EXPECT_TRUE(near(inverse(inverse(g)), g, 1e-12));
    }
    EXPECT_TRUE(near(inverse(Pose::identity()), Pose::identity(), 0.0));
}

TEST(Pose, TranslationsCommute)
{
    const Pose a = Pose::from_translation(Vec3(1, 2, 3));
    const Pose b = Pose::from_translation(Vec3(-0.5, 0.25, 4));
    EXPECT_TRUE(near(compose(a, b), Pose::from_translation(Vec3(0.5, 2.25, 7)), 1e-15));
}

TEST(Pose, CompositionAssociative)
{
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        EXPECT_TRUE(near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12));
    }
}

TEST(Rotation, InverseOfZRotation)
{
    const Rotation r = Rotation::about_axis(Vec3::UnitZ(), 0.3);
    const Rotation expected = Rotation::about_axis(Vec3::UnitZ(), -0.3);
    EXPECT_LT((inverse(Pose{r, Vec3::Zero()}).rotation.matrix() - expected.matrix()).norm(), 1e-15);
}

TEST(Rotation, ReprojectionRestoresOrthonormality)
{
    std::mt19937_64 rng(3);
    Rotation acc;
    for (int t = 0; t < 10000; ++t) acc = acc * Rotation::uniform_random(rng);
    const Rotation fixed = acc.reprojected();
    EXPECT_TRUE(Rotation::is_rotation(fixed.matrix(), 1e-9));
}

TEST(RotationAngle, BasicValuesAndConjugation)
{
    EXPECT_DOUBLE_EQ(rotation_angle(Rotation::identity()), 0.0);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        Vec3 axis = oracle::random_points(1, 1.0, rng)[0];
        EXPECT_NEAR(rotation_angle(Rotation::about_axis(axis, std::numbers::pi)), std::numbers::pi, 1e-7);
        const Rotation r = Rotation::uniform_random(rng);
        const Rotation q = Rotation::uniform_random(rng);
        EXPECT_NEAR(rotation_angle(q * r * q.inverse()), rotation_angle(r), 1e-7);
    }
}

TEST(RelativeElement, IdentityWhenPosesCoincide)
{
    std::mt19937_64 rng(5);
    const Pose g = random_pose(rng);
    EXPECT_TRUE(near(relative_element(g, g, Pose::identity()), Pose::identity(), 1e-12));
}

TEST(RelativeElement, TranslationOnlyCase)
{
    const Pose gi = Pose::from_translation(Vec3(1, 0, 0));
    const Pose gj = Pose::from_translation(Vec3(0, 0, 0));
    const Pose d = Pose::from_translation(Vec3(0.1, 0, 0));
    const Pose rel = relative_element(gi, gj, d);
    EXPECT_LT((rel.translation - Vec3(-0.9, 0, 0)).norm(), 1e-15);
    EXPECT_LT((rel.rotation.matrix() - Mat3::Identity()).norm(), 1e-15);
}

TEST(RelativeElement, MatchesMatrixOracleAndLeftInvariant)
{
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        const Pose gi = random_pose(rng), gj = random_pose(rng), d = random_pose(rng), u = random_pose(rng);
        const Pose rel = relative_element(gi, gj, d);
        auto [r, tr] = oracle::relative(gi.rotation.matrix(), gi.translation, gj.rotation.matrix(),
                                        gj.translation, d.rotation.matrix(), d.translation);
        EXPECT_LT((rel.rotation.matrix() - r).norm(), 1e-12);
        EXPECT_LT((rel.translation - tr).norm(), 1e-12);
        const Pose moved = relative_element(compose(u, gi), compose(u, gj), d);
        EXPECT_TRUE(near(moved, rel, 1e-12));
        EXPECT_NEAR(se3_distance(moved, 0.3), se3_distance(rel, 0.3), 1e-12);
    }
}

TEST(Se3Distance, Values)
{
    EXPECT_DOUBLE_EQ(se3_distance(Pose::identity(), 1.0), 0.0);
    const Pose rel{Rotation::about_axis(Vec3::UnitX(), 0.4), Vec3(0.3, 0, 0)};
    EXPECT_NEAR(se3_distance(rel, 1.0), 0.5, 1e-12);
    const Pose rel2{Rotation::about_axis(Vec3::UnitY(), 2.0), Vec3(0, 0.2, 0)};
    EXPECT_NEAR(se3_distance(rel2, 0.0), 0.2, 1e-15);
    EXPECT_THROW(se3_distance(rel, -1e-3), InvalidArgument);
}

TEST(Octahedral, TwentyFourElementGroup)
{
    const RotationSet set = octahedral_rotations();
    ASSERT_EQ(set.size(), 24u);
    EXPECT_TRUE(set.rotations[0].matrix().isIdentity());
    EXPECT_GT(min_pairwise_angle(set), 1e-6);
    auto find = [&](const Mat3& m) {
        for (const auto& r : set.rotations)
            if ((r.matrix() - m).cwiseAbs().maxCoeff() < 1e-12) return true;
        return false;
    };
    for (const auto& a : set.rotations) {
        EXPECT_TRUE(Rotation::is_rotation(a.matrix()));
        EXPECT_TRUE(find(a.inverse().matrix()));
        for (const auto& b : set.rotations) EXPECT_TRUE(find((a * b).matrix()));
    }
}

TEST(NormalAlignedPoses, CountsAndAlignment)
{
    const auto cloud = normalize_unit_cube(synthesize_shape(ShapeKind::box, 64, 3));
    const auto poses = normal_aligned_poses(cloud, 8);
    ASSERT_EQ(poses.size(), 512u);
    for (std::size_t p = 0; p < poses.size(); ++p) {
        const std::size_t i = p / 8;
        EXPECT_LT((poses[p].rotation * Vec3::UnitZ() - (*cloud.normals)[i]).norm(), 1e-9);
        EXPECT_EQ(poses[p].translation, cloud.positions[i]);
        if (p % 8 != 7) {
            const double a = rotation_distance(poses[p].rotation, poses[p + 1].rotation);
            EXPECT_NEAR(a, std::numbers::pi / 4.0, 1e-9);
        }
    }
}

TEST(NormalAlignedPoses, EquivariantUnderRigidMotion)
{
    const auto cloud = normalize_unit_cube(synthesize_shape(ShapeKind::cone, 64, 3));
    std::mt19937_64 rng(7);
    const Pose u = random_pose(rng);
    const auto moved = transformed(cloud, u.rotation.matrix(), u.translation);
    const auto a = normal_aligned_poses(cloud, 8);
    const auto b = normal_aligned_poses(moved, 8);
    for (std::size_t p = 0; p < a.size(); ++p) EXPECT_TRUE(near(compose(u, a[p]), b[p], 1e-12));
}

TEST(NormalAlignedPoses, RequiresNormals)
{
    PointCloud c;
    c.positions = {Vec3(0, 0, 0)};
    EXPECT_THROW(normal_aligned_poses(c, 8), InvalidArgument);
}

TEST(So3Poisson, FortySixWellSpreadRotations)
{
    const RotationSet set = sample_so3_poisson(46, 1);
    ASSERT_EQ(set.size(), 46u);
    EXPECT_EQ(set.kind, RotationSetKind::so3_poisson46);
    for (const auto& r : set.rotations) EXPECT_TRUE(Rotation::is_rotation(r.matrix()));
    EXPECT_GE(min_pairwise_angle(set), 0.5);
    const RotationSet again = sample_so3_poisson(46, 1);
    for (std::size_t a = 0; a < 46; ++a) EXPECT_EQ(set.rotations[a].matrix(), again.rotations[a].matrix());
}

TEST(So3Poisson, SingleRotation)
{
    const RotationSet set = sample_so3_poisson(1, 9);
    ASSERT_EQ(set.size(), 1u);
    EXPECT_TRUE(Rotation::is_rotation(set.rotations[0].matrix()));
}
