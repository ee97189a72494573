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
#include "gccpc/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace gccpc {

// Element of SO(3), stored as a matrix since every consumer needs the action
// on vectors.
class Rotation {
  public:
    Rotation() : m_(Mat3::Identity()) {}

    static Rotation identity() { return Rotation(); }

    // Checked construction: the matrix must be orthonormal with det +1.
    static Rotation from_matrix(const Mat3& m, double tol = 1e-9)
    {
        require(is_rotation(m, tol), "Rotation: matrix is not a proper rotation");
        return Rotation(m, unchecked);
    }

    static Rotation about_axis(const Vec3& axis, double angle)
    {
        return Rotation(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), unchecked);
    }

    // Uniform (Haar) random rotation via Shoemake's quaternion construction.
    template <typename Rng>
    static Rotation uniform_random(Rng& rng)
    {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
        const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
        constexpr double two_pi = 2.0 * std::numbers::pi;
        Eigen::Quaterniond q(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2),
                             a * std::cos(two_pi * u2), b * std::sin(two_pi * u3));
        return Rotation(q.normalized().toRotationMatrix(), unchecked);
    }

    static bool is_rotation(const Mat3& m, double tol = 1e-9)
    {
        return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(m.determinant() - 1.0) <= tol;
    }

    const Mat3& matrix() const noexcept { return m_; }

    Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, unchecked); }
    Vec3 operator*(const Vec3& v) const { return m_ * v; }

    Rotation inverse() const { return Rotation(m_.transpose(), unchecked); }

    // Nearest rotation (polar factor) when orthonormality has drifted past
    // 1e-9, e.g. after long composition chains; otherwise unchanged.
    Rotation reprojected() const
    {
        if (is_rotation(m_, 1e-9)) {
            return *this;
        }
        Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 u = svd.matrixU();
        const Mat3 v = svd.matrixV();
        if ((u * v.transpose()).determinant() < 0.0) {
            u.col(2) = -u.col(2);
        }
        return Rotation(u * v.transpose(), unchecked);
    }

  private:
    struct Unchecked {};
    static constexpr Unchecked unchecked{};
    Rotation(const Mat3& m, Unchecked) : m_(m) {}

    Mat3 m_;
};

// Rigid motion x -> R x + t.
struct Pose {
    Rotation rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return Pose{}; }
    static Pose from_translation(const Vec3& t) { return Pose{Rotation::identity(), t}; }

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
};

inline Pose compose(const Pose& a, const Pose& b)
{
    return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose inverse(const Pose& a)
{
    const Rotation rt = a.rotation.inverse();
    return Pose{rt, -(rt * a.translation)};
}


// Angle of a rotation matrix. The atan2 form keeps full precision near 0 and
// pi, where acos of the trace loses about half the significant digits.
inline double rotation_angle_of(const Mat3& m)
{
    const Vec3 axis(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
    return std::atan2(0.5 * axis.norm(), 0.5 * (m.trace() - 1.0));
}

inline double rotation_angle(const Rotation& r)
{
    return rotation_angle_of(r.matrix());
}

// Geodesic distance on SO(3).
inline double rotation_distance(const Rotation& a, const Rotation& b)
{
    return rotation_angle_of(a.matrix().transpose() * b.matrix());
}

// inverse(g_in) o g_out o delta. Exactly invariant when the same global
// motion is applied (on the left) to g_in and g_out; reduces to
// p_out + d - p_in when all rotations are the identity.
inline Pose relative_element(const Pose& g_in, const Pose& g_out, const Pose& delta)
{
    const Mat3 rin_t = g_in.rotation.matrix().transpose();
    const Mat3 a = rin_t * g_out.rotation.matrix();
    const Vec3 b = rin_t * (g_out.translation - g_in.translation);
    Pose rel;
    rel.rotation = Rotation::from_matrix(a * delta.rotation.matrix(), 1e-6);
    rel.translation = a * delta.translation + b;
    return rel;
}

inline double se3_distance(const Pose& rel, double lambda)
{
    if (!(lambda >= 0.0)) {
        throw InvalidArgument("se3_distance: lambda must be non-negative");
    }
    const double dt = rel.translation.norm();
    const double dr = rotation_angle(rel.rotation);
    return std::sqrt(dt * dt + lambda * dr * dr);
}

enum class RotationSetKind { octahedral24, normal_ring8, so3_poisson46, custom };

struct RotationSet {
    std::vector<Rotation> rotations;
    RotationSetKind kind = RotationSetKind::custom;

    std::size_t size() const noexcept { return rotations.size(); }
};

inline double min_pairwise_angle(const RotationSet& set)
{
    double best = std::numbers::pi;
    for (std::size_t a = 0; a < set.size(); ++a) {
        for (std::size_t b = a + 1; b < set.size(); ++b) {
            best = std::min(best, rotation_distance(set.rotations[a], set.rotations[b]));
        }
    }
    return best;
}

// The 24 proper signed permutation matrices, identity first.
inline RotationSet octahedral_rotations()
{
    RotationSet set;
    set.kind = RotationSetKind::octahedral24;
    std::array<int, 3> perm = {0, 1, 2};
    do {
        for (int signs = 0; signs < 8; ++signs) {
            Mat3 m = Mat3::Zero();
            for (int row = 0; row < 3; ++row) {
                m(row, perm[row]) = (signs >> row) & 1 ? -1.0 : 1.0;
            }
            if (m.determinant() > 0.0) {
                set.rotations.push_back(Rotation::from_matrix(m));
            }
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return set;
}

namespace detail {

// Tangent direction used as the in-plane reference of a normal-aligned frame.
// Derived from the cloud's own geometry (direction towards the centroid), so
// it rotates along with the cloud; falls back to a fixed axis only when that
// direction is parallel to the normal.
inline Vec3 tangent_reference(const Vec3& normal, const Vec3& position, const Vec3& centroid)
{
    auto project = [&](const Vec3& v) -> Vec3 { return v - v.dot(normal) * normal; };
    Vec3 t = project(centroid - position);
    if (t.norm() > 1e-9) {
        return t.normalized();
    }
    t = project(Vec3::UnitX());
    if (t.norm() < 1e-3) {
        t = project(Vec3::UnitY());
    }
    return t.normalized();
}

} // namespace detail

// n_ring poses per point; pose r of point i maps e_z to the point's normal and
// is rotated by 2*pi*r/n_ring about it. Output order: point-major.
inline std::vector<Pose> normal_aligned_poses(const PointCloud& cloud, int n_ring = 8)
{
    require(cloud.has_normals(), "normal_aligned_poses: cloud has no normals");
    require(n_ring >= 1, "normal_aligned_poses: n_ring must be >= 1");
    const Vec3 centroid = cloud.centroid();
    std::vector<Pose> poses;
    poses.reserve(cloud.size() * static_cast<std::size_t>(n_ring));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 z = (*cloud.normals)[i].normalized();
        const Vec3 x = detail::tangent_reference(z, cloud.positions[i], centroid);
        const Vec3 y = z.cross(x);
        Mat3 frame;
        frame.col(0) = x;
        frame.col(1) = y;
        frame.col(2) = z;
        for (int r = 0; r < n_ring; ++r) {
            const double angle = 2.0 * std::numbers::pi * r / n_ring;
            const Mat3 spin = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
            poses.push_back(Pose{Rotation::from_matrix(frame * spin, 1e-8), cloud.positions[i]});
        }
    }
    return poses;
}

// Greedy dart throwing on SO(3) with a shrinking exclusion angle.
inline RotationSet sample_so3_poisson(int count, std::uint64_t seed)
{
    require(count >= 1, "sample_so3_poisson: count must be >= 1");
    std::mt19937_64 rng(seed);
    RotationSet set;
    set.kind = count == 46 ? RotationSetKind::so3_poisson46 : RotationSetKind::custom;
    double radius = std::numbers::pi;
    constexpr int attempts_per_radius = 2000;
    while (static_cast<int>(set.size()) < count) {
        int failures = 0;
        while (static_cast<int>(set.size()) < count && failures < attempts_per_radius) {
            const Rotation candidate = Rotation::uniform_random(rng);
            bool ok = true;
            for (const auto& r : set.rotations) {
                if (rotation_distance(candidate, r) < radius) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                set.rotations.push_back(candidate);
                failures = 0;
            } else {
                ++failures;
            }
        }
        radius *= 0.95;
    }
    return set;
}

// Normal-ring sets are only defined relative to a normal; this returns the
// in-plane ring about e_z, useful as an offset set.
inline RotationSet ring_rotations(int n_ring = 8)
{
    RotationSet set;
    set.kind = n_ring == 8 ? RotationSetKind::normal_ring8 : RotationSetKind::custom;
    for (int r = 0; r < n_ring; ++r) {
        set.rotations.push_back(Rotation::about_axis(Vec3::UnitZ(), 2.0 * std::numbers::pi * r / n_ring));
    }
    return set;
}

} // namespace gccpc
