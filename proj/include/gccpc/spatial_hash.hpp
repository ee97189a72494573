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

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace gccpc {

// Uniform hash grid over 3D points. Supports incremental insertion (dart
// throwing) and radius queries; queries visit every cell overlapping the
// query ball, so there are no false negatives.
class SpatialHash {
  public:
    explicit SpatialHash(double cell_size) : cell_(cell_size), inv_cell_(1.0 / cell_size)
    {
        require(cell_size > 0.0 && std::isfinite(cell_size), "SpatialHash: cell size must be positive");
    }

    SpatialHash(double cell_size, std::span<const Vec3> points) : SpatialHash(cell_size)
    {
        cells_.reserve(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            insert(static_cast<std::uint32_t>(i), points[i]);
        }
    }

    void insert(std::uint32_t index, const Vec3& p)
    {
        cells_[key(coord(p.x()), coord(p.y()), coord(p.z()))].push_back(index);
    }

    double cell_size() const noexcept { return cell_; }

    // Calls fn(index) for every stored index whose cell overlaps the ball.
    // The caller does the exact distance test.
    template <typename Fn>
    void for_each_candidate(const Vec3& center, double radius, Fn&& fn) const
    {
        const std::int64_t x0 = coord(center.x() - radius), x1 = coord(center.x() + radius);
        const std::int64_t y0 = coord(center.y() - radius), y1 = coord(center.y() + radius);
        const std::int64_t z0 = coord(center.z() - radius), z1 = coord(center.z() + radius);
        for (std::int64_t x = x0; x <= x1; ++x) {
            for (std::int64_t y = y0; y <= y1; ++y) {
                for (std::int64_t z = z0; z <= z1; ++z) {
                    auto it = cells_.find(key(x, y, z));
                    if (it == cells_.end()) {
                        continue;
                    }
                    for (std::uint32_t idx : it->second) {
                        fn(idx);
                    }
                }
            }
        }
    }

  private:
    std::int64_t coord(double v) const noexcept
    {
        return static_cast<std::int64_t>(std::floor(v * inv_cell_));
    }

    static std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z) noexcept
    {
        constexpr std::int64_t bias = 1 << 20;
        constexpr std::uint64_t mask = (1ULL << 21) - 1;
        return (static_cast<std::uint64_t>(x + bias) & mask) |
               ((static_cast<std::uint64_t>(y + bias) & mask) << 21) |
               ((static_cast<std::uint64_t>(z + bias) & mask) << 42);
    }

    double cell_;
    double inv_cell_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

} // namespace gccpc
