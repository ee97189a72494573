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

// Labeled point clouds for training: a synthetic shape set or a directory of
// .pcf files.

#pragma once

#include "gccpc/geometry.hpp"
#include "gccpc/pcf_io.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace gccpc::nn {

struct Sample {
    std::string id; // stable across runs; keys the cache and per-model seeds
    PointCloud cloud;
    int label = 0;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
    int classes = 0;
};

// Per-cloud nuisances that keep the synthetic task from saturating: an
// anisotropic stretch, a single-view crop that keeps the surface facing a
// random viewpoint, and positional jitter after normalization.
struct SyntheticOptions {
    double stretch = 0.4;     // per-axis scale drawn from [1 - s, 1 + s]
    bool partial_view = true;
    double view_cutoff = 0.4; // keep points with n . view > cutoff
    double jitter = 0.02;     // Gaussian sigma, unit-cube coordinates
};

inline PointCloud synthetic_cloud(ShapeKind kind, std::size_t count, std::uint64_t seed,
                                  const SyntheticOptions& opt = {})
{
    std::mt19937_64 rng(derive_seed(seed, 0x4e55495300ULL));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Vec3 scale(1.0 + opt.stretch * u(rng), 1.0 + opt.stretch * u(rng), 1.0 + opt.stretch * u(rng));
    Vec3 view;
    do {
        view = Vec3(u(rng), u(rng), u(rng));
    } while (view.squaredNorm() > 1.0 || view.squaredNorm() < 1e-6);
    view.normalize();

    PointCloud out;
    out.normals.emplace();
    for (std::size_t attempt = 0; out.size() < count; ++attempt) {
        require(attempt < 8, "synthetic cloud: view crop leaves too few points");
        const PointCloud raw = synthesize_shape(kind, 3 * count, derive_seed(seed, attempt));
        for (std::size_t i = 0; i < raw.size() && out.size() < count; ++i) {
            const Vec3 n = (*raw.normals)[i].cwiseQuotient(scale).normalized();
            if (opt.partial_view && n.dot(view) <= opt.view_cutoff) {
                continue;
            }
            out.positions.push_back(raw.positions[i].cwiseProduct(scale));
            out.normals->push_back(n);
        }
    }
    out = normalize_unit_cube(out);
    std::normal_distribution<double> g(0.0, opt.jitter);
    if (opt.jitter > 0.0) {
        for (auto& p : out.positions) {
            p += Vec3(g(rng), g(rng), g(rng));
        }
    }
    out.label = static_cast<int>(kind);
    return out;
}

// Clouds are synthesized at twice the target count; the sampling hierarchy
// then thins them to the first level. Class c is shape kind c.
inline Dataset synthetic_dataset(int classes, std::size_t train_count, std::size_t points, std::uint64_t seed,
                                 const SyntheticOptions& opt = {})
{
    require(classes >= 2 && classes <= static_cast<int>(all_shape_kinds.size()),
            "synthetic dataset: classes must be in [2, " + std::to_string(all_shape_kinds.size()) + "]");
    require(train_count >= static_cast<std::size_t>(classes), "synthetic dataset: need at least one cloud per class");
    Dataset d;
    d.classes = classes;
    auto fill = [&](std::vector<Sample>& out, std::size_t count, std::string_view split, std::uint64_t stream) {
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
            Sample s;
            s.label = label;
            s.id = "syn" + std::to_string(seed) + "-" + std::string(split) + "-" + std::to_string(i);
            s.cloud = synthetic_cloud(all_shape_kinds[static_cast<std::size_t>(label)], 2 * points,
                                      derive_seed(seed, stream, i), opt);
            out.push_back(std::move(s));
        }
    };
    fill(d.train, train_count, "train", 0x545241494eULL);
    fill(d.test, std::max<std::size_t>(1, train_count / 3), "test", 0x54455354ULL);
    return d;
}

// .pcf files of one split, sorted by name.
inline std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& dir, std::string_view split)
{
    namespace fs = std::filesystem;
    const fs::path sub = dir / split;
    if (!fs::is_directory(sub)) {
        throw IoError("dataset split not found: " + sub.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sub)) {
        if (e.is_regular_file() && e.path().extension() == ".pcf") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// Clouds are normalized to the unit cube; normals are used as given.
inline Sample load_sample(const std::filesystem::path& file, std::string_view split)
{
    Sample s;
    s.cloud = normalize_unit_cube(load_pcf(file));
    if (!s.cloud.label || *s.cloud.label < 0) {
        throw FormatError(file.string() + ": missing label in header");
    }
    s.label = *s.cloud.label;
    s.id = std::string(split) + "-" + file.stem().string();
    return s;
}

// <dir>/train/*.pcf and <dir>/test/*.pcf; labels come from the file headers.
inline Dataset load_dataset(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory not found: " + dir.string());
    }
    Dataset d;
    for (auto [split, out] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
        for (const auto& f : dataset_files(dir, split)) {
            out->push_back(load_sample(f, split));
            d.classes = std::max(d.classes, out->back().label + 1);
        }
    }
    return d;
}

} // namespace gccpc::nn
