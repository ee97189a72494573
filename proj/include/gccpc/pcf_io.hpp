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

// Plain-text point cloud files:
//
//   #pcf fields=xyz,normal,color label=3
//   x y z nx ny nz r g b
//   ...
//
// Values are written with 9 significant digits.

#pragma once

#include "gccpc/geometry.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace gccpc {

inline void write_pcf(std::ostream& os, const PointCloud& cloud)
{
    os << "#pcf fields=xyz";
    if (cloud.has_normals()) {
        os << ",normal";
    }
    if (cloud.has_colors()) {
        os << ",color";
    }
    if (cloud.label) {
        os << " label=" << *cloud.label;
    }
    os << '\n';
    char buf[64];
    auto put = [&](const Vec3& v) {
        for (int a = 0; a < 3; ++a) {
            std::snprintf(buf, sizeof(buf), "%.9g", v[a]);
            os << ' ' << buf;
        }
    };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", cloud.positions[i].x(),
                      cloud.positions[i].y(), cloud.positions[i].z());
        os << buf;
        if (cloud.has_normals()) {
            put((*cloud.normals)[i]);
        }
        if (cloud.has_colors()) {
            put((*cloud.colors)[i]);
        }
        os << '\n';
    }
}

inline PointCloud read_pcf(std::istream& is)
{
    PointCloud cloud;
    bool with_normals = false;
    bool with_colors = false;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            if (!header_seen && line.rfind("#pcf", 0) == 0) {
                header_seen = true;
                std::istringstream hs(line.substr(4));
                std::string token;
                while (hs >> token) {
                    if (token.rfind("fields=", 0) == 0) {
                        std::istringstream fs(token.substr(7));
                        std::string field;
                        bool has_xyz = false;
                        while (std::getline(fs, field, ',')) {
                            if (field == "xyz") {
                                has_xyz = true;
                            } else if (field == "normal") {
                                with_normals = true;
                            } else if (field == "color") {
                                with_colors = true;
                            } else {
                                throw FormatError("pcf: unknown field '" + field + "'");
                            }
                        }
                        if (!has_xyz) {
                            throw FormatError("pcf: fields must include xyz");
                        }
                    } else if (token.rfind("label=", 0) == 0) {
                        try {
                            cloud.label = std::stoi(token.substr(6));
                        } catch (const std::exception&) {
                            throw FormatError("pcf: bad label '" + token + "'");
                        }
                    } else {
                        throw FormatError("pcf: unknown header token '" + token + "'");
                    }
                }
                if (with_normals) {
                    cloud.normals.emplace();
                }
                if (with_colors) {
                    cloud.colors.emplace();
                }
            }
            continue;
        }
        const std::size_t expected = 3 + (with_normals ? 3 : 0) + (with_colors ? 3 : 0);
        double v[9];
        std::size_t count = 0;
        const char* p = line.c_str();
        char* end = nullptr;
        for (;;) {
            const double x = std::strtod(p, &end);
            if (end == p) {
                break;
            }
            if (count == 9) {
                ++count;
                break;
            }
            v[count++] = x;
            p = end;
        }
        while (*p == ' ' || *p == '\t' || *p == '\r') {
            ++p;
        }
        if (count != expected || *p != '\0') {
            throw FormatError("pcf: line " + std::to_string(line_no) + ": expected " +
                              std::to_string(expected) + " values");
        }
        cloud.positions.emplace_back(v[0], v[1], v[2]);
        std::size_t at = 3;
        if (with_normals) {
            cloud.normals->emplace_back(v[at], v[at + 1], v[at + 2]);
            at += 3;
        }
        if (with_colors) {
            cloud.colors->emplace_back(v[at], v[at + 1], v[at + 2]);
        }
    }
    return cloud;
}

inline void save_pcf(const std::filesystem::path& path, const PointCloud& cloud)
{
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open for writing: " + path.string());
    }
    write_pcf(os, cloud);
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

inline PointCloud load_pcf(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open: " + path.string());
    }
    return read_pcf(is);
}

} // namespace gccpc
