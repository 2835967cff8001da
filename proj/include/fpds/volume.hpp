// Copyright 2026 The fpds authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fpds/common.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// 3D scalar volumes and integer label volumes on a common voxel grid.
// Data layout is x-fastest, then y, then z.

struct Volume {
    std::array<int, 3> dims{0, 0, 0};          // nx, ny, nz
    std::array<double, 3> spacing{1, 1, 1};    // mm per voxel
    std::vector<double> data;

    size_t size() const {
        return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) *
               static_cast<size_t>(dims[2]);
    }
    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) +
               static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) +
                                               static_cast<size_t>(dims[1]) * static_cast<size_t>(z));
    }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }

    static Volume filled(std::array<int, 3> dims, std::array<double, 3> spacing, double value) {
        Volume v;
        v.dims = dims;
        v.spacing = spacing;
        v.data.assign(v.size(), value);
        return v;
    }
};

struct LabelVolume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1, 1, 1};
    std::vector<uint32_t> labels;

    size_t size() const {
        return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) *
               static_cast<size_t>(dims[2]);
    }
    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) +
               static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) +
                                               static_cast<size_t>(dims[1]) * static_cast<size_t>(z));
    }
    uint32_t& at(int x, int y, int z) { return labels[index(x, y, z)]; }
    uint32_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }
};

inline bool same_geometry(const Volume& v, const LabelVolume& m) {
    return v.dims == m.dims && v.spacing == m.spacing;
}

// ---------------------------------------------------------------------------
// RVOL file format:
//   header line  "RVOL1 nx ny nz sx sy sz dtype\n"   (UTF-8, dtype f32|u32)
//   payload      nx*ny*nz little-endian values, x-fastest
// Spacing is printed with round-trip precision, so header -> parse -> header
// is bit-exact.

namespace detail {

struct RvolHeader {
    std::array<int, 3> dims;
    std::array<double, 3> spacing;
    std::string dtype;
    size_t header_bytes;
};

inline RvolHeader parse_rvol_header(const std::string& bytes, const std::string& path) {
    size_t nl = bytes.find('\n');
    if (nl == std::string::npos) throw DataError(path + ": missing RVOL header line");
    std::istringstream hs(bytes.substr(0, nl));
    std::string magic, dtype;
    long nx = 0, ny = 0, nz = 0;
    std::string sx, sy, sz;
    if (!(hs >> magic >> nx >> ny >> nz >> sx >> sy >> sz >> dtype) || magic != "RVOL1")
        throw DataError(path + ": malformed RVOL header");
    if (nx <= 0 || ny <= 0 || nz <= 0) throw DataError(path + ": non-positive dimensions");
    RvolHeader h;
    h.dims = {static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
    h.spacing = {parse_double(sx, "sx"), parse_double(sy, "sy"), parse_double(sz, "sz")};
    for (double s : h.spacing)
        if (!(s > 0)) throw DataError(path + ": non-positive spacing");
    h.dtype = dtype;
    h.header_bytes = nl + 1;
    return h;
}

inline std::string rvol_header_line(const std::array<int, 3>& dims,
                                    const std::array<double, 3>& spacing,
                                    const std::string& dtype) {
    std::string s = "RVOL1";
    for (int d : dims) s += " " + std::to_string(d);
    for (double sp : spacing) s += " " + format_double(sp);
    s += " " + dtype + "\n";
    return s;
}

}  // namespace detail

inline Volume read_volume(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    auto h = detail::parse_rvol_header(bytes, path);
    if (h.dtype != "f32") throw DataError(path + ": expected dtype f32, got " + h.dtype);
    Volume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    size_t n = v.size();
    if (bytes.size() - h.header_bytes != 4 * n)
        throw DataError(path + ": payload size mismatch (" +
                        std::to_string(bytes.size() - h.header_bytes) + " bytes for " +
                        std::to_string(n) + " voxels)");
    v.data.resize(n);
    LeReader r(bytes.data() + h.header_bytes, bytes.size() - h.header_bytes);
    for (size_t i = 0; i < n; ++i) v.data[i] = static_cast<double>(r.f32());
    return v;
}

inline void write_volume(const Volume& v, const std::string& path) {
    if (v.data.size() != v.size()) throw DataError("volume data length does not match dims");
    std::string bytes = detail::rvol_header_line(v.dims, v.spacing, "f32");
    bytes.reserve(bytes.size() + 4 * v.data.size());
    for (double d : v.data) {
        if (!std::isfinite(d)) throw DataError("non-finite value on volume write: " + path);
        le_put_f32(bytes, static_cast<float>(d));
    }
    write_file_bytes(path, bytes);
}

inline LabelVolume read_label_volume(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    auto h = detail::parse_rvol_header(bytes, path);
    if (h.dtype != "u32") throw DataError(path + ": expected dtype u32, got " + h.dtype);
    LabelVolume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    size_t n = v.size();
    if (bytes.size() - h.header_bytes != 4 * n)
        throw DataError(path + ": payload size mismatch");
    v.labels.resize(n);
    LeReader r(bytes.data() + h.header_bytes, bytes.size() - h.header_bytes);
    for (size_t i = 0; i < n; ++i) v.labels[i] = r.u32();
    return v;
}

inline void write_label_volume(const LabelVolume& v, const std::string& path) {
    if (v.labels.size() != v.size()) throw DataError("label data length does not match dims");
    std::string bytes = detail::rvol_header_line(v.dims, v.spacing, "u32");
    bytes.reserve(bytes.size() + 4 * v.labels.size());
    for (uint32_t l : v.labels) le_put_u32(bytes, l);
    write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------

/// Rescales so the mean over mask-foreground voxels (label != 0) is exactly 1.
inline Volume normalize_foreground_mean(const Volume& v, const LabelVolume& mask) {
    if (!same_geometry(v, mask)) throw DataError("mask geometry does not match volume");
    double sum = 0.0, c = 0.0;
    size_t n_fg = 0;
    for (size_t i = 0; i < v.data.size(); ++i) {
        if (mask.labels[i] == 0) continue;
        ++n_fg;
        double y = v.data[i] - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    if (n_fg == 0) throw DataError("empty foreground mask");
    double mean = sum / static_cast<double>(n_fg);
    if (mean == 0.0) throw DataError("zero foreground mean");
    Volume out = v;
    double scale = 1.0 / mean;
    for (double& d : out.data) d *= scale;
    return out;
}

/// FWHM in mm to Gaussian sigma in mm.
inline double fwhm_to_sigma(double fwhm_mm) {
    return fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

namespace detail {

/// Unit-sum Gaussian taps, truncated at 4 sigma.
inline std::vector<double> gaussian_taps(double sigma_vox) {
    int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_vox)));
    std::vector<double> w(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int d = -radius; d <= radius; ++d) {
        double x = static_cast<double>(d) / sigma_vox;
        w[static_cast<size_t>(d + radius)] = std::exp(-0.5 * x * x);
        sum += w[static_cast<size_t>(d + radius)];
    }
    for (double& x : w) x /= sum;
    return w;
}

/// 1D convolution along `axis`; near the boundary the kernel is renormalized
/// over its in-bounds taps.
inline void smooth_axis(Volume& v, int axis, double sigma_vox) {
    const auto taps = gaussian_taps(sigma_vox);
    const int radius = (static_cast<int>(taps.size()) - 1) / 2;
    const int n = v.dims[axis];
    const size_t stride = axis == 0 ? 1
                        : axis == 1 ? static_cast<size_t>(v.dims[0])
                                    : static_cast<size_t>(v.dims[0]) * static_cast<size_t>(v.dims[1]);

    const int n_lines0 = axis == 0 ? v.dims[1] : v.dims[0];
    const int n_lines1 = axis == 2 ? v.dims[1] : v.dims[2];
    std::vector<double> line(static_cast<size_t>(n));

    for (int b = 0; b < n_lines1; ++b) {
        for (int a = 0; a < n_lines0; ++a) {
            size_t base;
            if (axis == 0) base = v.index(0, a, b);
            else if (axis == 1) base = v.index(a, 0, b);
            else base = v.index(a, b, 0);

            for (int i = 0; i < n; ++i) line[static_cast<size_t>(i)] = v.data[base + stride * static_cast<size_t>(i)];
            for (int i = 0; i < n; ++i) {
                const int lo = std::max(0, i - radius);
                const int hi = std::min(n - 1, i + radius);
                double acc = 0.0, wsum = 0.0;
                for (int j = lo; j <= hi; ++j) {
                    double w = taps[static_cast<size_t>(j - i + radius)];
                    acc += w * line[static_cast<size_t>(j)];
                    wsum += w;
                }
                v.data[base + stride * static_cast<size_t>(i)] = acc / wsum;
            }
        }
    }
}

}  // namespace detail

/// Separable isotropic Gaussian smoothing. Per axis, sigma in voxels is
/// fwhm_mm / (2 sqrt(2 ln 2)) / spacing; taps are truncated at 4 sigma and
/// renormalized to unit sum, with boundary renormalization over in-bounds
/// support.
inline Volume gaussian_smooth(const Volume& v, double fwhm_mm) {
    if (!(fwhm_mm > 0)) throw ConfigError("fwhm_mm must be > 0");
    Volume out = v;
    double sigma_mm = fwhm_to_sigma(fwhm_mm);
    for (int axis = 0; axis < 3; ++axis)
        detail::smooth_axis(out, axis, sigma_mm / v.spacing[static_cast<size_t>(axis)]);
    return out;
}

}  // namespace fpds
