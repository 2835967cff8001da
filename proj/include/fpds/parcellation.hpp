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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fpds/common.hpp"
#include "fpds/parallel.hpp"
#include "fpds/random.hpp"
#include "fpds/volume.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// Subdivision of each ROI into roughly equal-size voxel patches by k-means on
// physical voxel coordinates, repeated over a ladder of patch sizes m. The
// patch count per ROI is max(1, round(|roi|/m)), which keeps the patch density
// near 1/m at every scale.

struct ScaleLadder {
    std::vector<int> patch_sizes;   // strictly increasing voxels-per-patch targets
    bool include_original = true;   // append the ROI parcellation itself as a scale

    int num_scales() const {
        return static_cast<int>(patch_sizes.size()) + (include_original ? 1 : 0);
    }

    /// The 16 patch sizes used throughout, fine to coarse, plus the original
    /// ROI parcellation (17 scales in total).
    static ScaleLadder defaults() {
        return ScaleLadder{{100, 150, 200, 250, 300, 350, 400, 450, 500,
                            1000, 1500, 2000, 3000, 4000, 5000, 10000},
                           true};
    }

    void validate() const {
        for (size_t i = 0; i < patch_sizes.size(); ++i) {
            if (patch_sizes[i] <= 0) throw ConfigError("ladder patch sizes must be positive");
            if (i > 0 && patch_sizes[i] <= patch_sizes[i - 1])
                throw ConfigError("ladder patch sizes must be strictly increasing");
        }
        if (num_scales() == 0) throw ConfigError("empty scale ladder");
    }

    /// scale_m values in pipeline order: patch sizes ascending, then 0 for the
    /// original parcellation.
    std::vector<int> scale_ms() const {
        std::vector<int> out = patch_sizes;
        if (include_original) out.push_back(0);
        return out;
    }
};

struct PatchParcellation {
    int source_roi_count = 0;
    LabelVolume patch_labels;              // nonzero labels are patch ids, dense 1..K
    std::vector<uint32_t> roi_of_patch;    // index patch_id-1 -> source ROI id
    int scale_m = 0;                       // 0 for the original ROI parcellation

    int patch_count() const { return static_cast<int>(roi_of_patch.size()); }

    uint32_t roi_of(uint32_t patch_id) const {
        if (patch_id == 0 || patch_id > roi_of_patch.size())
            throw DataError("patch id out of range: " + std::to_string(patch_id));
        return roi_of_patch[patch_id - 1];
    }
};

namespace detail {

struct P3 {
    double x, y, z;
};

inline double dist2(const P3& a, const P3& b) {
    double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

/// Lloyd k-means with k-means++ seeding over fixed points. Assignments break
/// distance ties toward the lower centroid index; an emptied cluster is
/// reseeded to the point farthest from its assigned centroid. Runs until the
/// assignment fixpoint or max_iter.
inline std::vector<int> kmeans_assign(const std::vector<P3>& pts, int k, Rng& rng,
                                      int max_iter = 100) {
    const int n = static_cast<int>(pts.size());
    std::vector<int> assign(static_cast<size_t>(n), 0);
    if (k <= 1 || n <= 1) return assign;

    // k-means++ seeding; d2 tracks the running min squared distance to the
    // chosen centroids.
    std::vector<P3> centroids;
    centroids.reserve(static_cast<size_t>(k));
    centroids.push_back(pts[rng.below(static_cast<uint64_t>(n))]);
    std::vector<double> d2(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) d2[static_cast<size_t>(i)] = dist2(pts[static_cast<size_t>(i)], centroids[0]);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : d2) total += d;
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        } else {
            double r = rng.uniform01() * total;
            pick = n - 1;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[static_cast<size_t>(i)];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(pts[static_cast<size_t>(pick)]);
        for (int i = 0; i < n; ++i)
            d2[static_cast<size_t>(i)] =
                std::min(d2[static_cast<size_t>(i)], dist2(pts[static_cast<size_t>(i)], centroids.back()));
    }

    std::vector<P3> sums(static_cast<size_t>(k));
    std::vector<int> counts(static_cast<size_t>(k));
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(pts[static_cast<size_t>(i)], centroids[0]);
            for (int c = 1; c < k; ++c) {
                double d = dist2(pts[static_cast<size_t>(i)], centroids[static_cast<size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        for (int c = 0; c < k; ++c) {
            sums[static_cast<size_t>(c)] = {0, 0, 0};
            counts[static_cast<size_t>(c)] = 0;
        }
        for (int i = 0; i < n; ++i) {
            int c = assign[static_cast<size_t>(i)];
            sums[static_cast<size_t>(c)].x += pts[static_cast<size_t>(i)].x;
            sums[static_cast<size_t>(c)].y += pts[static_cast<size_t>(i)].y;
            sums[static_cast<size_t>(c)].z += pts[static_cast<size_t>(i)].z;
            counts[static_cast<size_t>(c)] += 1;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                double inv = 1.0 / counts[static_cast<size_t>(c)];
                centroids[static_cast<size_t>(c)] = {sums[static_cast<size_t>(c)].x * inv,
                                                     sums[static_cast<size_t>(c)].y * inv,
                                                     sums[static_cast<size_t>(c)].z * inv};
            } else {
                // Reseed to the point farthest from its current centroid; the
                // next assignment pass pulls that point (distance zero) in.
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double d = dist2(pts[static_cast<size_t>(i)],
                                     centroids[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[static_cast<size_t>(c)] = pts[static_cast<size_t>(far_i)];
            }
        }
    }
    return assign;
}

}  // namespace detail

/// Per-ROI patch count for |roi| voxels at target patch size m (round half up,
/// floor 1).
inline int patches_for_roi(size_t roi_voxels, int m) {
    return std::max(1, static_cast<int>(std::floor(static_cast<double>(roi_voxels) /
                                                       static_cast<double>(m) +
                                                   0.5)));
}

/// k-means patch subdivision of every ROI at patch size m. ROIs cluster
/// independently (ascending label order, per-ROI child seeds) so results do
/// not depend on the execution schedule; patch ids are dense 1..K.
inline PatchParcellation generate_patches(const LabelVolume& rois, int m, uint64_t seed,
                                          int jobs = 1) {
    if (m <= 0) throw ConfigError("patch size m must be positive");

    // Gather voxel lists per ROI label.
    std::map<uint32_t, std::vector<size_t>> voxels_of;
    const int nx = rois.dims[0], ny = rois.dims[1], nz = rois.dims[2];
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                uint32_t l = rois.at(x, y, z);
                if (l != 0) voxels_of[l].push_back(rois.index(x, y, z));
            }
    if (voxels_of.empty()) throw DataError("ROI volume has no nonzero voxels");

    PatchParcellation out;
    out.source_roi_count = static_cast<int>(voxels_of.size());
    out.scale_m = m;
    out.patch_labels.dims = rois.dims;
    out.patch_labels.spacing = rois.spacing;
    out.patch_labels.labels.assign(rois.size(), 0);

    // Patch counts are known up front, so each ROI gets a fixed id block.
    std::vector<uint32_t> roi_ids;
    std::vector<const std::vector<size_t>*> roi_voxels;
    std::vector<uint32_t> first_patch;
    uint32_t next_patch = 1;
    for (const auto& [roi, vox] : voxels_of) {
        roi_ids.push_back(roi);
        roi_voxels.push_back(&vox);
        first_patch.push_back(next_patch);
        const int k = patches_for_roi(vox.size(), m);
        for (int c = 0; c < k; ++c) out.roi_of_patch.push_back(roi);
        next_patch += static_cast<uint32_t>(k);
    }

    parallel_for(static_cast<int>(roi_ids.size()), jobs, [&](int ri) {
        const auto& vox = *roi_voxels[static_cast<size_t>(ri)];
        const int k = patches_for_roi(vox.size(), m);
        std::vector<detail::P3> pts(vox.size());
        for (size_t i = 0; i < vox.size(); ++i) {
            size_t li = vox[i];
            int x = static_cast<int>(li % static_cast<size_t>(nx));
            int y = static_cast<int>((li / static_cast<size_t>(nx)) % static_cast<size_t>(ny));
            int z = static_cast<int>(li / (static_cast<size_t>(nx) * static_cast<size_t>(ny)));
            pts[i] = {x * rois.spacing[0], y * rois.spacing[1], z * rois.spacing[2]};
        }
        Rng rng(derive_seed(seed, roi_ids[static_cast<size_t>(ri)]));
        std::vector<int> assign = detail::kmeans_assign(pts, k, rng);
        for (size_t i = 0; i < vox.size(); ++i)
            out.patch_labels.labels[vox[i]] =
                first_patch[static_cast<size_t>(ri)] + static_cast<uint32_t>(assign[i]);
    });
    return out;
}

/// The ROI volume itself wrapped as a parcellation: one patch per ROI, patch
/// ids renumbered densely in ascending ROI-label order.
inline PatchParcellation wrap_original(const LabelVolume& rois) {
    std::map<uint32_t, uint32_t> patch_of;  // roi label -> dense patch id
    for (uint32_t l : rois.labels)
        if (l != 0) patch_of.emplace(l, 0);
    if (patch_of.empty()) throw DataError("ROI volume has no nonzero voxels");
    uint32_t next = 1;
    for (auto& [roi, pid] : patch_of) pid = next++;

    PatchParcellation out;
    out.source_roi_count = static_cast<int>(patch_of.size());
    out.scale_m = 0;
    out.patch_labels.dims = rois.dims;
    out.patch_labels.spacing = rois.spacing;
    out.patch_labels.labels.assign(rois.size(), 0);
    for (size_t i = 0; i < rois.labels.size(); ++i)
        if (rois.labels[i] != 0) out.patch_labels.labels[i] = patch_of[rois.labels[i]];
    out.roi_of_patch.resize(patch_of.size());
    for (const auto& [roi, pid] : patch_of) out.roi_of_patch[pid - 1] = roi;
    return out;
}

/// One parcellation per ladder entry (ascending m), plus the original ROI
/// parcellation last when requested. Per-scale seeds are derived from the
/// master seed and m.
inline std::vector<PatchParcellation> multiscale_parcellations(const LabelVolume& rois,
                                                               const ScaleLadder& ladder,
                                                               uint64_t seed, int jobs = 1) {
    ladder.validate();
    std::vector<PatchParcellation> out;
    out.reserve(static_cast<size_t>(ladder.num_scales()));
    for (int m : ladder.patch_sizes)
        out.push_back(generate_patches(rois, m, derive_seed(seed, static_cast<uint64_t>(m)), jobs));
    if (ladder.include_original) out.push_back(wrap_original(rois));
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: RVOL u32 label volume plus a sidecar CSV
// `patch_id,roi_id,scale_m,voxel_count`.

inline void write_parcellation(const PatchParcellation& p, const std::string& rvol_path,
                               const std::string& csv_path) {
    write_label_volume(p.patch_labels, rvol_path);
    std::vector<size_t> counts(p.roi_of_patch.size(), 0);
    for (uint32_t l : p.patch_labels.labels)
        if (l != 0) counts[l - 1]++;
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + csv_path);
    out << "patch_id,roi_id,scale_m,voxel_count\n";
    for (size_t i = 0; i < p.roi_of_patch.size(); ++i)
        out << (i + 1) << "," << p.roi_of_patch[i] << "," << p.scale_m << "," << counts[i] << "\n";
}

inline PatchParcellation read_parcellation(const std::string& rvol_path,
                                           const std::string& csv_path) {
    PatchParcellation p;
    p.patch_labels = read_label_volume(rvol_path);
    CsvTable t = read_csv(csv_path);
    require_header(t, {"patch_id", "roi_id", "scale_m", "voxel_count"}, csv_path);
    p.roi_of_patch.resize(t.rows.size());
    std::map<uint32_t, bool> rois;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        auto pid = static_cast<size_t>(parse_long(t.rows[r][0], "patch_id"));
        if (pid == 0 || pid > t.rows.size()) throw DataError(csv_path + ": patch ids not dense");
        p.roi_of_patch[pid - 1] = static_cast<uint32_t>(parse_long(t.rows[r][1], "roi_id"));
        p.scale_m = static_cast<int>(parse_long(t.rows[r][2], "scale_m"));
        rois[p.roi_of_patch[pid - 1]] = true;
    }
    p.source_roi_count = static_cast<int>(rois.size());
    return p;
}

}  // namespace fpds
