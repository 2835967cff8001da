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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fpds/common.hpp"
#include "fpds/parcellation.hpp"
#include "fpds/volume.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// Patch-wise SUVR features: mean intensity per patch divided by the mean
// intensity of the reference ROI. Patches that belong to the reference ROI
// carry no signal (their SUVR is ~1 by construction) and are excluded from the
// feature vector by default.

struct FeatureVector {
    int scale_m = 0;
    std::vector<uint32_t> patch_ids;  // ascending
    std::vector<double> values;       // aligned with patch_ids
};

struct MultiScaleFeatureSet {
    std::string image_id;
    std::vector<FeatureVector> scales;  // ladder order
};

inline FeatureVector patch_suvr(const Volume& v, const PatchParcellation& p,
                                uint32_t reference_roi_id,
                                bool include_reference_patches = false) {
    if (!same_geometry(v, p.patch_labels))
        throw DataError("volume geometry does not match parcellation");

    const int n_patches = p.patch_count();
    std::vector<double> sums(static_cast<size_t>(n_patches), 0.0);
    std::vector<double> comp(static_cast<size_t>(n_patches), 0.0);
    std::vector<size_t> counts(static_cast<size_t>(n_patches), 0);
    for (size_t i = 0; i < v.data.size(); ++i) {
        uint32_t pid = p.patch_labels.labels[i];
        if (pid == 0) continue;
        size_t j = pid - 1;
        double y = v.data[i] - comp[j];
        double t = sums[j] + y;
        comp[j] = (t - sums[j]) - y;
        sums[j] = t;
        counts[j]++;
    }

    double ref_sum = 0.0;
    size_t ref_count = 0;
    for (int j = 0; j < n_patches; ++j)
        if (p.roi_of_patch[static_cast<size_t>(j)] == reference_roi_id) {
            ref_sum += sums[static_cast<size_t>(j)];
            ref_count += counts[static_cast<size_t>(j)];
        }
    if (ref_count == 0)
        throw DataError("reference ROI " + std::to_string(reference_roi_id) +
                        " is empty in the parcellation");
    double ref_mean = ref_sum / static_cast<double>(ref_count);
    if (ref_mean == 0.0) throw DataError("zero-mean reference region");

    FeatureVector out;
    out.scale_m = p.scale_m;
    for (int j = 0; j < n_patches; ++j) {
        if (!include_reference_patches &&
            p.roi_of_patch[static_cast<size_t>(j)] == reference_roi_id)
            continue;
        if (counts[static_cast<size_t>(j)] == 0) continue;  // empty patch carries no value
        double mean = sums[static_cast<size_t>(j)] / static_cast<double>(counts[static_cast<size_t>(j)]);
        out.patch_ids.push_back(static_cast<uint32_t>(j + 1));
        out.values.push_back(mean / ref_mean);
    }
    return out;
}

inline MultiScaleFeatureSet extract_multiscale(const Volume& v,
                                               const std::vector<PatchParcellation>& parcellations,
                                               uint32_t reference_roi_id,
                                               const std::string& image_id,
                                               bool include_reference_patches = false) {
    MultiScaleFeatureSet out;
    out.image_id = image_id;
    out.scales.reserve(parcellations.size());
    for (const auto& p : parcellations)
        out.scales.push_back(patch_suvr(v, p, reference_roi_id, include_reference_patches));
    return out;
}

// ---------------------------------------------------------------------------
// CSV serialization: `image_id,scale_m,patch_id,suvr`, scales in ladder order.

inline void write_features_csv(const MultiScaleFeatureSet& fs, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "image_id,scale_m,patch_id,suvr\n";
    for (const auto& fv : fs.scales)
        for (size_t i = 0; i < fv.patch_ids.size(); ++i)
            out << fs.image_id << "," << fv.scale_m << "," << fv.patch_ids[i] << ","
                << format_double(fv.values[i]) << "\n";
}

inline MultiScaleFeatureSet read_features_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    require_header(t, {"image_id", "scale_m", "patch_id", "suvr"}, path);
    MultiScaleFeatureSet fs;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (fs.image_id.empty()) fs.image_id = row[0];
        else if (fs.image_id != row[0])
            throw DataError(path + ": multiple image ids in one feature file");
        int m = static_cast<int>(parse_long(row[1], "scale_m"));
        if (fs.scales.empty() || fs.scales.back().scale_m != m) {
            for (const auto& sc : fs.scales)
                if (sc.scale_m == m)
                    throw DataError(path + ": scale " + row[1] + " appears in two blocks");
            fs.scales.push_back(FeatureVector{m, {}, {}});
        }
        auto& fv = fs.scales.back();
        auto pid = static_cast<uint32_t>(parse_long(row[2], "patch_id"));
        if (!fv.patch_ids.empty() && pid <= fv.patch_ids.back())
            throw DataError(path + ": patch ids not ascending within scale " + row[1]);
        fv.patch_ids.push_back(pid);
        fv.values.push_back(parse_double(row[3], "suvr"));
    }
    if (fs.scales.empty()) throw DataError(path + ": no feature rows");
    return fs;
}

}  // namespace fpds
