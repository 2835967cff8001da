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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fpds/cohort.hpp"
#include "fpds/common.hpp"
#include "fpds/random.hpp"
#include "fpds/volume.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// Synthetic desk-scale data with known ground truth: a block atlas, volumes
// with class-dependent hypometabolism planted in a chosen set of ROIs, and a
// longitudinal cohort covering all seven strata.

struct PhantomSpec {
    std::array<int, 3> dims{40, 40, 40};
    std::array<double, 3> spacing{1.5, 1.5, 1.5};
    int n_rois = 9;                              // includes the reference ROI
    uint32_t reference_roi_id = 1;
    std::vector<uint32_t> affected_roi_ids{2, 3, 4};
    double effect_size = 2.0;   // mean uptake reduction in affected ROIs, in
                                // units of the within-class (voxel) noise sigma
    double noise_sigma = 0.05;
    std::map<std::string, int> subjects_per_stratum{
        {"sNC", 30}, {"uNC", 8}, {"sMCI", 8}, {"pNC", 8},
        {"pMCI", 8}, {"eDAT", 8}, {"sDAT", 30}};
    int followup_images_per_stable_subject = 1;  // extra imaged visits for sNC/sDAT
    int csf_missing_stride = 7;                  // every Nth image lacks CSF (0 = none)
    uint64_t seed = 1;

    void validate() const {
        for (int d : dims)
            if (d <= 0) throw ConfigError("phantom dims must be positive");
        for (double s : spacing)
            if (!(s > 0)) throw ConfigError("phantom spacing must be positive");
        if (n_rois < 2) throw ConfigError("phantom needs at least 2 ROIs");
        if (reference_roi_id == 0 || reference_roi_id > static_cast<uint32_t>(n_rois))
            throw ConfigError("phantom reference ROI out of range");
        for (uint32_t a : affected_roi_ids) {
            if (a == 0 || a > static_cast<uint32_t>(n_rois))
                throw ConfigError("affected ROI out of range");
            if (a == reference_roi_id)
                throw ConfigError("reference ROI cannot be an affected ROI");
        }
        if (effect_size < 0) throw ConfigError("effect size must be >= 0");
        if (!(noise_sigma > 0)) throw ConfigError("noise sigma must be positive");
    }
};

/// Deterministic block tiling: the grid is split into an a x b x c cell
/// lattice (just large enough for n_rois), the first n_rois cells become ROIs
/// 1..n, remaining cells stay background.
inline LabelVolume make_atlas(const PhantomSpec& spec) {
    spec.validate();
    const int n = spec.n_rois;
    int a = std::max(1, static_cast<int>(std::lround(std::cbrt(static_cast<double>(n)))));
    int b = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n) / a))));
    int c = (n + a * b - 1) / (a * b);
    while (a * b * c < n) ++c;
    if (a > spec.dims[0] || b > spec.dims[1] || c > spec.dims[2])
        throw ConfigError("phantom dims too small to pack " + std::to_string(n) + " ROIs");

    LabelVolume atlas;
    atlas.dims = spec.dims;
    atlas.spacing = spec.spacing;
    atlas.labels.assign(atlas.size(), 0);
    auto cell_of = [](int coord, int dim, int cells) {
        int c0 = coord * cells / dim;
        return std::min(c0, cells - 1);
    };
    for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
            for (int x = 0; x < spec.dims[0]; ++x) {
                int cx = cell_of(x, spec.dims[0], a);
                int cy = cell_of(y, spec.dims[1], b);
                int cz = cell_of(z, spec.dims[2], c);
                int cell = cx + a * (cy + b * cz);
                if (cell < n) atlas.at(x, y, z) = static_cast<uint32_t>(cell + 1);
            }
    return atlas;
}

/// Baseline uptake 1.0 plus voxel noise N(0, noise_sigma); DAT+ subjects get
/// affected-ROI intensities lowered by effect_size * noise_sigma. The
/// reference ROI is never class-dependent.
inline Volume make_subject_volume(const PhantomSpec& spec, const LabelVolume& atlas,
                                  Trajectory trajectory, Rng& rng) {
    Volume v = Volume::filled(atlas.dims, atlas.spacing, 1.0);
    const double reduction = spec.effect_size * spec.noise_sigma;
    const bool affected_class = trajectory == Trajectory::DATplus;
    for (size_t i = 0; i < v.data.size(); ++i) {
        v.data[i] += spec.noise_sigma * rng.normal();
        if (affected_class) {
            uint32_t l = atlas.labels[i];
            for (uint32_t a : spec.affected_roi_ids)
                if (l == a) {
                    v.data[i] -= reduction;
                    break;
                }
        }
    }
    return v;
}

struct PhantomOutput {
    std::filesystem::path atlas_path;
    std::filesystem::path cohort_csv;
    std::filesystem::path manifest_csv;
    int n_images = 0;
};

namespace detail {

struct VisitPlan {
    Diagnosis diagnosis;
    bool has_image;
};

/// Diagnosis/imaging pattern per stratum. The imaged visit carries the
/// stratum label by construction; pMCI and eDAT alternate between their two
/// admissible progression patterns.
inline std::vector<VisitPlan> stratum_visit_plan(const std::string& stratum, int variant,
                                                 int n_followups) {
    using D = Diagnosis;
    std::vector<VisitPlan> plan;
    if (stratum == "sNC") {
        plan = {{D::NC, true}, {D::NC, false}, {D::NC, false}};
        for (int i = 0; i < n_followups && i + 1 < static_cast<int>(plan.size()); ++i)
            plan[static_cast<size_t>(i + 1)].has_image = true;
    } else if (stratum == "uNC") {
        plan = {{D::NC, true}, {D::NC, false}, {D::MCI, false}};
    } else if (stratum == "sMCI") {
        plan = {{D::MCI, true}, {D::MCI, false}};
    } else if (stratum == "pNC") {
        plan = {{D::NC, true}, {D::MCI, false}, {D::DAT, false}};
    } else if (stratum == "pMCI") {
        plan = variant % 2 == 0
                   ? std::vector<VisitPlan>{{D::MCI, true}, {D::DAT, false}}
                   : std::vector<VisitPlan>{{D::NC, false}, {D::MCI, true}, {D::DAT, false}};
    } else if (stratum == "eDAT") {
        plan = variant % 2 == 0
                   ? std::vector<VisitPlan>{{D::MCI, false}, {D::DAT, true}}
                   : std::vector<VisitPlan>{{D::NC, false}, {D::MCI, false}, {D::DAT, true}};
    } else if (stratum == "sDAT") {
        plan = {{D::DAT, true}, {D::DAT, false}, {D::DAT, false}};
        for (int i = 0; i < n_followups && i + 1 < static_cast<int>(plan.size()); ++i)
            plan[static_cast<size_t>(i + 1)].has_image = true;
    } else {
        throw ConfigError("unknown stratum in phantom spec: " + stratum);
    }
    return plan;
}

}  // namespace detail

/// Generates the atlas, subject volumes and cohort CSV under out_dir. DAT+
/// subjects' volumes carry the planted effect from their first visit onward.
/// Output is a pure function of the spec (including its seed).
inline PhantomOutput make_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "volumes");

    LabelVolume atlas = make_atlas(spec);
    PhantomOutput out;
    out.atlas_path = out_dir / "atlas.rvol";
    write_label_volume(atlas, out.atlas_path.string());

    std::ofstream cohort(out_dir / "cohort.csv", std::ios::trunc);
    if (!cohort) throw DataError("cannot write cohort.csv under " + out_dir.string());
    cohort << "subject_id,visit_months,diagnosis,has_image,age_years,mmse,csf_ttau_abeta,"
              "image_path\n";

    // Ground truth: the designated ROIs first, then one row per image.
    std::ofstream manifest(out_dir / "phantom_manifest.csv", std::ios::trunc);
    manifest << "entry,id,stratum,trajectory\n";
    manifest << "reference_roi," << spec.reference_roi_id << ",,\n";
    for (uint32_t a : spec.affected_roi_ids) manifest << "affected_roi," << a << ",,\n";

    const std::vector<std::string> stratum_order = {"sNC", "uNC", "sMCI", "pNC",
                                                    "pMCI", "eDAT", "sDAT"};
    int subject_counter = 0;
    int image_counter = 0;
    for (const auto& stratum : stratum_order) {
        auto it = spec.subjects_per_stratum.find(stratum);
        const int count = it == spec.subjects_per_stratum.end() ? 0 : it->second;
        const Trajectory traj = trajectory_of(parse_stratum(stratum));
        for (int si = 0; si < count; ++si) {
            ++subject_counter;
            char sid[32];
            std::snprintf(sid, sizeof(sid), "P%04d", subject_counter);
            Rng rng(derive_seed(spec.seed, 0xC0F0, static_cast<uint64_t>(subject_counter)));

            auto plan = detail::stratum_visit_plan(stratum, si,
                                                   spec.followup_images_per_stable_subject);
            double base_age = rng.uniform(58.0, 86.0);
            double months = 0.0;
            for (size_t vi = 0; vi < plan.size(); ++vi) {
                if (vi > 0) months += static_cast<double>(rng.uniform_int(6, 12));
                const Diagnosis dx = plan[vi].diagnosis;
                double mmse = dx == Diagnosis::NC    ? rng.uniform(28.0, 30.0)
                              : dx == Diagnosis::MCI ? rng.uniform(24.0, 28.0)
                                                     : rng.uniform(18.0, 24.0);
                double csf = traj == Trajectory::DATplus ? rng.uniform(0.6, 1.5)
                                                         : rng.uniform(0.2, 0.6);
                std::string image_path;
                std::string csf_field = format_double(csf);
                if (plan[vi].has_image) {
                    ++image_counter;
                    std::string image_id =
                        std::string(sid) + "_m" + format_double(months);
                    image_path = "volumes/" + image_id + ".rvol";
                    Rng vol_rng(derive_seed(spec.seed, 0x101A6E,
                                            static_cast<uint64_t>(image_counter)));
                    Volume v = make_subject_volume(spec, atlas, traj, vol_rng);
                    write_volume(v, (out_dir / image_path).string());
                    manifest << "image," << image_id << "," << stratum << ","
                             << to_string(traj) << "\n";
                    if (spec.csf_missing_stride > 0 &&
                        image_counter % spec.csf_missing_stride == 0)
                        csf_field.clear();
                }
                cohort << sid << "," << format_double(months) << "," << to_string(dx) << ","
                       << (plan[vi].has_image ? 1 : 0) << ","
                       << format_double(base_age + months / 12.0) << ","
                       << format_double(std::round(mmse * 10.0) / 10.0) << "," << csf_field
                       << "," << image_path << "\n";
            }
        }
    }
    out.cohort_csv = out_dir / "cohort.csv";
    out.manifest_csv = out_dir / "phantom_manifest.csv";
    out.n_images = image_counter;
    return out;
}

}  // namespace fpds
