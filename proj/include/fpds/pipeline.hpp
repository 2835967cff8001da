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

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpds/cohort.hpp"
#include "fpds/common.hpp"
#include "fpds/features.hpp"
#include "fpds/learn.hpp"
#include "fpds/metrics.hpp"
#include "fpds/parallel.hpp"
#include "fpds/parcellation.hpp"
#include "fpds/phantom.hpp"
#include "fpds/volume.hpp"

namespace fpds {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration: one JSON document with named defaults for every constant,
// overridable from the CLI with --set key=value.

struct EvaluationConfig {
    double threshold = 0.5;
    std::vector<double> age_edges = linspace_edges(55.0, 95.0, 5.0);
    std::vector<double> ttc_edges = linspace_edges(0.0, 10.0, 1.0);
    std::vector<double> conversion_windows_years{2.0, 3.0, 5.0};
    double normality_alpha = 0.05;
};

struct PipelineConfig {
    fs::path atlas_path;
    fs::path cohort_csv;
    fs::path output_dir = "out";

    uint64_t seed = 20260811;
    int jobs = 1;
    uint32_t reference_roi_id = 1;
    double smoothing_fwhm_mm = 8.0;
    ScaleLadder ladder = ScaleLadder::defaults();
    EnsembleConfig ensemble;  // F, gamma, ridge; seed/ladder filled from above
    EvaluationConfig evaluation;
    bool log_members = false;

    bool phantom_generate = false;
    PhantomSpec phantom;

    nlohmann::json raw;  // the merged document this config was built from
};

namespace detail {

inline nlohmann::json default_config_json() {
    nlohmann::json j;
    j["paths"] = {{"atlas", ""}, {"cohort_csv", ""}, {"output_dir", "out"}};
    j["seed"] = 20260811;
    j["jobs"] = 1;
    j["reference_roi_id"] = 1;
    j["smoothing_fwhm_mm"] = 8.0;
    j["ladder"] = {{"patch_sizes", ScaleLadder::defaults().patch_sizes},
                   {"include_original", true}};
    j["ensemble"] = {{"F", 100}, {"gamma", 0.8}, {"ridge", 0.01}};
    j["evaluation"] = {{"threshold", 0.5},
                       {"age_edges", linspace_edges(55.0, 95.0, 5.0)},
                       {"ttc_edges", linspace_edges(0.0, 10.0, 1.0)},
                       {"conversion_windows_years", {2.0, 3.0, 5.0}},
                       {"normality_alpha", 0.05}};
    j["score"] = {{"log_members", false}};
    PhantomSpec ph;
    j["phantom"] = {{"generate", false},
                    {"dims", ph.dims},
                    {"spacing", ph.spacing},
                    {"n_rois", ph.n_rois},
                    {"reference_roi_id", ph.reference_roi_id},
                    {"affected_roi_ids", ph.affected_roi_ids},
                    {"effect_size", ph.effect_size},
                    {"noise_sigma", ph.noise_sigma},
                    {"subjects_per_stratum", ph.subjects_per_stratum},
                    {"followup_images_per_stable_subject", ph.followup_images_per_stable_subject},
                    {"csf_missing_stride", ph.csf_missing_stride}};
    return j;
}

}  // namespace detail

/// Builds a config from the defaults deep-merged with `file_json` and then the
/// `overrides` list of dotted key=value pairs (values parsed as JSON when
/// possible, as strings otherwise).
inline PipelineConfig make_config(const nlohmann::json& file_json,
                                  const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = detail::default_config_json();
    j.merge_patch(file_json);

    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        std::string pointer = "/";
        for (char c : key) pointer += c == '.' ? '/' : c;
        nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;
        j[nlohmann::json::json_pointer(pointer)] = parsed;
    }

    PipelineConfig c;
    c.raw = j;
    try {
        c.atlas_path = j.at("paths").at("atlas").get<std::string>();
        c.cohort_csv = j.at("paths").at("cohort_csv").get<std::string>();
        c.output_dir = j.at("paths").at("output_dir").get<std::string>();
        c.seed = j.at("seed").get<uint64_t>();
        c.jobs = j.at("jobs").get<int>();
        c.reference_roi_id = j.at("reference_roi_id").get<uint32_t>();
        c.smoothing_fwhm_mm = j.at("smoothing_fwhm_mm").get<double>();
        c.ladder.patch_sizes = j.at("ladder").at("patch_sizes").get<std::vector<int>>();
        c.ladder.include_original = j.at("ladder").at("include_original").get<bool>();
        c.ensemble.F = j.at("ensemble").at("F").get<int>();
        c.ensemble.gamma = j.at("ensemble").at("gamma").get<double>();
        c.ensemble.ridge = j.at("ensemble").at("ridge").get<double>();
        c.evaluation.threshold = j.at("evaluation").at("threshold").get<double>();
        c.evaluation.age_edges = j.at("evaluation").at("age_edges").get<std::vector<double>>();
        c.evaluation.ttc_edges = j.at("evaluation").at("ttc_edges").get<std::vector<double>>();
        c.evaluation.conversion_windows_years =
            j.at("evaluation").at("conversion_windows_years").get<std::vector<double>>();
        c.evaluation.normality_alpha = j.at("evaluation").at("normality_alpha").get<double>();
        c.log_members = j.at("score").at("log_members").get<bool>();

        const auto& ph = j.at("phantom");
        c.phantom_generate = ph.at("generate").get<bool>();
        c.phantom.dims = ph.at("dims").get<std::array<int, 3>>();
        c.phantom.spacing = ph.at("spacing").get<std::array<double, 3>>();
        c.phantom.n_rois = ph.at("n_rois").get<int>();
        c.phantom.reference_roi_id = ph.at("reference_roi_id").get<uint32_t>();
        c.phantom.affected_roi_ids = ph.at("affected_roi_ids").get<std::vector<uint32_t>>();
        c.phantom.effect_size = ph.at("effect_size").get<double>();
        c.phantom.noise_sigma = ph.at("noise_sigma").get<double>();
        c.phantom.subjects_per_stratum =
            ph.at("subjects_per_stratum").get<std::map<std::string, int>>();
        c.phantom.followup_images_per_stable_subject =
            ph.at("followup_images_per_stable_subject").get<int>();
        c.phantom.csf_missing_stride = ph.at("csf_missing_stride").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.ensemble.seed = c.seed;
    c.ensemble.ladder = c.ladder;
    c.phantom.seed = c.seed;
    c.ladder.validate();
    c.ensemble.validate();
    if (c.jobs < 1) throw ConfigError("jobs must be >= 1");

    // A self-contained phantom run resolves its own data paths.
    if (c.phantom_generate) {
        if (c.atlas_path.empty()) c.atlas_path = c.output_dir / "phantom" / "atlas.rvol";
        if (c.cohort_csv.empty()) c.cohort_csv = c.output_dir / "phantom" / "cohort.csv";
    }
    return c;
}

inline PipelineConfig load_config(const std::string& path,
                                  const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
    return make_config(j, overrides);
}

// ---------------------------------------------------------------------------
// Per-image view of a stratified cohort (the strata.csv row).

struct ImageRow {
    std::string image_id;
    std::string subject_id;
    double visit_months = 0.0;
    StratumLabel stratum = StratumLabel::sNC;
    Trajectory trajectory = Trajectory::DATminus;
    std::optional<double> ttc_years;
    std::optional<double> age_years;
    std::optional<double> mmse;
    std::optional<double> csf;
    bool baseline = false;  // first imaged visit of the subject
    std::string image_path; // relative to the cohort CSV's directory
};

struct StratifiedCohort {
    std::vector<ImageRow> images;
    std::vector<std::pair<std::string, std::string>> exclusions;  // subject, reason
};

inline std::string image_id_of(const std::string& subject_id, double visit_months) {
    return subject_id + "_m" + format_double(visit_months);
}

/// Labels every imaged visit; records whose diagnosis sequence cannot be
/// stratified are excluded with the reason kept.
inline StratifiedCohort stratify_records(const std::vector<LongitudinalRecord>& records) {
    StratifiedCohort out;
    for (const auto& rec : records) {
        try {
            require_monotone(rec);
        } catch (const DataError& e) {
            out.exclusions.emplace_back(rec.subject_id, e.what());
            continue;
        }
        bool first_image = true;
        for (size_t vi = 0; vi < rec.visits.size(); ++vi) {
            const Visit& v = rec.visits[vi];
            if (!v.has_image) continue;
            ImageRow row;
            row.image_id = image_id_of(rec.subject_id, v.visit_months);
            row.subject_id = rec.subject_id;
            row.visit_months = v.visit_months;
            row.stratum = assign_stratum(rec, vi);
            row.trajectory = trajectory_of(row.stratum);
            row.ttc_years = time_to_conversion(rec, vi);
            row.age_years = v.age_years;
            row.mmse = v.mmse;
            row.csf = v.csf_ttau_abeta;
            row.baseline = first_image;
            row.image_path = v.image_path;
            first_image = false;
            out.images.push_back(std::move(row));
        }
    }
    return out;
}

inline constexpr const char* kStrataHeader[] = {
    "image_id", "subject_id", "visit_months",  "stratum", "trajectory",
    "time_to_conversion_years", "age_years", "mmse", "csf_ttau_abeta",
    "baseline", "image_path"};

inline void write_strata_csv(const StratifiedCohort& cohort, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    for (size_t i = 0; i < std::size(kStrataHeader); ++i)
        out << (i ? "," : "") << kStrataHeader[i];
    out << "\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : ""; };
    for (const auto& r : cohort.images)
        out << r.image_id << "," << r.subject_id << "," << format_double(r.visit_months) << ","
            << to_string(r.stratum) << "," << to_string(r.trajectory) << "," << opt(r.ttc_years)
            << "," << opt(r.age_years) << "," << opt(r.mmse) << "," << opt(r.csf) << ","
            << (r.baseline ? 1 : 0) << "," << r.image_path << "\n";
}

inline std::vector<ImageRow> read_strata_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    require_header(t, std::vector<std::string>(std::begin(kStrataHeader), std::end(kStrataHeader)),
                   path);
    std::vector<ImageRow> rows;
    for (const auto& row : t.rows) {
        ImageRow r;
        r.image_id = row[0];
        r.subject_id = row[1];
        r.visit_months = parse_double(row[2], "visit_months");
        r.stratum = parse_stratum(row[3]);
        r.trajectory = trajectory_of(r.stratum);
        if (!row[5].empty()) r.ttc_years = parse_double(row[5], "time_to_conversion_years");
        if (!row[6].empty()) r.age_years = parse_double(row[6], "age_years");
        if (!row[7].empty()) r.mmse = parse_double(row[7], "mmse");
        if (!row[8].empty()) r.csf = parse_double(row[8], "csf_ttau_abeta");
        r.baseline = row[9] == "1";
        r.image_path = row[10];
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Parcellation cache, keyed by the content hash of (atlas bytes, ladder, seed).

inline fs::path cache_root(const PipelineConfig& c) {
    if (const char* env = std::getenv("FPDS_CACHE_DIR"); env && *env) return fs::path(env);
    return c.output_dir / "cache";
}

inline std::string parcellation_cache_key(const std::string& atlas_bytes,
                                          const ScaleLadder& ladder, uint64_t seed) {
    uint64_t h = fnv1a64(atlas_bytes);
    for (int m : ladder.patch_sizes) h = fnv1a64(&m, sizeof(m), h);
    int orig = ladder.include_original ? 1 : 0;
    h = fnv1a64(&orig, sizeof(orig), h);
    h = fnv1a64(&seed, sizeof(seed), h);
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Loads the multi-scale parcellation from the cache or generates and caches
/// it. The cache entry is only trusted once its `complete` marker exists.
inline std::vector<PatchParcellation> load_or_build_parcellations(const PipelineConfig& c,
                                                                  const LabelVolume& atlas,
                                                                  const std::string& atlas_bytes,
                                                                  bool* cache_hit = nullptr) {
    const std::string key = parcellation_cache_key(atlas_bytes, c.ladder, c.seed);
    const fs::path dir = cache_root(c) / key;
    const auto scale_ms = c.ladder.scale_ms();

    if (fs::exists(dir / "complete")) {
        std::vector<PatchParcellation> out;
        for (int m : scale_ms) {
            std::string stem = "parc_m" + std::to_string(m);
            out.push_back(read_parcellation((dir / (stem + ".rvol")).string(),
                                            (dir / (stem + ".csv")).string()));
        }
        if (cache_hit) *cache_hit = true;
        return out;
    }

    auto parcs = multiscale_parcellations(atlas, c.ladder, c.seed, c.jobs);
    fs::create_directories(dir);
    for (const auto& p : parcs) {
        std::string stem = "parc_m" + std::to_string(p.scale_m);
        write_parcellation(p, (dir / (stem + ".rvol")).string(), (dir / (stem + ".csv")).string());
    }
    std::ofstream marker(dir / "complete");
    marker << key << "\n";
    if (cache_hit) *cache_hit = false;
    return parcs;
}

// ---------------------------------------------------------------------------
// Subcommands. Each one reads its upstream files from the output directory and
// writes its own products there, so the pipeline can be resumed per stage.

struct StratifyResult {
    int n_images = 0;
    int n_excluded = 0;
};

inline StratifyResult cmd_stratify(const PipelineConfig& c) {
    if (c.cohort_csv.empty()) throw ConfigError("paths.cohort_csv is not set");
    auto records = load_cohort(c.cohort_csv.string());
    auto cohort = stratify_records(records);
    fs::create_directories(c.output_dir);
    write_strata_csv(cohort, (c.output_dir / "strata.csv").string());
    std::ofstream ex(c.output_dir / "exclusions.csv", std::ios::trunc);
    ex << "subject_id,reason\n";
    for (auto [sid, reason] : cohort.exclusions) {
        for (char& ch : reason)
            if (ch == ',' || ch == '\n') ch = ';';
        ex << sid << "," << reason << "\n";
    }
    if (cohort.images.empty())
        std::cerr << "warning: cohort contains no images\n";
    return {static_cast<int>(cohort.images.size()), static_cast<int>(cohort.exclusions.size())};
}

struct ExtractResult {
    int n_extracted = 0;
    int n_failed = 0;
    bool cache_hit = false;
};

/// normalize -> smooth -> parcellate (cached) -> SUVR per scale, one feature
/// CSV per image. Per-image failures are recorded and the run continues.
inline ExtractResult cmd_extract(const PipelineConfig& c) {
    if (c.atlas_path.empty()) throw ConfigError("paths.atlas is not set");
    const fs::path strata_path = c.output_dir / "strata.csv";
    if (!fs::exists(strata_path))
        throw DataError("strata.csv not found under " + c.output_dir.string() +
                        " (run stratify first)");
    auto rows = read_strata_csv(strata_path.string());

    const std::string atlas_bytes = read_file_bytes(c.atlas_path.string());
    LabelVolume atlas = read_label_volume(c.atlas_path.string());
    ExtractResult res;
    auto parcs = load_or_build_parcellations(c, atlas, atlas_bytes, &res.cache_hit);

    const fs::path feature_dir = c.output_dir / "features";
    fs::create_directories(feature_dir);
    const fs::path image_base = c.cohort_csv.parent_path();

    std::vector<std::string> errors(rows.size());
    std::vector<char> ok(rows.size(), 0);
    parallel_for(static_cast<int>(rows.size()), c.jobs, [&](int i) {
        const auto& row = rows[static_cast<size_t>(i)];
        try {
            Volume v = read_volume((image_base / row.image_path).string());
            if (!same_geometry(v, atlas))
                throw DataError("image geometry does not match the atlas");
            v = normalize_foreground_mean(v, atlas);
            v = gaussian_smooth(v, c.smoothing_fwhm_mm);
            auto features = extract_multiscale(v, parcs, c.reference_roi_id, row.image_id);
            write_features_csv(features, (feature_dir / (row.image_id + ".csv")).string());
            ok[static_cast<size_t>(i)] = 1;
        } catch (const std::exception& e) {
            errors[static_cast<size_t>(i)] = e.what();
        }
    });

    std::ofstream fail(c.output_dir / "extract_failures.csv", std::ios::trunc);
    fail << "image_id,error\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        if (ok[i]) {
            res.n_extracted++;
        } else {
            res.n_failed++;
            for (char& ch : errors[i])
                if (ch == ',' || ch == '\n') ch = ';';
            fail << rows[i].image_id << "," << errors[i] << "\n";
        }
    }
    return res;
}

struct TrainResult {
    int n_classifiers = 0;
    int n_training_images = 0;
    bool all_converged = true;
};

/// Trains on baseline sNC (DAT-) vs baseline sDAT (DAT+) images only. A
/// missing feature file for any training image is a hard error.
inline TrainResult cmd_train(const PipelineConfig& c) {
    const fs::path strata_path = c.output_dir / "strata.csv";
    if (!fs::exists(strata_path))
        throw DataError("strata.csv not found (run stratify first)");
    auto rows = read_strata_csv(strata_path.string());

    std::vector<MultiScaleFeatureSet> features;
    std::vector<Trajectory> labels;
    for (const auto& row : rows) {
        if (!row.baseline) continue;
        if (row.stratum != StratumLabel::sNC && row.stratum != StratumLabel::sDAT) continue;
        const fs::path f = c.output_dir / "features" / (row.image_id + ".csv");
        if (!fs::exists(f))
            throw DataError("missing features for training image " + row.image_id +
                            " (expected " + f.string() + ")");
        features.push_back(read_features_csv(f.string()));
        labels.push_back(row.trajectory);
    }
    if (features.empty()) throw DataError("no baseline sNC/sDAT images to train on");

    EnsembleConfig ec = c.ensemble;
    ec.seed = c.seed;
    ec.ladder = c.ladder;
    EnsembleModel model = train_ensemble(features, labels, ec, c.jobs);
    save_model(model, (c.output_dir / "model.fpds").string());

    TrainResult res;
    res.n_classifiers = static_cast<int>(model.classifiers.size());
    res.n_training_images = static_cast<int>(features.size());
    std::ofstream log(c.output_dir / "training_log.csv", std::ios::trunc);
    log << "scale_index,scale_m,subset_index,subset_size,k,converged,iterations\n";
    for (const auto& cl : model.classifiers) {
        log << cl.scale_index << "," << model.scale_ms[static_cast<size_t>(cl.scale_index)] << ","
            << cl.subset_index << ","
            << model.subsets[static_cast<size_t>(cl.subset_index)].member_indices.size() << ","
            << cl.selected_feature_ids.size() << "," << (cl.converged ? 1 : 0) << ","
            << cl.iterations << "\n";
        res.all_converged &= cl.converged;
    }
    return res;
}

struct ScoreResult {
    int n_scored = 0;
    int n_oob = 0;
    int n_skipped = 0;  // images without extracted features
};

/// Out-of-bag fusion for training images, full fusion for everything else.
inline ScoreResult cmd_score(const PipelineConfig& c) {
    const fs::path strata_path = c.output_dir / "strata.csv";
    if (!fs::exists(strata_path)) throw DataError("strata.csv not found (run stratify first)");
    auto rows = read_strata_csv(strata_path.string());
    EnsembleModel model = load_model((c.output_dir / "model.fpds").string());

    std::map<std::string, int> train_index;
    for (size_t i = 0; i < model.training_image_ids.size(); ++i)
        train_index[model.training_image_ids[i]] = static_cast<int>(i);

    std::ofstream out(c.output_dir / "scores.csv", std::ios::trunc);
    out << "image_id,fpds,n_fused,oob,stratum,trajectory\n";
    std::ofstream members_out;
    if (c.log_members) {
        members_out.open(c.output_dir / "members.csv", std::ios::trunc);
        members_out << "image_id,scale_index,subset_index,scale_m,probability\n";
    }

    ScoreResult res;
    for (const auto& row : rows) {
        const fs::path f = c.output_dir / "features" / (row.image_id + ".csv");
        if (!fs::exists(f)) {
            res.n_skipped++;
            continue;
        }
        MultiScaleFeatureSet sample = read_features_csv(f.string());
        auto it = train_index.find(row.image_id);
        const bool oob = it != train_index.end();
        if (oob && (!row.baseline || (row.stratum != StratumLabel::sNC &&
                                      row.stratum != StratumLabel::sDAT)))
            throw DataError("training image " + row.image_id +
                            " is not a baseline sNC/sDAT image; training/validation sets overlap");
        std::vector<MemberPrediction> members;
        Fpds result = oob ? fpds_oob(model, sample, it->second, c.log_members ? &members : nullptr)
                          : fpds_score(model, sample, c.log_members ? &members : nullptr);
        out << row.image_id << "," << format_double(result.score) << ","
            << result.n_classifiers_fused << "," << (oob ? 1 : 0) << "," << to_string(row.stratum)
            << "," << to_string(row.trajectory) << "\n";
        if (c.log_members)
            for (const auto& m : members)
                members_out << row.image_id << "," << m.scale_index << "," << m.subset_index << ","
                            << model.scale_ms[static_cast<size_t>(m.scale_index)] << ","
                            << format_double(m.probability) << "\n";
        res.n_scored++;
        if (oob) res.n_oob++;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation: joins strata.csv and scores.csv and emits the seven report files
// plus a human-readable summary.

namespace detail {

struct ScoredImage {
    ImageRow row;
    double fpds = 0.0;
    int n_fused = 0;
    bool oob = false;
};

inline std::vector<ScoredImage> join_scores(const PipelineConfig& c) {
    auto rows = read_strata_csv((c.output_dir / "strata.csv").string());
    CsvTable t = read_csv((c.output_dir / "scores.csv").string());
    require_header(t, {"image_id", "fpds", "n_fused", "oob", "stratum", "trajectory"},
                   (c.output_dir / "scores.csv").string());
    std::map<std::string, const ImageRow*> by_id;
    for (const auto& r : rows) by_id[r.image_id] = &r;
    std::vector<ScoredImage> out;
    for (const auto& row : t.rows) {
        auto it = by_id.find(row[0]);
        if (it == by_id.end())
            throw DataError("scores.csv references unknown image " + row[0]);
        ScoredImage s;
        s.row = *it->second;
        s.fpds = parse_double(row[1], "fpds");
        s.n_fused = static_cast<int>(parse_long(row[2], "n_fused"));
        s.oob = row[3] == "1";
        out.push_back(std::move(s));
    }
    return out;
}

inline int traj01(Trajectory t) { return t == Trajectory::DATplus ? 1 : 0; }

inline std::string fmt_or_blank(std::optional<double> v) {
    return v ? format_double(*v) : std::string();
}

/// n, mean over a subset selected by pred.
template <typename Pred>
std::pair<size_t, double> group_mean(const std::vector<ScoredImage>& xs, Pred pred) {
    std::vector<double> vals;
    for (const auto& x : xs)
        if (pred(x)) vals.push_back(x.fpds);
    if (vals.empty()) return {0, 0.0};
    return {vals.size(), mean_of(vals)};
}

}  // namespace detail

struct EvaluateResult {
    int n_report_files = 0;
    std::optional<double> validation_auc;
};

inline EvaluateResult cmd_evaluate(const PipelineConfig& c) {
    using detail::ScoredImage;
    std::vector<ScoredImage> scored = detail::join_scores(c);
    if (scored.empty()) throw DataError("no scored images to evaluate");
    const fs::path rep = c.output_dir / "reports";
    fs::create_directories(rep);
    const double thr = c.evaluation.threshold;
    EvaluateResult res;

    std::ostringstream summary;
    summary << "evaluation summary\n==================\n";

    // (1) Training-fit report: baseline sNC/sDAT via out-of-bag scores, then
    // follow-up sNC/sDAT images scored by the full ensemble.
    {
        std::ofstream out(rep / "train_fit.csv", std::ios::trunc);
        out << "cohort,n_sNC,n_sDAT,mean_fpds_sNC,mean_fpds_sDAT,auc,accuracy,sensitivity,"
               "specificity,balanced_accuracy,threshold\n";
        for (const std::string cohort : {"baseline_oob", "followup"}) {
            const bool want_baseline = cohort == "baseline_oob";
            auto in_cohort = [&](const ScoredImage& s) {
                return (s.row.stratum == StratumLabel::sNC ||
                        s.row.stratum == StratumLabel::sDAT) &&
                       s.row.baseline == want_baseline && s.oob == want_baseline;
            };
            std::vector<double> scores;
            std::vector<int> labels;
            size_t n_nc = 0, n_dat = 0;
            double sum_nc = 0.0, sum_dat = 0.0;
            for (const auto& s : scored)
                if (in_cohort(s)) {
                    scores.push_back(s.fpds);
                    labels.push_back(detail::traj01(s.row.trajectory));
                    if (s.row.stratum == StratumLabel::sNC) {
                        ++n_nc;
                        sum_nc += s.fpds;
                    } else {
                        ++n_dat;
                        sum_dat += s.fpds;
                    }
                }
            if (n_nc == 0 || n_dat == 0) continue;
            auto roc = roc_auc(scores, labels);
            auto tm = threshold_metrics(scores, labels, thr);
            out << cohort << "," << n_nc << "," << n_dat << ","
                << format_double(sum_nc / static_cast<double>(n_nc)) << ","
                << format_double(sum_dat / static_cast<double>(n_dat)) << ","
                << format_double(roc.auc) << "," << format_double(tm.accuracy) << ","
                << format_double(tm.sensitivity) << "," << format_double(tm.specificity) << ","
                << format_double(tm.balanced_accuracy) << "," << format_double(thr) << "\n";
            summary << cohort << ": n=" << scores.size() << " auc=" << format_double(roc.auc)
                    << " balanced_accuracy=" << format_double(tm.balanced_accuracy) << "\n";
        }
    }

    // (2) Validation report over uNC/sMCI/pNC/pMCI/eDAT.
    const std::set<StratumLabel> validation_groups = {
        StratumLabel::uNC, StratumLabel::sMCI, StratumLabel::pNC, StratumLabel::pMCI,
        StratumLabel::eDAT};
    std::vector<ScoredImage> validation;
    for (const auto& s : scored)
        if (validation_groups.count(s.row.stratum)) {
            if (s.oob)
                throw DataError("validation image " + s.row.image_id +
                                " was scored out-of-bag; it intersects the training set");
            validation.push_back(s);
        }
    {
        std::ofstream out(rep / "validation.csv", std::ios::trunc);
        out << "group,n,mean_fpds,auc,accuracy,sensitivity,specificity,balanced_accuracy,"
               "threshold\n";
        for (StratumLabel g : {StratumLabel::uNC, StratumLabel::sMCI, StratumLabel::pNC,
                               StratumLabel::pMCI, StratumLabel::eDAT}) {
            auto [n, mean] = detail::group_mean(
                validation, [&](const ScoredImage& s) { return s.row.stratum == g; });
            if (n == 0) continue;
            out << to_string(g) << "," << n << "," << format_double(mean) << ",,,,,,\n";
        }
        if (!validation.empty()) {
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& s : validation) {
                scores.push_back(s.fpds);
                labels.push_back(detail::traj01(s.row.trajectory));
            }
            bool both = false;
            {
                bool pos = false, neg = false;
                for (int l : labels) (l ? pos : neg) = true;
                both = pos && neg;
            }
            if (both) {
                auto roc = roc_auc(scores, labels);
                auto tm = threshold_metrics(scores, labels, thr);
                res.validation_auc = roc.auc;
                out << "ALL," << scores.size() << "," << format_double(mean_of(scores)) << ","
                    << format_double(roc.auc) << "," << format_double(tm.accuracy) << ","
                    << format_double(tm.sensitivity) << "," << format_double(tm.specificity)
                    << "," << format_double(tm.balanced_accuracy) << "," << format_double(thr)
                    << "\n";
                summary << "validation: n=" << scores.size()
                        << " auc=" << format_double(roc.auc)
                        << " balanced_accuracy=" << format_double(tm.balanced_accuracy) << "\n";
            } else {
                summary << "validation: single-class, AUC not defined\n";
            }
        }
    }

    // (3) Binned tables over age and time to conversion.
    {
        std::ofstream out(rep / "binned.csv", std::ios::trunc);
        out << "covariate,group,bin_lo,bin_hi,n,mean_fpds,accuracy\n";
        auto emit = [&](const char* name, const std::vector<ScoredImage>& subset,
                        std::span<const double> edges,
                        const std::function<std::optional<double>(const ScoredImage&)>& cov) {
            if (subset.empty()) return;
            std::vector<double> scores;
            std::vector<int> labels;
            std::vector<std::string> groups;
            std::vector<std::optional<double>> covariate;
            for (const auto& s : subset) {
                scores.push_back(s.fpds);
                labels.push_back(detail::traj01(s.row.trajectory));
                groups.push_back(to_string(s.row.stratum));
                covariate.push_back(cov(s));
            }
            BinnedTable table = binned_report(scores, labels, groups, covariate, edges, thr);
            for (const auto& cell : table.cells)
                out << name << "," << cell.group << "," << format_double(cell.lo) << ","
                    << format_double(cell.hi) << "," << cell.n << ","
                    << format_double(cell.mean_score) << "," << format_double(cell.accuracy)
                    << "\n";
            summary << name << " bins: " << table.cells.size() << " nonempty cells, "
                    << table.dropped_missing << " missing covariate, "
                    << table.dropped_out_of_range << " out of range\n";

            // Heat-map grid: bin rows, group columns, cell n:mean:accuracy.
            std::vector<std::string> group_cols;
            for (const auto& cell : table.cells)
                if (std::find(group_cols.begin(), group_cols.end(), cell.group) ==
                    group_cols.end())
                    group_cols.push_back(cell.group);
            summary << name;
            for (const auto& g : group_cols) summary << "\t" << g;
            summary << "\n";
            for (size_t bi = 0; bi + 1 < edges.size(); ++bi) {
                summary << format_double(edges[bi]) << "-" << format_double(edges[bi + 1]);
                for (const auto& g : group_cols) {
                    const BinnedCell* found = nullptr;
                    for (const auto& cell : table.cells)
                        if (cell.group == g && cell.lo == edges[bi]) found = &cell;
                    if (found) {
                        char buf[64];
                        std::snprintf(buf, sizeof(buf), "%zu:%.3f:%.3f", found->n,
                                      found->mean_score, found->accuracy);
                        summary << "\t" << buf;
                    } else {
                        summary << "\t-";
                    }
                }
                summary << "\n";
            }
        };
        emit("age", validation, c.evaluation.age_edges,
             [](const ScoredImage& s) { return s.row.age_years; });
        std::vector<ScoredImage> progressive;
        for (const auto& s : validation)
            if (s.row.stratum == StratumLabel::pNC || s.row.stratum == StratumLabel::pMCI)
                progressive.push_back(s);
        emit("time_to_conversion", progressive, c.evaluation.ttc_edges,
             [](const ScoredImage& s) { return s.row.ttc_years; });
    }

    // (4) Windowed sMCI vs pMCI conversion AUCs.
    {
        std::ofstream out(rep / "windowed_auc.csv", std::ios::trunc);
        out << "window_years,n_negative,n_positive,auc\n";
        std::vector<double> smci, pmci, pmci_ttc;
        for (const auto& s : validation) {
            if (s.row.stratum == StratumLabel::sMCI) smci.push_back(s.fpds);
            if (s.row.stratum == StratumLabel::pMCI && s.row.ttc_years) {
                pmci.push_back(s.fpds);
                pmci_ttc.push_back(*s.row.ttc_years);
            }
        }
        for (double w : c.evaluation.conversion_windows_years) {
            if (smci.empty() || pmci.empty()) break;
            size_t n_pos = 0;
            for (double t : pmci_ttc) n_pos += t <= w ? 1 : 0;
            if (n_pos == 0) continue;
            auto roc = windowed_conversion_auc(smci, pmci, pmci_ttc, w);
            out << format_double(w) << "," << smci.size() << "," << n_pos << ","
                << format_double(roc.auc) << "\n";
            summary << "conversion window " << format_double(w)
                    << "y: auc=" << format_double(roc.auc) << " (" << smci.size() << ":" << n_pos
                    << ")\n";
        }
    }

    // (5) Pearson correlation between CSF and the score, per stratum.
    {
        std::ofstream out(rep / "correlation.csv", std::ios::trunc);
        out << "group,n,r,p\n";
        for (StratumLabel g :
             {StratumLabel::sNC, StratumLabel::uNC, StratumLabel::sMCI, StratumLabel::pNC,
              StratumLabel::pMCI, StratumLabel::eDAT, StratumLabel::sDAT}) {
            std::vector<double> x, y;
            for (const auto& s : scored)
                if (s.row.stratum == g && s.row.csf) {
                    x.push_back(*s.row.csf);
                    y.push_back(s.fpds);
                }
            if (x.size() < 3) continue;
            try {
                PearsonResult pr = pearson(x, y);
                out << to_string(g) << "," << pr.n << "," << format_double(pr.r) << ","
                    << format_double(pr.p) << "\n";
                char line[96];
                std::snprintf(line, sizeof(line), "correlation %s: n=%zu r=%.4f p=%.4f\n",
                              to_string(g), pr.n, pr.r, pr.p);
                summary << line;
            } catch (const DataError&) {
                // degenerate variance in a tiny group: no row
            }
        }
    }

    // (6) Pairwise group tests on age, MMSE and CSF.
    {
        std::ofstream out(rep / "group_tests.csv", std::ios::trunc);
        out << "variable,group_a,group_b,n_a,n_b,p,test,significant\n";
        size_t n_tests = 0, n_significant = 0;
        const std::vector<StratumLabel> order = {
            StratumLabel::sNC, StratumLabel::uNC, StratumLabel::sMCI, StratumLabel::pNC,
            StratumLabel::pMCI, StratumLabel::eDAT, StratumLabel::sDAT};
        struct Var {
            const char* name;
            std::function<std::optional<double>(const ScoredImage&)> get;
        };
        const std::vector<Var> vars = {
            {"age", [](const ScoredImage& s) { return s.row.age_years; }},
            {"mmse", [](const ScoredImage& s) { return s.row.mmse; }},
            {"csf", [](const ScoredImage& s) { return s.row.csf; }}};
        for (const auto& var : vars) {
            std::map<StratumLabel, std::vector<double>> samples;
            for (const auto& s : scored)
                if (auto v = var.get(s)) samples[s.row.stratum].push_back(*v);
            for (size_t i = 0; i < order.size(); ++i)
                for (size_t j = i + 1; j < order.size(); ++j) {
                    const auto& a = samples[order[i]];
                    const auto& b = samples[order[j]];
                    if (a.size() < 4 || b.size() < 4) continue;
                    try {
                        GroupTestResult gt =
                            pairwise_group_test(a, b, c.evaluation.normality_alpha);
                        out << var.name << "," << to_string(order[i]) << ","
                            << to_string(order[j]) << "," << a.size() << "," << b.size() << ","
                            << format_double(gt.p) << "," << to_string(gt.test) << ","
                            << (gt.p < 0.001 ? 1 : 0) << "\n";
                        ++n_tests;
                        n_significant += gt.p < 0.001 ? 1 : 0;
                    } catch (const DataError&) {
                        // degenerate sample: no row
                    }
                }
        }
        summary << "group tests: " << n_tests << " pairwise comparisons, " << n_significant
                << " significant at p<0.001\n";
    }

    // (7) ROI selection frequencies from the trained ensemble.
    {
        EnsembleModel model = load_model((c.output_dir / "model.fpds").string());
        const std::string atlas_bytes = read_file_bytes(c.atlas_path.string());
        LabelVolume atlas = read_label_volume(c.atlas_path.string());
        auto parcs = load_or_build_parcellations(c, atlas, atlas_bytes);
        auto freqs = selection_frequency(model, parcs);
        std::ofstream out(rep / "roi_selection.csv", std::ios::trunc);
        out << "roi_id,frequency\n";
        for (const auto& f : freqs)
            out << f.roi_id << "," << format_double(f.frequency) << "\n";
        summary << "roi selection: " << freqs.size() << " ROIs with nonzero frequency\n";
    }

    std::ofstream sum(rep / "summary.txt", std::ios::trunc);
    sum << summary.str();
    res.n_report_files = 7;
    return res;
}

inline PhantomOutput cmd_phantom(const PipelineConfig& c) {
    PhantomSpec spec = c.phantom;
    spec.seed = c.seed;
    return make_cohort(spec, c.output_dir / "phantom");
}

struct RunAllResult {
    bool all_converged = true;
    std::optional<double> validation_auc;
};

/// phantom (when configured) -> stratify -> extract -> train -> score ->
/// evaluate.
inline RunAllResult run_all(const PipelineConfig& c) {
    if (c.phantom_generate) cmd_phantom(c);
    cmd_stratify(c);
    cmd_extract(c);
    TrainResult tr = cmd_train(c);
    cmd_score(c);
    EvaluateResult ev = cmd_evaluate(c);
    return {tr.all_converged, ev.validation_auc};
}

}  // namespace fpds
