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

// Acceptance suite. Runs twelve end-to-end criteria against the library and
// the fpds CLI (path taken from the FPDS_CLI environment variable) and prints
// one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fpds/cohort.hpp"
#include "fpds/learn.hpp"
#include "fpds/metrics.hpp"
#include "fpds/parcellation.hpp"
#include "fpds/phantom.hpp"
#include "fpds/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fpds;

namespace {

// ---------------------------------------------------------------------------
// Harness

struct Failure {
    std::string reason;
};

#define ACCEPT_REQUIRE(cond, msg)                          \
    do {                                                   \
        if (!(cond)) throw Failure{std::string(msg)};      \
    } while (0)

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Independent oracles (test-side implementations, separate from the library).

double pair_count_auc(std::span<const double> scores, std::span<const int> labels) {
    double conc = 0, tied = 0;
    size_t np = 0, nn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i])
            ++np;
        else
            ++nn;
    }
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) conc += 1;
            else if (scores[i] == scores[j]) tied += 1;
        }
    }
    return (conc + 0.5 * tied) / (static_cast<double>(np) * static_cast<double>(nn));
}

double plain_pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Exact two-sided rank-sum p over all C(n, na) rank subsets.
double ranksum_enumeration_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const size_t n = pooled.size(), na = a.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return pooled[i] < pooled[j]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        for (size_t t = i; t <= j; ++t) rank[order[t]] = 0.5 * static_cast<double>(i + j + 2);
        i = j + 1;
    }
    double w_obs = 0;
    for (size_t k = 0; k < na; ++k) w_obs += rank[k];

    std::vector<size_t> comb(na);
    std::iota(comb.begin(), comb.end(), 0);
    unsigned long long n_le = 0, n_ge = 0, total = 0;
    for (;;) {
        double w = 0;
        for (size_t c : comb) w += rank[c];
        if (w <= w_obs) ++n_le;
        if (w >= w_obs) ++n_ge;
        ++total;
        size_t k = na;
        while (k > 0 && comb[k - 1] == n - na + k - 1) --k;
        if (k == 0) break;
        comb[k - 1]++;
        for (size_t t = k; t < na; ++t) comb[t] = comb[t - 1] + 1;
    }
    return std::min(1.0, 2.0 * static_cast<double>(std::min(n_le, n_ge)) /
                             static_cast<double>(total));
}

// ---------------------------------------------------------------------------
// CLI pipeline runs shared by criteria 6, 8, 9, 10 and 12.

struct PipelineRun {
    fs::path out;
    double validation_auc = 0.0;  // pair-count oracle over validation rows
    double oob_auc = 0.0;         // pair-count oracle over out-of-bag rows
};

struct Context {
    fs::path work;
    std::string cli;
    std::map<std::string, PipelineRun> runs;     // keyed by tag
    std::map<std::string, double> run_seconds;   // wall time per pipeline run

    nlohmann::json phantom_config(const fs::path& out_dir, double effect_size,
                                  bool log_members) const {
        nlohmann::json j;
        j["paths"]["output_dir"] = out_dir.string();
        j["seed"] = 11;
        j["jobs"] = 2;
        j["smoothing_fwhm_mm"] = 2.0;
        j["ladder"] = {{"patch_sizes", {50, 100, 500}}, {"include_original", true}};
        j["ensemble"] = {{"F", 20}, {"gamma", 0.8}, {"ridge", 0.01}};
        j["score"] = {{"log_members", log_members}};
        j["phantom"] = {{"generate", true},
                        {"dims", {40, 40, 40}},
                        {"n_rois", 9},
                        {"reference_roi_id", 1},
                        {"affected_roi_ids", {2, 3, 4}},
                        {"effect_size", effect_size},
                        {"noise_sigma", 0.05},
                        {"subjects_per_stratum",
                         {{"sNC", 30}, {"uNC", 8}, {"sMCI", 8}, {"pNC", 8},
                          {"pMCI", 8}, {"eDAT", 8}, {"sDAT", 30}}}};
        return j;
    }

    void run_cli(const nlohmann::json& config, const fs::path& config_path,
                 const std::string& subcommand) const {
        {
            std::ofstream out(config_path, std::ios::trunc);
            out << config.dump(2) << "\n";
        }
        std::string log = config_path.string() + ".log";
        std::string cmd =
            "\"" + cli + "\" " + subcommand + " --config \"" + config_path.string() +
            "\" > \"" + log + "\" 2>&1";
        int rc = std::system(cmd.c_str());
        int code = rc < 0 ? rc : (rc >> 8) & 0xff;  // POSIX wait status
        // Exit 4 is the documented non-convergence warning; all outputs are
        // still produced, so the run is usable.
        if (code != 0 && code != 4) {
            std::ifstream in(log);
            std::stringstream ss;
            ss << in.rdbuf();
            throw Failure{"CLI exited with status " + std::to_string(code) + ": " +
                          ss.str().substr(0, 400)};
        }
    }

    /// run-all for one effect size; results memoized per tag.
    const PipelineRun& pipeline(const std::string& tag, double effect_size, bool log_members) {
        auto it = runs.find(tag);
        if (it != runs.end()) return it->second;

        auto t0 = std::chrono::steady_clock::now();
        PipelineRun run;
        run.out = work / ("run_" + tag);
        run_cli(phantom_config(run.out, effect_size, log_members),
                work / ("config_" + tag + ".json"), "run-all");
        run_seconds[tag] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        CsvTable scores = read_csv((run.out / "scores.csv").string());
        const std::set<std::string> validation = {"uNC", "sMCI", "pNC", "pMCI", "eDAT"};
        std::vector<double> vs, os;
        std::vector<int> vy, oy;
        for (const auto& row : scores.rows) {
            double s = parse_double(row[1], "fpds");
            int label = row[5] == "DAT+" ? 1 : 0;
            if (validation.count(row[4])) {
                vs.push_back(s);
                vy.push_back(label);
            }
            if (row[3] == "1") {
                os.push_back(s);
                oy.push_back(label);
            }
        }
        ACCEPT_REQUIRE(vs.size() == 40, "expected 40 validation images, got " +
                                            std::to_string(vs.size()));
        ACCEPT_REQUIRE(os.size() == 60, "expected 60 out-of-bag training images, got " +
                                            std::to_string(os.size()));
        run.validation_auc = pair_count_auc(vs, vy);
        run.oob_auc = pair_count_auc(os, oy);
        return runs.emplace(tag, std::move(run)).first->second;
    }
};

// ---------------------------------------------------------------------------
// Criteria

std::string criterion_1_stratification() {
    struct Case {
        std::vector<Diagnosis> dx;
        size_t idx;
        StratumLabel want;
    };
    constexpr auto NC = Diagnosis::NC, MCI = Diagnosis::MCI, DAT = Diagnosis::DAT;
    const std::vector<Case> cases = {
        {{NC, NC}, 0, StratumLabel::sNC},          {{NC, NC, NC}, 1, StratumLabel::sNC},
        {{NC}, 0, StratumLabel::sNC},              {{NC, MCI}, 0, StratumLabel::uNC},
        {{NC, NC, MCI}, 0, StratumLabel::uNC},     {{NC, MCI, MCI}, 0, StratumLabel::uNC},
        {{NC, MCI}, 1, StratumLabel::sMCI},        {{MCI, MCI}, 0, StratumLabel::sMCI},
        {{MCI, MCI, MCI}, 2, StratumLabel::sMCI},  {{MCI}, 0, StratumLabel::sMCI},
        {{NC, MCI, DAT}, 0, StratumLabel::pNC},    {{NC, NC, MCI, DAT}, 1, StratumLabel::pNC},
        {{NC, MCI, DAT}, 1, StratumLabel::pMCI},   {{MCI, DAT}, 0, StratumLabel::pMCI},
        {{MCI, MCI, DAT}, 0, StratumLabel::pMCI},  {{MCI, DAT}, 1, StratumLabel::eDAT},
        {{NC, MCI, DAT}, 2, StratumLabel::eDAT},   {{NC, DAT}, 1, StratumLabel::eDAT},
        {{DAT, DAT}, 0, StratumLabel::sDAT},       {{DAT, DAT, DAT}, 1, StratumLabel::sDAT},
        {{DAT}, 0, StratumLabel::sDAT},
    };
    int n = 0;
    for (const auto& c : cases) {
        LongitudinalRecord rec;
        rec.subject_id = "S";
        for (size_t i = 0; i < c.dx.size(); ++i) {
            Visit v;
            v.visit_months = 12.0 * static_cast<double>(i);
            v.diagnosis = c.dx[i];
            v.has_image = true;
            rec.visits.push_back(v);
        }
        StratumLabel got = assign_stratum(rec, c.idx);
        ACCEPT_REQUIRE(got == c.want, std::string("case ") + std::to_string(n) + ": got " +
                                          to_string(got) + ", want " + to_string(c.want));
        ACCEPT_REQUIRE(trajectory_of(got) == trajectory_of(c.want), "trajectory mismatch");
        ++n;
    }
    return std::to_string(n) + "/" + std::to_string(cases.size()) + " patterns";
}

std::string criterion_2_auc_oracle() {
    Rng rng(0xA0C);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = 4 + static_cast<size_t>(rng.uniform_int(0, 46));
        std::vector<double> scores;
        std::vector<int> labels;
        bool pos = false, neg = false;
        do {
            scores.clear();
            labels.clear();
            pos = neg = false;
            for (size_t i = 0; i < n; ++i) {
                scores.push_back(static_cast<double>(rng.uniform_int(0, 8)) / 8.0);  // ties
                int l = rng.uniform01() < 0.5;
                labels.push_back(l);
                (l ? pos : neg) = true;
            }
        } while (!pos || !neg);
        double diff = std::fabs(roc_auc(scores, labels).auc - pair_count_auc(scores, labels));
        worst = std::max(worst, diff);
        ACCEPT_REQUIRE(diff <= 1e-12, "instance " + std::to_string(trial) + " differs by " +
                                          std::to_string(diff));
    }
    return "200 instances, max |diff| = " + fmt_sci(worst);
}

std::string criterion_3_tstat_oracle() {
    Rng rng(0x7574);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 8 + static_cast<int>(rng.uniform_int(0, 16));
        const int d = 2 + static_cast<int>(rng.uniform_int(0, 62));
        const int k = 1 + static_cast<int>(rng.uniform_int(0, d - 1));
        Eigen::MatrixXd X(n, d);
        std::vector<int> y(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<size_t>(i)] = i < n / 2 ? 0 : 1;
            for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
        }
        // Zero-variance edge cases in one instance out of four.
        if (trial % 4 == 0) {
            X.col(0).setConstant(3.0);  // equal means, zero variance -> t = 0
            for (int i = 0; i < n; ++i) X(i, 1) = y[static_cast<size_t>(i)] ? 1.0 : 0.0;  // t = inf
        }

        std::vector<int> got = tstat_select(X, y, k);

        // Exhaustive recomputation + independent sort.
        int n0 = 0, n1 = 0;
        for (int l : y) (l ? n1 : n0)++;
        std::vector<std::pair<double, int>> ranked;
        for (int j = 0; j < d; ++j) {
            double m0 = 0, m1 = 0;
            for (int i = 0; i < n; ++i) (y[static_cast<size_t>(i)] ? m1 : m0) += X(i, j);
            m0 /= n0;
            m1 /= n1;
            double ss = 0;
            for (int i = 0; i < n; ++i) {
                double mu = y[static_cast<size_t>(i)] ? m1 : m0;
                ss += (X(i, j) - mu) * (X(i, j) - mu);
            }
            double sp2 = ss / (n - 2);
            double t = sp2 == 0
                           ? (m0 == m1 ? 0.0 : std::numeric_limits<double>::infinity())
                           : (m1 - m0) / std::sqrt(sp2 * (1.0 / n0 + 1.0 / n1));
            ranked.emplace_back(std::fabs(t), j);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first > b.first;
        });
        for (int j = 0; j < k; ++j)
            ACCEPT_REQUIRE(got[static_cast<size_t>(j)] == ranked[static_cast<size_t>(j)].second,
                           "instance " + std::to_string(trial) + " rank " + std::to_string(j) +
                               ": got feature " + std::to_string(got[static_cast<size_t>(j)]) +
                               ", oracle says " +
                               std::to_string(ranked[static_cast<size_t>(j)].second));
    }
    return "100 matrices, exact agreement";
}

std::string criterion_4_gradient_check() {
    Rng rng(0x6AD);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 6 + static_cast<int>(rng.uniform_int(0, 24));
        const int d = 1 + static_cast<int>(rng.uniform_int(0, 4));
        Eigen::MatrixXd X(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y[i] = i % 2;
        Eigen::MatrixXd K = gaussian_kernel_matrix(X, median_bandwidth(X));
        Eigen::VectorXd alpha(n);
        for (int i = 0; i < n; ++i) alpha[i] = 0.4 * rng.normal();
        double b = 0.3 * rng.normal();
        const double ridge = 0.03;

        Eigen::VectorXd g = klr_gradient(K, y, ridge, alpha, b);
        Eigen::VectorXd fd(n + 1);
        const double eps = 1e-6;
        for (int p = 0; p <= n; ++p) {
            Eigen::VectorXd ap = alpha, am = alpha;
            double bp = b, bm = b;
            if (p < n) {
                ap[p] += eps;
                am[p] -= eps;
            } else {
                bp += eps;
                bm -= eps;
            }
            fd[p] = (klr_objective(K, y, ridge, ap, bp) - klr_objective(K, y, ridge, am, bm)) /
                    (2 * eps);
        }
        double rel = (g - fd).norm() / std::max(1e-12, fd.norm());
        worst = std::max(worst, rel);
        ACCEPT_REQUIRE(rel <= 1e-5, "instance " + std::to_string(trial) + " relative error " +
                                        std::to_string(rel));
    }
    return "20 instances, max relative error = " + fmt_sci(worst);
}

std::string criterion_5_subagging_arithmetic() {
    std::vector<Trajectory> labels(360, Trajectory::DATminus);
    labels.insert(labels.end(), 238, Trajectory::DATplus);
    auto subsets = subag_subsets(labels, 100, 0.8, 424242);
    ACCEPT_REQUIRE(subsets.size() == 100, "expected 100 subsets");
    for (const auto& s : subsets) {
        ACCEPT_REQUIRE(s.per_class_count == 190, "per-class count != 190");
        ACCEPT_REQUIRE(s.member_indices.size() == 380, "subset size != 380");
        int pos = 0;
        for (int i : s.member_indices) pos += labels[static_cast<size_t>(i)] == Trajectory::DATplus;
        ACCEPT_REQUIRE(pos == 190, "classes not balanced");
        std::set<int> uniq(s.member_indices.begin(), s.member_indices.end());
        ACCEPT_REQUIRE(uniq.size() == 380, "duplicate members in a subset");
    }
    ACCEPT_REQUIRE(selection_count_for(380) == 38, "k rule at 380 != 38");

    // Default ladder: 17 scales and M x F classifiers for a real training run.
    ACCEPT_REQUIRE(ScaleLadder::defaults().num_scales() == 17, "default ladder is not 17 scales");
    EnsembleConfig config;
    config.F = 100;
    config.seed = 7;
    config.ladder = ScaleLadder::defaults();
    Rng rng(0x5ca1e);
    std::vector<MultiScaleFeatureSet> feats;
    std::vector<Trajectory> toy_labels;
    const auto ms = config.ladder.scale_ms();
    for (int img = 0; img < 20; ++img) {
        MultiScaleFeatureSet fs;
        fs.image_id = "t" + std::to_string(img);
        for (int m : ms) {
            FeatureVector fv;
            fv.scale_m = m;
            for (uint32_t p = 1; p <= 4; ++p) {
                fv.patch_ids.push_back(p);
                double v = 1.0 + 0.05 * rng.normal();
                if (img >= 10 && p == 1) v -= 0.5;
                fv.values.push_back(v);
            }
            fs.scales.push_back(std::move(fv));
        }
        feats.push_back(std::move(fs));
        toy_labels.push_back(img < 10 ? Trajectory::DATminus : Trajectory::DATplus);
    }
    EnsembleModel model = train_ensemble(feats, toy_labels, config, 2);
    ACCEPT_REQUIRE(model.classifiers.size() == 1700, "classifier count != 17 x 100 = 1700");
    return "380-sample subsets, k=38, 1700 classifiers at F=100";
}

std::string criterion_6_fusion_invariant(Context& ctx) {
    const PipelineRun& run = ctx.pipeline("d2", 2.0, /*log_members=*/true);
    EnsembleModel model = load_model((run.out / "model.fpds").string());

    CsvTable scores = read_csv((run.out / "scores.csv").string());
    CsvTable members = read_csv((run.out / "members.csv").string());
    std::map<std::string, std::vector<std::pair<int, double>>> member_rows;  // subset, p
    for (const auto& row : members.rows)
        member_rows[row[0]].emplace_back(static_cast<int>(parse_long(row[2], "subset")),
                                         parse_double(row[4], "p"));

    std::map<std::string, int> train_index;
    for (size_t i = 0; i < model.training_image_ids.size(); ++i)
        train_index[model.training_image_ids[i]] = static_cast<int>(i);

    int checked = 0;
    for (const auto& row : scores.rows) {
        const std::string& id = row[0];
        double fpds = parse_double(row[1], "fpds");
        int n_fused = static_cast<int>(parse_long(row[2], "n_fused"));
        bool oob = row[3] == "1";
        ACCEPT_REQUIRE(fpds >= 0.0 && fpds <= 1.0, id + ": score outside [0,1]");
        auto it = member_rows.find(id);
        ACCEPT_REQUIRE(it != member_rows.end(), id + ": no member log");
        ACCEPT_REQUIRE(static_cast<int>(it->second.size()) == n_fused,
                       id + ": member count != n_fused");
        long double sum = 0;
        for (const auto& [subset, p] : it->second) sum += p;
        double mean = static_cast<double>(sum / static_cast<long double>(n_fused));
        ACCEPT_REQUIRE(std::fabs(mean - fpds) <= 1e-12,
                       id + ": score differs from member mean by " +
                           std::to_string(std::fabs(mean - fpds)));
        if (oob) {
            auto ti = train_index.find(id);
            ACCEPT_REQUIRE(ti != train_index.end(), id + ": flagged oob but not a training image");
            for (const auto& [subset, p] : it->second)
                ACCEPT_REQUIRE(
                    !model.subsets[static_cast<size_t>(subset)].contains(ti->second),
                    id + ": out-of-bag fusion used an including subset");
        } else {
            ACCEPT_REQUIRE(static_cast<int>(it->second.size()) ==
                               static_cast<int>(model.classifiers.size()),
                           id + ": full fusion did not use all classifiers");
        }
        ++checked;
    }
    return std::to_string(checked) + " images cross-checked against the member logs";
}

std::string criterion_7_parcellation() {
    Rng rng(0x9A6C);
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        PhantomSpec spec;
        spec.dims = {static_cast<int>(rng.uniform_int(14, 24)),
                     static_cast<int>(rng.uniform_int(14, 24)),
                     static_cast<int>(rng.uniform_int(14, 24))};
        spec.n_rois = static_cast<int>(rng.uniform_int(3, 10));
        spec.reference_roi_id = 1;
        spec.affected_roi_ids = {2};
        LabelVolume atlas = make_atlas(spec);

        std::map<uint32_t, size_t> roi_size;
        for (uint32_t l : atlas.labels)
            if (l) roi_size[l]++;

        for (int m : {50, 100, 500}) {
            PatchParcellation p = generate_patches(atlas, m, rng.next_u64());
            // Exact partition: ROI voxels and patch voxels match one to one.
            std::map<uint32_t, size_t> patch_size;
            for (size_t i = 0; i < atlas.labels.size(); ++i) {
                uint32_t roi = atlas.labels[i];
                uint32_t pid = p.patch_labels.labels[i];
                ACCEPT_REQUIRE((roi == 0) == (pid == 0), "coverage mismatch at a voxel");
                if (pid) {
                    ACCEPT_REQUIRE(p.roi_of(pid) == roi, "patch assigned across ROI boundaries");
                    patch_size[pid]++;
                }
            }
            std::map<uint32_t, int> patches_per_roi;
            for (uint32_t roi : p.roi_of_patch) patches_per_roi[roi]++;
            for (const auto& [roi, n_vox] : roi_size) {
                int expected = patches_for_roi(n_vox, m);
                ACCEPT_REQUIRE(patches_per_roi[roi] == expected,
                               "patch count " + std::to_string(patches_per_roi[roi]) +
                                   " != max(1, round(|r|/m)) = " + std::to_string(expected));
                if (n_vox >= static_cast<size_t>(m)) {
                    double density = static_cast<double>(patches_per_roi[roi]) /
                                     static_cast<double>(n_vox);
                    ACCEPT_REQUIRE(density >= 1.0 / (1.5 * m) && density <= 1.5 / m,
                                   "patch density out of [1/(1.5m), 1.5/m]");
                }
            }
            for (const auto& [pid, n] : patch_size)
                ACCEPT_REQUIRE(n > 0, "empty patch id " + std::to_string(pid));
            ++checked;
        }
    }
    return std::to_string(checked) + " (atlas, m) parcellations verified";
}

std::string criterion_8_phantom_end_to_end(Context& ctx) {
    const double d0 = ctx.pipeline("d0", 0.0, false).validation_auc;
    const double d05 = ctx.pipeline("d05", 0.5, false).validation_auc;
    const double d1 = ctx.pipeline("d1", 1.0, false).validation_auc;
    const double d2 = ctx.pipeline("d2", 2.0, true).validation_auc;

    ACCEPT_REQUIRE(d2 >= 0.95, "AUC at effect size 2 is " + fmt(d2) + " < 0.95");
    ACCEPT_REQUIRE(d0 >= 0.35 && d0 <= 0.65,
                   "null-effect AUC " + fmt(d0) + " outside [0.35, 0.65]");
    const double tol = 0.02;
    ACCEPT_REQUIRE(d05 >= d0 - tol, "AUC decreased from d=0 (" + fmt(d0) + ") to d=0.5 (" +
                                        fmt(d05) + ")");
    ACCEPT_REQUIRE(d1 >= d05 - tol, "AUC decreased from d=0.5 (" + fmt(d05) + ") to d=1 (" +
                                        fmt(d1) + ")");
    ACCEPT_REQUIRE(d2 >= d1 - tol, "AUC decreased from d=1 (" + fmt(d1) + ") to d=2 (" +
                                       fmt(d2) + ")");

    double total = 0.0;
    for (const char* tag : {"d0", "d05", "d1", "d2"}) total += ctx.run_seconds[tag];
    ACCEPT_REQUIRE(total < 600.0,
                   "the four pipeline runs took " + fmt(total) + "s, over the 600s budget");
    return "AUC(d) = " + fmt(d0) + ", " + fmt(d05) + ", " + fmt(d1) + ", " + fmt(d2) +
           "; four runs in " + fmt(total) + "s";
}

std::string criterion_9_oob_honesty(Context& ctx) {
    const PipelineRun& run = ctx.pipeline("d2", 2.0, true);
    double gap = std::fabs(run.oob_auc - run.validation_auc);
    ACCEPT_REQUIRE(gap <= 0.10, "OOB AUC " + fmt(run.oob_auc) + " vs held-out " +
                                    fmt(run.validation_auc) + " differs by " + fmt(gap));
    return "OOB AUC " + fmt(run.oob_auc) + ", held-out " + fmt(run.validation_auc);
}

std::string criterion_10_selection_frequency(Context& ctx) {
    const PipelineRun& run = ctx.pipeline("d2", 2.0, true);
    CsvTable t = read_csv((run.out / "reports" / "roi_selection.csv").string());
    std::map<uint32_t, double> freq;
    for (const auto& row : t.rows)
        freq[static_cast<uint32_t>(parse_long(row[0], "roi_id"))] =
            parse_double(row[1], "frequency");

    std::string detail;
    for (uint32_t roi : {2u, 3u, 4u}) {
        double f = freq.count(roi) ? freq[roi] : 0.0;
        detail += (detail.empty() ? "affected " : ", ") + std::to_string(roi) + "=" + fmt(f);
        ACCEPT_REQUIRE(f >= 0.8, "affected ROI " + std::to_string(roi) +
                                     " selection frequency " + fmt(f) + " < 0.8");
    }
    for (uint32_t roi : {5u, 6u, 7u, 8u, 9u}) {
        double f = freq.count(roi) ? freq[roi] : 0.0;
        ACCEPT_REQUIRE(f <= 0.5, "unaffected ROI " + std::to_string(roi) +
                                     " selection frequency " + fmt(f) + " > 0.5");
    }
    ACCEPT_REQUIRE(freq.count(1) == 0, "reference ROI appears in the selection table");
    return detail;
}

std::string criterion_11_statistics_oracles(Context& ctx) {
    // Pearson p vs a 1e5-draw permutation p, 20 instances of n = 30.
    Rng rng(0x9e42);
    double worst_pearson = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x, y;
        for (int i = 0; i < 30; ++i) {
            x.push_back(rng.normal());
            y.push_back(0.25 * x.back() * (trial % 3 == 0 ? 1.0 : 0.0) + rng.normal());
        }
        PearsonResult pr = pearson(x, y);
        int hits = 0;
        const int draws = 100000;
        std::vector<double> yp = y;
        for (int d = 0; d < draws; ++d) {
            rng.shuffle(yp);
            if (std::fabs(plain_pearson_r(x, yp)) >= std::fabs(pr.r)) ++hits;
        }
        double perm_p = static_cast<double>(hits) / draws;
        worst_pearson = std::max(worst_pearson, std::fabs(perm_p - pr.p));
        ACCEPT_REQUIRE(std::fabs(perm_p - pr.p) <= 0.02,
                       "pearson p " + fmt(pr.p) + " vs permutation " + fmt(perm_p));
    }

    // Wilcoxon rank-sum vs exact enumeration for samples of at most 10.
    double worst_ranksum = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> a, b;
        int na = static_cast<int>(rng.uniform_int(4, 10));
        int nb = static_cast<int>(rng.uniform_int(4, 10));
        for (int i = 0; i < na; ++i) a.push_back(static_cast<double>(rng.uniform_int(0, 8)));
        for (int i = 0; i < nb; ++i)
            b.push_back(static_cast<double>(rng.uniform_int(0, 8)) + (trial % 2 ? 1.5 : 0.0));
        double p = wilcoxon_ranksum_p(a, b);
        double oracle = ranksum_enumeration_p(a, b);
        worst_ranksum = std::max(worst_ranksum, std::fabs(p - oracle));
        ACCEPT_REQUIRE(std::fabs(p - oracle) <= 0.03,
                       "rank-sum p " + fmt(p) + " vs enumeration " + fmt(oracle));
    }

    // Balanced accuracy identity in every emitted report row.
    const PipelineRun& run = ctx.pipeline("d2", 2.0, true);
    int rows_checked = 0;
    for (const char* name : {"train_fit.csv", "validation.csv"}) {
        CsvTable t = read_csv((run.out / "reports" / name).string());
        int sens = t.column("sensitivity"), spec = t.column("specificity"),
            bal = t.column("balanced_accuracy");
        ACCEPT_REQUIRE(sens >= 0 && spec >= 0 && bal >= 0,
                       std::string(name) + ": missing metric columns");
        for (const auto& row : t.rows) {
            if (row[static_cast<size_t>(bal)].empty()) continue;
            double s = parse_double(row[static_cast<size_t>(sens)], "sens");
            double p = parse_double(row[static_cast<size_t>(spec)], "spec");
            double m = parse_double(row[static_cast<size_t>(bal)], "bal");
            ACCEPT_REQUIRE(m == (s + p) / 2.0,
                           std::string(name) + ": balanced accuracy != (sens+spec)/2");
            ++rows_checked;
        }
    }
    ACCEPT_REQUIRE(rows_checked > 0, "no metric rows found in the reports");
    return "pearson max |dp| = " + fmt(worst_pearson) + ", ranksum max |dp| = " +
           fmt(worst_ranksum) + ", " + std::to_string(rows_checked) + " report rows";
}

std::string criterion_12_determinism(Context& ctx) {
    const PipelineRun& first = ctx.pipeline("d2", 2.0, true);

    PipelineRun second;
    second.out = ctx.work / "run_d2_repeat";
    ctx.run_cli(ctx.phantom_config(second.out, 2.0, true),
                ctx.work / "config_d2_repeat.json", "run-all");

    std::vector<std::string> files = {"model.fpds", "scores.csv", "strata.csv", "members.csv"};
    for (const char* f : {"train_fit.csv", "validation.csv", "binned.csv", "windowed_auc.csv",
                          "correlation.csv", "group_tests.csv", "roi_selection.csv",
                          "summary.txt"})
        files.push_back(std::string("reports/") + f);
    for (const auto& f : files) {
        std::string a = read_file_bytes((first.out / f).string());
        std::string b = read_file_bytes((second.out / f).string());
        ACCEPT_REQUIRE(a == b, f + " differs between identical runs");
    }
    return std::to_string(files.size()) + " files byte-identical across two run-all executions";
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    Context ctx;
    const char* cli = std::getenv("FPDS_CLI");
    ctx.cli = cli ? cli : "";
    ctx.work = fs::current_path() / "acceptance_work";
    fs::remove_all(ctx.work);
    fs::create_directories(ctx.work);

    struct Entry {
        int id;
        std::string label;
        std::function<std::string()> run;
        double budget_seconds;
    };
    const std::vector<Entry> criteria = {
        {1, "stratification suite", [&] { return criterion_1_stratification(); }, 1.0},
        {2, "AUC pair-count oracle", [&] { return criterion_2_auc_oracle(); }, 5.0},
        {3, "t-statistic selection oracle", [&] { return criterion_3_tstat_oracle(); }, 5.0},
        {4, "classifier gradient check", [&] { return criterion_4_gradient_check(); }, 10.0},
        {5, "subagging arithmetic", [&] { return criterion_5_subagging_arithmetic(); }, 120.0},
        {6, "FPDS fusion invariant", [&] { return criterion_6_fusion_invariant(ctx); }, 600.0},
        {7, "parcellation partition", [&] { return criterion_7_parcellation(); }, 30.0},
        {8, "phantom end-to-end", [&] { return criterion_8_phantom_end_to_end(ctx); }, 600.0},
        {9, "out-of-bag honesty", [&] { return criterion_9_oob_honesty(ctx); }, 600.0},
        {10, "selection-frequency ground truth",
         [&] { return criterion_10_selection_frequency(ctx); }, 600.0},
        {11, "statistics oracles", [&] { return criterion_11_statistics_oracles(ctx); }, 120.0},
        {12, "run-all determinism", [&] { return criterion_12_determinism(ctx); }, 600.0},
    };

    const bool needs_cli = only.empty() || only.count(6) || only.count(8) || only.count(9) ||
                           only.count(10) || only.count(11) || only.count(12);
    if (ctx.cli.empty() && needs_cli) {
        std::cerr << "FPDS_CLI is not set; cannot run the pipeline criteria\n";
        return 2;
    }

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        std::string failure;
        try {
            detail = c.run();
        } catch (const Failure& f) {
            failure = f.reason;
        } catch (const std::exception& e) {
            failure = std::string("exception: ") + e.what();
        }
        double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (failure.empty() && seconds > c.budget_seconds)
            failure = "runtime " + fmt(seconds) + "s exceeds the " + fmt(c.budget_seconds) +
                      "s budget";
        if (failure.empty()) {
            std::printf("PASS criterion %2d: %s — %s (%.2fs)\n", c.id, c.label.c_str(),
                        detail.c_str(), seconds);
        } else {
            std::printf("FAIL criterion %2d: %s — %s (%.2fs)\n", c.id, c.label.c_str(),
                        failure.c_str(), seconds);
            ++failures;
        }
        std::fflush(stdout);
    }

    if (failures == 0) fs::remove_all(ctx.work);
    return failures == 0 ? 0 : 1;
}
