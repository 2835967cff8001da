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
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpds/cohort.hpp"
#include "fpds/common.hpp"
#include "fpds/features.hpp"
#include "fpds/parallel.hpp"
#include "fpds/parcellation.hpp"
#include "fpds/random.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// Multi-scale subagging ensemble. For each of the M feature scales and each of
// F class-balanced training subsets (drawn without replacement at ratio gamma),
// a t-statistic feature selection picks the k = floor(N_subset/10) most
// discriminative patches and a probabilistic kernel classifier is trained on
// them. The fused score of a sample is the mean DAT+ probability over the
// M x F classifiers.

struct EnsembleConfig {
    int F = 100;
    double gamma = 0.8;
    double ridge = 1e-2;
    uint64_t seed = 0;
    ScaleLadder ladder = ScaleLadder::defaults();

    void validate() const {
        if (F <= 0) throw ConfigError("F must be positive");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0,1]");
        if (!(ridge > 0.0)) throw ConfigError("ridge must be positive");
        ladder.validate();
    }
};

struct SubagSubset {
    int subset_index = 0;
    std::vector<int> member_indices;  // sorted, no duplicates, balanced classes
    int per_class_count = 0;

    bool contains(int sample_index) const {
        return std::binary_search(member_indices.begin(), member_indices.end(), sample_index);
    }
};

/// F class-balanced subsets sampled without replacement. Each subset draws
/// floor(gamma * min(class sizes)) samples from each class; subset f uses the
/// child seed derive_seed(seed, f), so draws are schedule-independent.
inline std::vector<SubagSubset> subag_subsets(std::span<const Trajectory> labels, int F,
                                              double gamma, uint64_t seed) {
    if (F <= 0) throw ConfigError("F must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0,1]");
    std::vector<int> neg, pos;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] == Trajectory::DATplus ? pos : neg).push_back(static_cast<int>(i));
    const int min_class = static_cast<int>(std::min(neg.size(), pos.size()));
    const int per_class = static_cast<int>(std::floor(gamma * static_cast<double>(min_class)));
    if (per_class < 2)
        throw DataError("degenerate class sizes: floor(gamma*min(n-, n+)) = " +
                        std::to_string(per_class) + " < 2");

    std::vector<SubagSubset> subsets(static_cast<size_t>(F));
    for (int f = 0; f < F; ++f) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(f)));
        SubagSubset s;
        s.subset_index = f;
        s.per_class_count = per_class;
        for (int i : rng.sample_without_replacement(static_cast<int>(neg.size()), per_class))
            s.member_indices.push_back(neg[static_cast<size_t>(i)]);
        for (int i : rng.sample_without_replacement(static_cast<int>(pos.size()), per_class))
            s.member_indices.push_back(pos[static_cast<size_t>(i)]);
        std::sort(s.member_indices.begin(), s.member_indices.end());
        subsets[static_cast<size_t>(f)] = std::move(s);
    }
    return subsets;
}

// ---------------------------------------------------------------------------
// t-statistic feature ranking

/// Pooled-variance two-sample t statistic per column of X; columns ranked by
/// |t| descending (ties toward the lower column index) and the top k returned.
/// A zero-pooled-variance column gets t = +inf when the class means differ and
/// t = 0 otherwise.
inline std::vector<int> tstat_select(const Eigen::MatrixXd& X, std::span<const int> y, int k) {
    const auto n = X.rows();
    const auto d = X.cols();
    if (static_cast<size_t>(n) != y.size()) throw DataError("tstat_select: labels length mismatch");
    if (k > d) throw DataError("tstat_select: k exceeds feature count");
    if (k <= 0) throw ConfigError("tstat_select: k must be positive");

    Eigen::Index n_pos = 0;
    for (int l : y) n_pos += l ? 1 : 0;
    Eigen::Index n_neg = n - n_pos;
    if (n_pos < 2 || n_neg < 2) throw DataError("tstat_select needs >= 2 samples per class");

    std::vector<double> abs_t(static_cast<size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
        double sum_p = 0, sum_n = 0;
        for (Eigen::Index i = 0; i < n; ++i) (y[static_cast<size_t>(i)] ? sum_p : sum_n) += X(i, j);
        double mean_p = sum_p / static_cast<double>(n_pos);
        double mean_n = sum_n / static_cast<double>(n_neg);
        double ss = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double dlt = X(i, j) - (y[static_cast<size_t>(i)] ? mean_p : mean_n);
            ss += dlt * dlt;
        }
        double sp2 = ss / static_cast<double>(n - 2);
        double t;
        if (sp2 == 0.0)
            t = mean_p == mean_n ? 0.0 : std::numeric_limits<double>::infinity();
        else
            t = (mean_p - mean_n) /
                std::sqrt(sp2 * (1.0 / static_cast<double>(n_pos) + 1.0 / static_cast<double>(n_neg)));
        abs_t[static_cast<size_t>(j)] = std::fabs(t);
    }

    std::vector<int> idx(static_cast<size_t>(d));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (abs_t[static_cast<size_t>(a)] != abs_t[static_cast<size_t>(b)])
            return abs_t[static_cast<size_t>(a)] > abs_t[static_cast<size_t>(b)];
        return a < b;
    });
    idx.resize(static_cast<size_t>(k));
    return idx;
}

// ---------------------------------------------------------------------------
// Kernel logistic regression in the dual with a Gaussian kernel.
//
//   f = K alpha + b,  p = sigmoid(f)
//   L(alpha, b) = sum_i [softplus(f_i) - y_i f_i] + (ridge/2) alpha' K alpha
//
// The objective is convex; it is minimized by damped Newton steps with an
// Armijo backtracking line search.

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Median pairwise Euclidean distance over the rows of X; 1 when all rows
/// coincide.
inline double median_bandwidth(const Eigen::MatrixXd& X) {
    const auto n = X.rows();
    std::vector<double> dist;
    dist.reserve(static_cast<size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            dist.push_back((X.row(i) - X.row(j)).norm());
    if (dist.empty()) return 1.0;
    std::sort(dist.begin(), dist.end());
    size_t m = dist.size();
    double median = m % 2 == 1 ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
    return median == 0.0 ? 1.0 : median;
}

/// K(i,j) = exp(-|xi - xj|^2 / (2 h^2)), with a small diagonal jitter. The
/// jitter keeps the training objective bounded: without it, near-duplicate
/// rows give K a numerical null space along which the computed quadratic form
/// alpha' K alpha can turn negative for huge alpha.
inline Eigen::MatrixXd gaussian_kernel_matrix(const Eigen::MatrixXd& X, double h) {
    const auto n = X.rows();
    Eigen::MatrixXd K(n, n);
    const double inv = 1.0 / (2.0 * h * h);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = 1.0 + 1e-8;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double d2 = (X.row(i) - X.row(j)).squaredNorm();
            K(i, j) = K(j, i) = std::exp(-d2 * inv);
        }
    }
    return K;
}

inline double klr_objective(const Eigen::MatrixXd& K, const Eigen::VectorXd& y, double ridge,
                            const Eigen::VectorXd& alpha, double b) {
    Eigen::VectorXd f = K * alpha;
    f.array() += b;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) nll += softplus(f[i]) - y[i] * f[i];
    return nll + 0.5 * ridge * alpha.dot(K * alpha);
}

/// Gradient with respect to (alpha_0..alpha_{n-1}, b), length n+1.
inline Eigen::VectorXd klr_gradient(const Eigen::MatrixXd& K, const Eigen::VectorXd& y,
                                    double ridge, const Eigen::VectorXd& alpha, double b) {
    const auto n = K.rows();
    Eigen::VectorXd f = K * alpha;
    f.array() += b;
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p[i] = sigmoid(f[i]);
    Eigen::VectorXd g(n + 1);
    g.head(n) = K * (p - y + ridge * alpha);
    g[n] = (p - y).sum();
    return g;
}

struct KlrOptions {
    double ridge = 1e-2;
    int max_iterations = 100;
    double gradient_tolerance = 1e-8;
};

struct KlrFit {
    Eigen::VectorXd alpha;
    double bias = 0.0;
    double bandwidth = 1.0;
    bool converged = false;
    int iterations = 0;
};

/// Fits dual weights on a precomputed kernel matrix. Newton directions use the
/// exact Hessian with a Levenberg shift when the solve is unusable; accepted
/// steps never increase the objective.
inline KlrFit fit_klr_dual(const Eigen::MatrixXd& K, const Eigen::VectorXd& y,
                           const KlrOptions& opt) {
    const auto n = K.rows();
    KlrFit fit;
    fit.alpha = Eigen::VectorXd::Zero(n);
    fit.bias = 0.0;

    double obj = klr_objective(K, y, opt.ridge, fit.alpha, fit.bias);
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        fit.iterations = iter;
        Eigen::VectorXd g = klr_gradient(K, y, opt.ridge, fit.alpha, fit.bias);
        if (g.norm() <= opt.gradient_tolerance) {
            fit.converged = true;
            return fit;
        }

        Eigen::VectorXd f = K * fit.alpha;
        f.array() += fit.bias;
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double p = sigmoid(f[i]);
            w[i] = p * (1.0 - p);
        }

        Eigen::MatrixXd H(n + 1, n + 1);
        Eigen::MatrixXd KW = K * w.asDiagonal();
        H.topLeftCorner(n, n) = KW * K + opt.ridge * K;
        H.topRightCorner(n, 1) = KW.rowwise().sum();
        H.bottomLeftCorner(1, n) = H.topRightCorner(n, 1).transpose();
        H(n, n) = w.sum();

        // Newton direction, escalating a Levenberg shift whenever the solve or
        // the line search fails; steepest descent is the last resort.
        const double mu0 = 1e-10 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
        bool accepted = false;
        double mu = 0.0;
        for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
            Eigen::VectorXd step;
            if (attempt < 9) {
                Eigen::MatrixXd Hs = H;
                if (mu > 0.0) Hs.diagonal().array() += mu;
                Eigen::LDLT<Eigen::MatrixXd> ldlt(Hs);
                mu = mu == 0.0 ? mu0 : mu * 100.0;
                if (ldlt.info() != Eigen::Success) continue;
                step = ldlt.solve(-g);
                // One round of iterative refinement; the Hessian is often
                // ill-conditioned when probabilities saturate.
                step += ldlt.solve(-g - Hs * step);
                if (!step.allFinite() || g.dot(step) >= 0.0) continue;
            } else {
                step = -g;
            }

            // Armijo backtracking with a strict-decrease requirement: once
            // progress drops below the objective's floating-point resolution,
            // this direction is exhausted.
            const double slope = g.dot(step);
            for (double t = 1.0; t >= 1e-12; t *= 0.5) {
                Eigen::VectorXd a_try = fit.alpha + t * step.head(n);
                double b_try = fit.bias + t * step[n];
                double obj_try = klr_objective(K, y, opt.ridge, a_try, b_try);
                if (obj_try < obj && obj_try <= obj + 1e-4 * t * slope) {
                    fit.alpha = std::move(a_try);
                    fit.bias = b_try;
                    obj = obj_try;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) return fit;  // at the numeric floor; tolerance not reached
    }
    fit.iterations = opt.max_iterations;
    fit.converged =
        klr_gradient(K, y, opt.ridge, fit.alpha, fit.bias).norm() <= opt.gradient_tolerance;
    return fit;
}

/// Trains on the rows of X (already restricted to the selected features).
/// Bandwidth comes from the median heuristic over X.
inline KlrFit train_kernel_classifier(const Eigen::MatrixXd& X, std::span<const int> y,
                                      const KlrOptions& opt = {}) {
    const auto n = X.rows();
    if (static_cast<size_t>(n) != y.size())
        throw DataError("train_kernel_classifier: labels length mismatch");
    bool any_pos = false, any_neg = false;
    for (int l : y) (l ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg)
        throw DataError("train_kernel_classifier needs both classes present");
    if (!X.allFinite()) throw DataError("train_kernel_classifier: non-finite features");

    double h = median_bandwidth(X);
    Eigen::MatrixXd K = gaussian_kernel_matrix(X, h);
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[static_cast<size_t>(i)] ? 1.0 : 0.0;
    KlrFit fit = fit_klr_dual(K, yv, opt);
    fit.bandwidth = h;
    return fit;
}

// ---------------------------------------------------------------------------

struct KernelClassifier {
    int scale_index = 0;
    int subset_index = 0;
    std::vector<uint32_t> selected_feature_ids;  // patch ids, selection-rank order
    Eigen::MatrixXd support_vectors;             // subset rows x selected features
    Eigen::VectorXd dual_weights;
    double bias = 0.0;
    double bandwidth = 1.0;
    bool converged = true;
    int iterations = 0;

    /// DAT+ probability for a sample already projected onto the selected
    /// features (same column order as support_vectors).
    double predict(const Eigen::VectorXd& x) const {
        const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
        double f = bias;
        for (Eigen::Index i = 0; i < support_vectors.rows(); ++i) {
            double d2 = (support_vectors.row(i).transpose() - x).squaredNorm();
            f += dual_weights[i] * std::exp(-d2 * inv);
        }
        return sigmoid(f);
    }
};

struct EnsembleModel {
    EnsembleConfig config;
    std::vector<int> scale_ms;                   // per scale; 0 = original parcellation
    std::vector<SubagSubset> subsets;            // F entries
    std::vector<KernelClassifier> classifiers;   // scale-major, M*F entries
    std::vector<std::string> training_image_ids;

    int num_scales() const { return static_cast<int>(scale_ms.size()); }
    const KernelClassifier& classifier(int scale, int subset) const {
        return classifiers[static_cast<size_t>(scale) * static_cast<size_t>(config.F) +
                           static_cast<size_t>(subset)];
    }
};

struct Fpds {
    std::string image_id;
    double score = 0.0;
    int n_classifiers_fused = 0;
};

/// One classifier's contribution to a fused score; used for audit logs.
struct MemberPrediction {
    int scale_index = 0;
    int subset_index = 0;
    double probability = 0.0;
};

namespace detail {

/// Feature matrix (images x patches) for one scale; column j corresponds to
/// patch_ids[j] of the reference feature vector.
inline Eigen::MatrixXd scale_matrix(std::span<const MultiScaleFeatureSet> sets, size_t scale) {
    const auto& ref = sets[0].scales[scale];
    Eigen::MatrixXd X(static_cast<Eigen::Index>(sets.size()),
                      static_cast<Eigen::Index>(ref.patch_ids.size()));
    for (size_t i = 0; i < sets.size(); ++i) {
        const auto& fv = sets[i].scales[scale];
        if (fv.patch_ids != ref.patch_ids)
            throw DataError("feature sets do not share the atlas: image " + sets[i].image_id +
                            " differs at scale m=" + std::to_string(ref.scale_m));
        for (size_t j = 0; j < fv.values.size(); ++j)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = fv.values[j];
    }
    return X;
}

/// Values of `sample` at the given patch ids of one scale.
inline Eigen::VectorXd project_sample(const FeatureVector& fv, std::span<const uint32_t> ids) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(ids.size()));
    for (size_t j = 0; j < ids.size(); ++j) {
        auto it = std::lower_bound(fv.patch_ids.begin(), fv.patch_ids.end(), ids[j]);
        if (it == fv.patch_ids.end() || *it != ids[j])
            throw DataError("feature-id mismatch: patch " + std::to_string(ids[j]) +
                            " missing at scale m=" + std::to_string(fv.scale_m));
        x[static_cast<Eigen::Index>(j)] =
            fv.values[static_cast<size_t>(it - fv.patch_ids.begin())];
    }
    return x;
}

}  // namespace detail

/// Features kept per classifier: floor(subset size / 10), floored at 1 so a
/// tiny subset still trains on something.
inline int selection_count_for(int subset_size) { return std::max(1, subset_size / 10); }

/// Trains the full M x F ensemble. Features must all come from one atlas
/// (identical patch ids per scale).
inline EnsembleModel train_ensemble(std::span<const MultiScaleFeatureSet> features,
                                    std::span<const Trajectory> labels,
                                    const EnsembleConfig& config, int jobs = 1) {
    config.validate();
    if (features.size() != labels.size())
        throw DataError("train_ensemble: features/labels length mismatch");
    if (features.empty()) throw DataError("train_ensemble: no training images");

    const auto expected_ms = config.ladder.scale_ms();
    const size_t M = expected_ms.size();
    for (const auto& fs : features) {
        if (fs.scales.size() != M)
            throw DataError("image " + fs.image_id + " has " + std::to_string(fs.scales.size()) +
                            " scales, ladder has " + std::to_string(M));
        for (size_t s = 0; s < M; ++s)
            if (fs.scales[s].scale_m != expected_ms[s])
                throw DataError("image " + fs.image_id + " scale order does not match the ladder");
    }

    EnsembleModel model;
    model.config = config;
    model.scale_ms = expected_ms;
    model.subsets = subag_subsets(labels, config.F, config.gamma, config.seed);
    model.training_image_ids.reserve(features.size());
    for (const auto& fs : features) model.training_image_ids.push_back(fs.image_id);

    std::vector<Eigen::MatrixXd> X_scale(M);
    for (size_t s = 0; s < M; ++s) X_scale[s] = detail::scale_matrix(features, s);

    const int subset_size = 2 * model.subsets[0].per_class_count;
    const int k = selection_count_for(subset_size);

    model.classifiers.resize(M * static_cast<size_t>(config.F));
    parallel_for(static_cast<int>(M * static_cast<size_t>(config.F)), jobs, [&](int job) {
        const int s = job / config.F;
        const int f = job % config.F;
        const auto& subset = model.subsets[static_cast<size_t>(f)];
        const auto& members = subset.member_indices;
        const auto n_sub = static_cast<Eigen::Index>(members.size());

        Eigen::MatrixXd Xsub(n_sub, X_scale[static_cast<size_t>(s)].cols());
        std::vector<int> ysub(static_cast<size_t>(n_sub));
        for (Eigen::Index i = 0; i < n_sub; ++i) {
            Xsub.row(i) = X_scale[static_cast<size_t>(s)].row(members[static_cast<size_t>(i)]);
            ysub[static_cast<size_t>(i)] =
                labels[static_cast<size_t>(members[static_cast<size_t>(i)])] == Trajectory::DATplus
                    ? 1
                    : 0;
        }

        std::vector<int> cols = tstat_select(Xsub, ysub, k);
        Eigen::MatrixXd Xsel(n_sub, k);
        for (int j = 0; j < k; ++j) Xsel.col(j) = Xsub.col(cols[static_cast<size_t>(j)]);

        KlrOptions opt;
        opt.ridge = config.ridge;
        KlrFit fit = train_kernel_classifier(Xsel, ysub, opt);

        KernelClassifier c;
        c.scale_index = s;
        c.subset_index = f;
        const auto& ids = features[0].scales[static_cast<size_t>(s)].patch_ids;
        for (int j : cols) c.selected_feature_ids.push_back(ids[static_cast<size_t>(j)]);
        c.support_vectors = std::move(Xsel);
        c.dual_weights = std::move(fit.alpha);
        c.bias = fit.bias;
        c.bandwidth = fit.bandwidth;
        c.converged = fit.converged;
        c.iterations = fit.iterations;
        model.classifiers[static_cast<size_t>(job)] = std::move(c);
    });
    return model;
}

namespace detail {

inline Fpds fuse(const EnsembleModel& model, const MultiScaleFeatureSet& sample,
                 const std::vector<char>& use_subset, std::vector<MemberPrediction>* members) {
    if (sample.scales.size() != static_cast<size_t>(model.num_scales()))
        throw DataError("sample scale count does not match the model");
    for (size_t s = 0; s < sample.scales.size(); ++s)
        if (sample.scales[s].scale_m != model.scale_ms[s])
            throw DataError("sample scale order does not match the model");

    std::vector<double> probs;
    probs.reserve(model.classifiers.size());
    if (members) members->clear();
    for (const auto& c : model.classifiers) {
        if (!use_subset[static_cast<size_t>(c.subset_index)]) continue;
        Eigen::VectorXd x = project_sample(sample.scales[static_cast<size_t>(c.scale_index)],
                                           c.selected_feature_ids);
        double p = c.predict(x);
        probs.push_back(p);
        if (members) members->push_back({c.scale_index, c.subset_index, p});
    }

    Fpds out;
    out.image_id = sample.image_id;
    out.n_classifiers_fused = static_cast<int>(probs.size());
    out.score = kahan_sum(probs) / static_cast<double>(probs.size());
    return out;
}

}  // namespace detail

/// Standard fusion over all M x F classifiers.
inline Fpds fpds_score(const EnsembleModel& model, const MultiScaleFeatureSet& sample,
                       std::vector<MemberPrediction>* members = nullptr) {
    std::vector<char> use(static_cast<size_t>(model.config.F), 1);
    return detail::fuse(model, sample, use, members);
}

/// Out-of-bag fusion for a training image: only classifiers whose subag subset
/// excludes the image contribute.
inline Fpds fpds_oob(const EnsembleModel& model, const MultiScaleFeatureSet& sample,
                     int training_image_index, std::vector<MemberPrediction>* members = nullptr) {
    if (training_image_index < 0 ||
        static_cast<size_t>(training_image_index) >= model.training_image_ids.size())
        throw DataError("training image index out of range");
    std::vector<char> use(static_cast<size_t>(model.config.F), 0);
    int n_excluding = 0;
    for (const auto& s : model.subsets)
        if (!s.contains(training_image_index)) {
            use[static_cast<size_t>(s.subset_index)] = 1;
            ++n_excluding;
        }
    if (n_excluding == 0)
        throw DataError("no out-of-bag classifiers for image " +
                        model.training_image_ids[static_cast<size_t>(training_image_index)]);
    return detail::fuse(model, sample, use, members);
}

// ---------------------------------------------------------------------------

struct RoiFrequency {
    uint32_t roi_id = 0;
    double frequency = 0.0;  // fraction of classifiers selecting >= 1 patch of the ROI
};

/// Fraction of the M x F classifiers whose selected patches touch each ROI.
/// Only ROIs with nonzero frequency are returned, most frequent first.
inline std::vector<RoiFrequency> selection_frequency(
    const EnsembleModel& model, std::span<const PatchParcellation> parcellations) {
    if (parcellations.size() != static_cast<size_t>(model.num_scales()))
        throw DataError("selection_frequency: parcellation count does not match the model");
    std::map<uint32_t, size_t> hits;
    for (const auto& c : model.classifiers) {
        const auto& parc = parcellations[static_cast<size_t>(c.scale_index)];
        std::vector<uint32_t> rois;
        rois.reserve(c.selected_feature_ids.size());
        for (uint32_t pid : c.selected_feature_ids) rois.push_back(parc.roi_of(pid));
        std::sort(rois.begin(), rois.end());
        rois.erase(std::unique(rois.begin(), rois.end()), rois.end());
        for (uint32_t r : rois) hits[r]++;
    }
    std::vector<RoiFrequency> out;
    for (const auto& [roi, count] : hits)
        out.push_back({roi, static_cast<double>(count) / static_cast<double>(model.classifiers.size())});
    std::sort(out.begin(), out.end(), [](const RoiFrequency& a, const RoiFrequency& b) {
        if (a.frequency != b.frequency) return a.frequency > b.frequency;
        return a.roi_id < b.roi_id;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Model container: "FPDS-MODEL v1". Little-endian payload with a trailing
// FNV-1a checksum; see README for the field layout.

inline void save_model(const EnsembleModel& model, const std::string& path) {
    std::string out = "FPDS-MODEL v1\n";
    le_put_u32(out, static_cast<uint32_t>(model.config.F));
    le_put_f64(out, model.config.gamma);
    le_put_f64(out, model.config.ridge);
    le_put_u64(out, model.config.seed);
    le_put_u32(out, static_cast<uint32_t>(model.config.ladder.patch_sizes.size()));
    for (int m : model.config.ladder.patch_sizes) le_put_u32(out, static_cast<uint32_t>(m));
    le_put_u32(out, model.config.ladder.include_original ? 1 : 0);

    le_put_u32(out, static_cast<uint32_t>(model.training_image_ids.size()));
    for (const auto& id : model.training_image_ids) {
        le_put_u32(out, static_cast<uint32_t>(id.size()));
        out += id;
    }
    le_put_u32(out, static_cast<uint32_t>(model.subsets.size()));
    for (const auto& s : model.subsets) {
        le_put_u32(out, static_cast<uint32_t>(s.per_class_count));
        le_put_u32(out, static_cast<uint32_t>(s.member_indices.size()));
        for (int i : s.member_indices) le_put_u32(out, static_cast<uint32_t>(i));
    }
    le_put_u32(out, static_cast<uint32_t>(model.scale_ms.size()));
    for (int m : model.scale_ms) le_put_u32(out, static_cast<uint32_t>(m));

    le_put_u32(out, static_cast<uint32_t>(model.classifiers.size()));
    for (const auto& c : model.classifiers) {
        le_put_u32(out, static_cast<uint32_t>(c.scale_index));
        le_put_u32(out, static_cast<uint32_t>(c.subset_index));
        le_put_u32(out, static_cast<uint32_t>(c.selected_feature_ids.size()));
        for (uint32_t id : c.selected_feature_ids) le_put_u32(out, id);
        le_put_f64(out, c.bandwidth);
        le_put_f64(out, c.bias);
        le_put_u32(out, c.converged ? 1 : 0);
        le_put_u32(out, static_cast<uint32_t>(c.iterations));
        le_put_u32(out, static_cast<uint32_t>(c.support_vectors.rows()));
        for (Eigen::Index i = 0; i < c.dual_weights.size(); ++i) le_put_f64(out, c.dual_weights[i]);
        for (Eigen::Index i = 0; i < c.support_vectors.rows(); ++i)
            for (Eigen::Index j = 0; j < c.support_vectors.cols(); ++j)
                le_put_f64(out, c.support_vectors(i, j));
    }
    le_put_u64(out, fnv1a64(out.data(), out.size()));
    write_file_bytes(path, out);
}

inline EnsembleModel load_model(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    const std::string magic = "FPDS-MODEL v1\n";
    if (bytes.size() < magic.size() + 8 || bytes.compare(0, magic.size(), magic) != 0)
        throw DataError(path + ": not an FPDS-MODEL v1 file");
    {
        LeReader tail(bytes.data() + bytes.size() - 8, 8);
        uint64_t stored = tail.u64();
        if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
            throw DataError(path + ": corrupt model file (checksum mismatch)");
    }

    LeReader r(bytes.data() + magic.size(), bytes.size() - magic.size() - 8);
    EnsembleModel model;
    try {
        model.config.F = static_cast<int>(r.u32());
        model.config.gamma = r.f64();
        model.config.ridge = r.f64();
        model.config.seed = r.u64();
        uint32_t n_ladder = r.u32();
        model.config.ladder.patch_sizes.clear();
        for (uint32_t i = 0; i < n_ladder; ++i)
            model.config.ladder.patch_sizes.push_back(static_cast<int>(r.u32()));
        model.config.ladder.include_original = r.u32() != 0;

        uint32_t n_ids = r.u32();
        for (uint32_t i = 0; i < n_ids; ++i) {
            uint32_t len = r.u32();
            model.training_image_ids.push_back(r.bytes(len));
        }
        uint32_t n_subsets = r.u32();
        for (uint32_t f = 0; f < n_subsets; ++f) {
            SubagSubset s;
            s.subset_index = static_cast<int>(f);
            s.per_class_count = static_cast<int>(r.u32());
            uint32_t n_members = r.u32();
            for (uint32_t i = 0; i < n_members; ++i)
                s.member_indices.push_back(static_cast<int>(r.u32()));
            model.subsets.push_back(std::move(s));
        }
        uint32_t n_scales = r.u32();
        for (uint32_t i = 0; i < n_scales; ++i)
            model.scale_ms.push_back(static_cast<int>(r.u32()));

        uint32_t n_classifiers = r.u32();
        for (uint32_t ci = 0; ci < n_classifiers; ++ci) {
            KernelClassifier c;
            c.scale_index = static_cast<int>(r.u32());
            c.subset_index = static_cast<int>(r.u32());
            uint32_t k = r.u32();
            for (uint32_t i = 0; i < k; ++i) c.selected_feature_ids.push_back(r.u32());
            c.bandwidth = r.f64();
            c.bias = r.f64();
            c.converged = r.u32() != 0;
            c.iterations = static_cast<int>(r.u32());
            uint32_t n_support = r.u32();
            c.dual_weights.resize(n_support);
            for (uint32_t i = 0; i < n_support; ++i) c.dual_weights[static_cast<Eigen::Index>(i)] = r.f64();
            c.support_vectors.resize(n_support, k);
            for (uint32_t i = 0; i < n_support; ++i)
                for (uint32_t j = 0; j < k; ++j)
                    c.support_vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f64();
            model.classifiers.push_back(std::move(c));
        }
    } catch (const DataError& e) {
        throw DataError(path + ": corrupt model file (" + e.what() + ")");
    }
    if (model.classifiers.size() !=
        static_cast<size_t>(model.num_scales()) * static_cast<size_t>(model.config.F))
        throw DataError(path + ": classifier count does not match M x F");
    return model;
}

}  // namespace fpds
