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
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "fpds/common.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// ROC / threshold metrics. A positive call is score > threshold (strict), so
// scores exactly at the threshold count as negative calls.

struct OperatingPoint {
    double threshold;
    double sensitivity;
    double specificity;
};

struct RocResult {
    double auc = 0.0;
    std::vector<OperatingPoint> operating_points;  // ascending threshold
};

struct ThresholdMetrics {
    double threshold = 0.5;
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double balanced_accuracy = 0.0;
};

/// AUC via the Mann-Whitney statistic: (concordant pairs + 0.5 ties)/(n+ n-),
/// computed with average ranks. Operating points are taken at the sorted
/// unique score values.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DataError("scores/labels length mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("roc_auc needs both classes present");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Rank sum of positives with midranks over tie groups.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t t = i; t <= j; ++t)
            if (labels[order[t]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);

    RocResult r;
    r.auc = u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));

    // Counts of samples with score > t for each unique threshold t.
    size_t pos_above = n_pos, neg_above = n_neg;
    i = 0;
    while (i < n) {
        size_t j = i;
        size_t pos_here = 0, neg_here = 0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++pos_here;
            else ++neg_here;
            ++j;
        }
        pos_above -= pos_here;
        neg_above -= neg_here;
        r.operating_points.push_back(
            {scores[order[i]], static_cast<double>(pos_above) / static_cast<double>(n_pos),
             static_cast<double>(n_neg - neg_above) / static_cast<double>(n_neg)});
        i = j;
    }
    return r;
}

inline ThresholdMetrics threshold_metrics(std::span<const double> scores,
                                          std::span<const int> labels,
                                          double threshold = 0.5) {
    if (scores.size() != labels.size()) throw DataError("scores/labels length mismatch");
    size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool call = scores[i] > threshold;
        if (labels[i]) (call ? tp : fn)++;
        else (call ? fp : tn)++;
    }
    if (tp + fn == 0 || tn + fp == 0) throw DataError("threshold_metrics needs both classes present");
    ThresholdMetrics m;
    m.threshold = threshold;
    m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    m.balanced_accuracy = (m.sensitivity + m.specificity) / 2.0;
    return m;
}

// ---------------------------------------------------------------------------
// Distribution helpers

/// Two-sided p for a t statistic against Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 1e-300;
    boost::math::students_t_distribution<double> dist(df);
    double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
    return std::clamp(p, 1e-300, 1.0);
}

inline double normal_two_sided_p(double z) {
    double p = std::erfc(std::fabs(z) / std::sqrt(2.0));
    return std::clamp(p, 1e-300, 1.0);
}

// ---------------------------------------------------------------------------
// Pearson correlation with two-sided significance from
// t = r sqrt((n-2)/(1-r^2)), df = n-2.

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;
    size_t n = 0;
};

inline PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("pearson: length mismatch");
    const size_t n = x.size();
    if (n < 3) throw DataError("pearson needs n >= 3");
    double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DataError("pearson: zero variance");
    PearsonResult out;
    out.n = n;
    out.r = sxy / std::sqrt(sxx * syy);
    out.r = std::clamp(out.r, -1.0, 1.0);
    double denom = 1.0 - out.r * out.r;
    double t = denom <= 0.0 ? std::numeric_limits<double>::infinity()
                            : out.r * std::sqrt(static_cast<double>(n - 2) / denom);
    out.p = student_t_two_sided_p(t, static_cast<double>(n - 2));
    return out;
}

// ---------------------------------------------------------------------------
// Normality gate and the two-sample location tests behind pairwise_group_test.

struct JarqueBeraResult {
    double statistic = 0.0;
    double p = 0.0;
};

/// Moment-based normality test; JB = n/6 (S^2 + K^2/4) with S the sample
/// skewness and K the excess kurtosis, p from chi-square with 2 df.
/// Zero-variance samples are reported as non-normal (p = 0).
inline JarqueBeraResult jarque_bera(std::span<const double> sample) {
    const size_t n = sample.size();
    if (n < 4) throw DataError("jarque_bera needs n >= 4");
    double m = mean_of(sample);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : sample) {
        double d = v - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    if (m2 == 0.0) return {std::numeric_limits<double>::infinity(), 0.0};
    double skew = m3 / std::pow(m2, 1.5);
    double exkurt = m4 / (m2 * m2) - 3.0;
    JarqueBeraResult out;
    out.statistic = static_cast<double>(n) / 6.0 * (skew * skew + exkurt * exkurt / 4.0);
    out.p = std::exp(-out.statistic / 2.0);  // chi-square(2) survival
    return out;
}

/// Pooled-variance two-sample t-test, two-sided.
inline double two_sample_ttest_p(std::span<const double> a, std::span<const double> b) {
    const size_t na = a.size(), nb = b.size();
    if (na < 2 || nb < 2) throw DataError("t-test needs n >= 2 per sample");
    double ma = mean_of(a), mb = mean_of(b);
    double ssa = 0.0, ssb = 0.0;
    for (double v : a) ssa += (v - ma) * (v - ma);
    for (double v : b) ssb += (v - mb) * (v - mb);
    double df = static_cast<double>(na + nb - 2);
    double sp2 = (ssa + ssb) / df;
    if (sp2 == 0.0) return ma == mb ? 1.0 : 1e-300;
    double t = (ma - mb) / std::sqrt(sp2 * (1.0 / static_cast<double>(na) +
                                            1.0 / static_cast<double>(nb)));
    return student_t_two_sided_p(t, df);
}

namespace detail {

/// Midranks of the pooled sample (a then b).
inline std::vector<double> pooled_midranks(std::span<const double> a, std::span<const double> b) {
    const size_t n = a.size() + b.size();
    std::vector<double> pooled(n);
    for (size_t i = 0; i < a.size(); ++i) pooled[i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) pooled[a.size() + i] = b[i];
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return pooled[x] < pooled[y]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = midrank;
        i = j + 1;
    }
    return ranks;
}

/// Counts combinations of `left` ranks whose sum is <= / >= w_obs, by
/// recursion over the sorted rank list. Rank sums are multiples of 0.5, so the
/// comparisons are exact.
inline void count_ranksum_tails(const std::vector<double>& ranks, size_t start, size_t left,
                                double sum, double w_obs,
                                unsigned long long& n_le, unsigned long long& n_ge) {
    if (left == 0) {
        if (sum <= w_obs) ++n_le;
        if (sum >= w_obs) ++n_ge;
        return;
    }
    if (ranks.size() - start < left) return;
    count_ranksum_tails(ranks, start + 1, left - 1, sum + ranks[start], w_obs, n_le, n_ge);
    count_ranksum_tails(ranks, start + 1, left, sum, w_obs, n_le, n_ge);
}

}  // namespace detail

/// Two-sided Wilcoxon rank-sum p. Exact enumeration of the rank-sum
/// distribution when both samples have at most 10 observations; otherwise the
/// normal approximation with tie correction and continuity correction.
inline double wilcoxon_ranksum_p(std::span<const double> a, std::span<const double> b) {
    const size_t na = a.size(), nb = b.size();
    if (na == 0 || nb == 0) throw DataError("rank-sum test needs nonempty samples");
    const size_t n = na + nb;
    std::vector<double> ranks = detail::pooled_midranks(a, b);
    double w = 0.0;
    for (size_t i = 0; i < na; ++i) w += ranks[i];

    if (na <= 10 && nb <= 10) {
        std::vector<double> sorted_ranks(ranks.begin(), ranks.end());
        std::sort(sorted_ranks.begin(), sorted_ranks.end());
        unsigned long long n_le = 0, n_ge = 0, total = 1;
        detail::count_ranksum_tails(sorted_ranks, 0, na, 0.0, w, n_le, n_ge);
        for (size_t i = 0; i < na; ++i) total = total * (n - i) / (i + 1);  // C(n, na)
        double p = 2.0 * static_cast<double>(std::min(n_le, n_ge)) / static_cast<double>(total);
        return std::clamp(p, 1e-300, 1.0);
    }

    double mean_w = static_cast<double>(na) * static_cast<double>(n + 1) / 2.0;
    // Tie correction over tie-group sizes.
    double tie_term = 0.0;
    {
        std::vector<double> s(ranks.begin(), ranks.end());
        std::sort(s.begin(), s.end());
        size_t i = 0;
        while (i < s.size()) {
            size_t j = i;
            while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
            double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    double var_w = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                   (static_cast<double>(n + 1) -
                    tie_term / (static_cast<double>(n) * static_cast<double>(n - 1)));
    if (var_w <= 0.0) return 1.0;  // all observations tied
    double cc = w > mean_w ? -0.5 : (w < mean_w ? 0.5 : 0.0);
    double z = (w - mean_w + cc) / std::sqrt(var_w);
    return normal_two_sided_p(z);
}

enum class LocationTest { TTest, RankSum };

inline const char* to_string(LocationTest t) {
    return t == LocationTest::TTest ? "t-test" : "ranksum";
}

struct GroupTestResult {
    double p = 1.0;
    LocationTest test = LocationTest::RankSum;
};

/// Two-sided comparison of two samples. Both samples passing a Jarque-Bera
/// normality gate at `normality_alpha` route to the pooled t-test, anything
/// else to the Wilcoxon rank-sum test.
inline GroupTestResult pairwise_group_test(std::span<const double> a, std::span<const double> b,
                                           double normality_alpha = 0.05) {
    if (a.size() < 4 || b.size() < 4)
        throw DataError("pairwise_group_test needs n >= 4 per sample");
    bool normal = jarque_bera(a).p >= normality_alpha && jarque_bera(b).p >= normality_alpha;
    GroupTestResult out;
    if (normal) {
        out.test = LocationTest::TTest;
        out.p = two_sample_ttest_p(a, b);
    } else {
        out.test = LocationTest::RankSum;
        out.p = wilcoxon_ranksum_p(a, b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Covariate-binned score/accuracy tables (age, time to conversion).

struct BinnedCell {
    std::string group;
    double lo = 0.0;
    double hi = 0.0;
    size_t n = 0;
    double mean_score = 0.0;
    double accuracy = 0.0;
};

struct BinnedTable {
    std::vector<double> edges;
    std::vector<BinnedCell> cells;       // nonempty cells only, group-major order
    size_t dropped_missing = 0;          // samples without the covariate
    size_t dropped_out_of_range = 0;     // covariate outside [edges.front, edges.back]
};

inline std::vector<double> linspace_edges(double lo, double hi, double step) {
    const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
    std::vector<double> e;
    e.reserve(static_cast<size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) e.push_back(lo + step * i);
    return e;
}

/// Per (group, bin): count, mean score, and accuracy of score>threshold calls
/// against the binary label. The last bin is closed on the right.
inline BinnedTable binned_report(std::span<const double> scores, std::span<const int> labels,
                                 std::span<const std::string> groups,
                                 std::span<const std::optional<double>> covariate,
                                 std::span<const double> edges, double threshold = 0.5) {
    if (scores.empty()) throw DataError("binned_report: empty input");
    if (scores.size() != labels.size() || scores.size() != groups.size() ||
        scores.size() != covariate.size())
        throw DataError("binned_report: length mismatch");
    if (edges.size() < 2) throw ConfigError("binned_report needs at least 2 bin edges");

    BinnedTable table;
    table.edges.assign(edges.begin(), edges.end());
    const size_t n_bins = edges.size() - 1;

    std::vector<std::string> group_order;
    for (const auto& g : groups)
        if (std::find(group_order.begin(), group_order.end(), g) == group_order.end())
            group_order.push_back(g);

    struct Acc {
        size_t n = 0, correct = 0;
        double sum = 0.0;
    };
    std::vector<std::vector<Acc>> acc(group_order.size(), std::vector<Acc>(n_bins));

    for (size_t i = 0; i < scores.size(); ++i) {
        if (!covariate[i]) {
            table.dropped_missing++;
            continue;
        }
        double v = *covariate[i];
        if (v < edges.front() || v > edges.back()) {
            table.dropped_out_of_range++;
            continue;
        }
        size_t bin = n_bins - 1;
        for (size_t bi = 0; bi + 1 < edges.size(); ++bi)
            if (v >= edges[bi] && (v < edges[bi + 1] || bi == n_bins - 1)) {
                bin = bi;
                break;
            }
        size_t gi = static_cast<size_t>(
            std::find(group_order.begin(), group_order.end(), groups[i]) - group_order.begin());
        auto& a = acc[gi][bin];
        a.n++;
        a.sum += scores[i];
        bool call = scores[i] > threshold;
        if (call == (labels[i] != 0)) a.correct++;
    }

    for (size_t gi = 0; gi < group_order.size(); ++gi)
        for (size_t bi = 0; bi < n_bins; ++bi) {
            const auto& a = acc[gi][bi];
            if (a.n == 0) continue;
            table.cells.push_back({group_order[gi], edges[bi], edges[bi + 1], a.n,
                                   a.sum / static_cast<double>(a.n),
                                   static_cast<double>(a.correct) / static_cast<double>(a.n)});
        }
    return table;
}

/// AUC of stable-MCI (negative) against the progressive-MCI images whose time
/// to conversion is within `window_years` (positive).
inline RocResult windowed_conversion_auc(std::span<const double> smci_scores,
                                         std::span<const double> pmci_scores,
                                         std::span<const double> pmci_ttc_years,
                                         double window_years) {
    if (pmci_scores.size() != pmci_ttc_years.size())
        throw DataError("windowed_conversion_auc: pMCI length mismatch");
    if (!(window_years > 0)) throw ConfigError("conversion window must be > 0");
    std::vector<double> scores(smci_scores.begin(), smci_scores.end());
    std::vector<int> labels(smci_scores.size(), 0);
    size_t n_pos = 0;
    for (size_t i = 0; i < pmci_scores.size(); ++i)
        if (pmci_ttc_years[i] <= window_years) {
            scores.push_back(pmci_scores[i]);
            labels.push_back(1);
            ++n_pos;
        }
    if (n_pos == 0) throw DataError("no pMCI images within the conversion window");
    return roc_auc(scores, labels);
}

}  // namespace fpds
