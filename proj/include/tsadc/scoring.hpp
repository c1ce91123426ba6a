// Anomaly scoring: s1 measures how badly the denoiser resamples the masked
// region, s2 measures how badly the dependency model reconstructs the whole
// window, and the weighted sum s = lambda1 s1 + lambda2 s2 is thresholded by
// a tau searched on the validation split for maximum F1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/masking.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

struct ScoreWeights {
    double lambda1 = 0.5;
    double lambda2 = 0.5;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0)
            throw ConfigError("score weights must be nonnegative");
    }
};

// RMSE over masked entries with the window-length normalization
//   s1 = sqrt((1/L) sum_l sum_k ((x0_hat - x) .* (1 - v))^2).
inline double score_s1(const Tensor& x, const Tensor& x0_hat, const Mask& mask) {
    if (x.shape() != x0_hat.shape())
        throw ShapeError("estimate " + shape_str(x0_hat.shape()) + " does not match observation " +
                         shape_str(x.shape()));
    if (x.shape() != Shape{mask.K, mask.L})
        throw ShapeError("mask extent does not match observation " + shape_str(x.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (mask.v[i] == 0.0) {
            const double d = x0_hat.values()[i] - x.values()[i];
            acc += d * d;
        }
    return std::sqrt(acc / double(mask.L));
}

// Whole-window reconstruction RMSE, s2 = sqrt((1/L) sum_l sum_k (xr - x)^2).
inline double score_s2(const Tensor& x, const Tensor& recon) {
    if (x.shape() != recon.shape())
        throw ShapeError("reconstruction " + shape_str(recon.shape()) +
                         " does not match observation " + shape_str(x.shape()));
    if (x.rank() != 2) throw ShapeError("observations must be rank-2 (K, L)");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = recon.values()[i] - x.values()[i];
        acc += d * d;
    }
    return std::sqrt(acc / double(x.shape()[1]));
}

inline double combine(double s1, double s2, const ScoreWeights& w) {
    w.validate();
    return w.lambda1 * s1 + w.lambda2 * s2;
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct Metrics {
    double f1 = 0.0;
    double recall = 0.0;
    double aupr = 0.0;
};

namespace detail_scoring {

inline void check_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw ContractError("metrics need at least one observation");
    if (scores.size() != labels.size())
        throw ContractError("score and label counts disagree");
    for (int l : labels)
        if (l != 0 && l != 1) throw ContractError("labels must be 0 (normal) or 1 (abnormal)");
}

struct F1Recall {
    double f1 = 0.0, recall = 0.0;
};

inline F1Recall f1_recall_at(const std::vector<double>& scores, const std::vector<int>& labels,
                             double tau) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > tau;
        if (pred && labels[i] == 1) ++tp;
        if (pred && labels[i] == 0) ++fp;
        if (!pred && labels[i] == 1) ++fn;
    }
    F1Recall out;
    out.recall = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
    const double precision = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
    out.f1 = (precision + out.recall) == 0.0
                 ? 0.0
                 : 2.0 * precision * out.recall / (precision + out.recall);
    return out;
}

}  // namespace detail_scoring

// Average precision over distinct score thresholds: walking the ranking from
// the highest score down, tied scores enter together, and each threshold
// contributes (R_i - R_{i-1}) * P_i.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail_scoring::check_labels(scores, labels);
    std::size_t positives = 0;
    for (int l : labels) positives += std::size_t(l);
    if (positives == 0) throw ContractError("average precision needs at least one abnormal label");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += std::size_t(labels[order[j]]);
            ++seen;
            ++j;
        }
        const double recall = double(tp) / double(positives);
        const double precision = double(tp) / double(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

inline Metrics metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                       double tau) {
    detail_scoring::check_labels(scores, labels);
    Metrics m;
    const detail_scoring::F1Recall fr = detail_scoring::f1_recall_at(scores, labels, tau);
    m.f1 = fr.f1;
    m.recall = fr.recall;
    m.aupr = average_precision(scores, labels);
    return m;
}

// ---------------------------------------------------------------------------
// Threshold search
// ---------------------------------------------------------------------------

// Candidates are the midpoints between consecutive sorted unique scores plus
// -inf/+inf sentinels. Ties prefer higher recall, then the lower threshold.
inline double threshold_search(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail_scoring::check_labels(scores, labels);
    bool has_pos = false, has_neg = false;
    for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw ContractError("threshold search needs both classes in the validation labels");

    std::vector<double> uniq(scores);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<double> candidates;
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
        candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    candidates.push_back(std::numeric_limits<double>::infinity());
    std::sort(candidates.begin(), candidates.end());

    double best_tau = candidates.front();
    detail_scoring::F1Recall best;
    bool first = true;
    for (double tau : candidates) {
        const detail_scoring::F1Recall fr = detail_scoring::f1_recall_at(scores, labels, tau);
        if (first || fr.f1 > best.f1 || (fr.f1 == best.f1 && fr.recall > best.recall)) {
            best = fr;
            best_tau = tau;
            first = false;
        }
    }
    return best_tau;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ScoreRow {
    std::size_t id = 0;
    double s1 = 0.0, s2 = 0.0, s = 0.0;
    int label = 0;
    int prediction = 0;
};

struct ScoreReport {
    std::vector<ScoreRow> rows;
    double tau = 0.0;
    Metrics summary;
};

namespace detail_scoring {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail_scoring

inline void write_score_csv(const ScoreReport& report, std::ostream& os) {
    os << "observation_id,s1,s2,s,label,prediction\n";
    for (const ScoreRow& r : report.rows)
        os << r.id << ',' << detail_scoring::fmt_double(r.s1) << ','
           << detail_scoring::fmt_double(r.s2) << ',' << detail_scoring::fmt_double(r.s) << ','
           << r.label << ',' << r.prediction << '\n';
}

inline void write_metrics_summary(const ScoreReport& report, std::ostream& os) {
    os << "tau=" << detail_scoring::fmt_double(report.tau) << '\n'
       << "f1=" << detail_scoring::fmt_double(report.summary.f1) << '\n'
       << "recall=" << detail_scoring::fmt_double(report.summary.recall) << '\n'
       << "aupr=" << detail_scoring::fmt_double(report.summary.aupr) << '\n';
}

}  // namespace tsadc
