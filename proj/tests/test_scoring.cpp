#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "tsadc/rng.hpp"
#include "tsadc/scoring.hpp"

using namespace tsadc;

namespace {

Mask fixed_mask(std::size_t K, std::size_t L, const std::vector<double>& v) {
    Mask m;
    m.K = K;
    m.L = L;
    m.v = v;
    return m;
}

}  // namespace

TEST(ScoreS1, ZeroWhenMaskedRegionMatches) {
    Rng rng(201);
    Tensor x = Tensor::randn({2, 4}, rng);
    Mask m = fixed_mask(2, 4, {1, 0, 1, 1, 0, 1, 1, 1});
    std::vector<double> est = x.values();
    est[0] += 5.0;  // kept entry: must not contribute
    est[7] -= 3.0;  // kept entry
    EXPECT_DOUBLE_EQ(score_s1(x, Tensor({2, 4}, std::move(est)), m), 0.0);
    EXPECT_DOUBLE_EQ(score_s1(x, x, m), 0.0);
}

TEST(ScoreS1, SingleMaskedCellHandValue) {
    Tensor x = Tensor::zeros({1, 4});
    std::vector<double> est(4, 0.0);
    est[2] = 2.0;
    Mask m = fixed_mask(1, 4, {1, 1, 0, 1});
    // ((2)^2) / L = 4/4, sqrt -> 1
    EXPECT_DOUBLE_EQ(score_s1(x, Tensor({1, 4}, std::move(est)), m), 1.0);
}

TEST(ScoreS1, ShapeErrors) {
    Tensor x = Tensor::zeros({2, 4});
    Mask m = fixed_mask(2, 4, std::vector<double>(8, 0.0));
    EXPECT_THROW(score_s1(x, Tensor::zeros({2, 5}), m), ShapeError);
    EXPECT_THROW(score_s1(Tensor::zeros({2, 5}), Tensor::zeros({2, 5}), m), ShapeError);
}

TEST(ScoreS2, ClosedForms) {
    Rng rng(202);
    Tensor x = Tensor::randn({3, 5}, rng);
    EXPECT_DOUBLE_EQ(score_s2(x, x), 0.0);

    // constant error e in every cell -> sqrt(K L e^2 / L) = e sqrt(K)
    const double e = 0.5;
    std::vector<double> shifted = x.values();
    for (double& v : shifted) v += e;
    EXPECT_NEAR(score_s2(x, Tensor({3, 5}, std::move(shifted))), e * std::sqrt(3.0), 1e-12);

    // homogeneity in the residual
    std::vector<double> d1 = x.values(), d2 = x.values();
    Rng noise(203);
    for (std::size_t i = 0; i < d1.size(); ++i) {
        const double d = noise.normal();
        d1[i] += d;
        d2[i] += 2.0 * d;
    }
    EXPECT_NEAR(score_s2(x, Tensor({3, 5}, std::move(d2))),
                2.0 * score_s2(x, Tensor({3, 5}, std::move(d1))), 1e-12);
    EXPECT_THROW(score_s2(x, Tensor::zeros({5, 3})), ShapeError);
}

TEST(Combine, WeightedSumProperties) {
    ScoreWeights w;
    w.lambda1 = 0.0;
    w.lambda2 = 0.8;
    EXPECT_DOUBLE_EQ(combine(0.9, 0.5, w), 0.4);
    w.lambda1 = w.lambda2 = 1.0;
    EXPECT_DOUBLE_EQ(combine(0.3, 0.7, w), 1.0);

    // order is invariant under common positive scaling of the weights
    ScoreWeights small{0.5, 0.5}, large{2.0, 2.0};
    const double a = combine(0.2, 0.9, small), b = combine(0.8, 0.1, small);
    const double as = combine(0.2, 0.9, large), bs = combine(0.8, 0.1, large);
    EXPECT_EQ(a < b, as < bs);

    // monotone nondecreasing in each component
    ScoreWeights half{0.5, 0.5};
    EXPECT_LE(combine(0.3, 0.4, half), combine(0.5, 0.4, half));
    EXPECT_LE(combine(0.3, 0.4, half), combine(0.3, 0.6, half));

    ScoreWeights bad{-0.1, 0.5};
    EXPECT_THROW(combine(1.0, 1.0, bad), ConfigError);
}

TEST(ThresholdSearch, SeparableScoresPickTheGapMidpoint) {
    const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> labels{0, 0, 1, 1};
    const double tau = threshold_search(scores, labels);
    EXPECT_DOUBLE_EQ(tau, 0.5);
    EXPECT_DOUBLE_EQ(metrics(scores, labels, tau).f1, 1.0);
}

TEST(ThresholdSearch, SingleClassLabelsRejected) {
    EXPECT_THROW(threshold_search({0.1, 0.2}, {0, 0}), ContractError);
    EXPECT_THROW(threshold_search({0.1, 0.2}, {1, 1}), ContractError);
}

TEST(ThresholdSearch, MatchesExhaustiveScanOracle) {
    Rng rng(204);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        bool pos = false, neg = false;
        for (int i = 0; i < 30; ++i) {
            // coarse grid keeps duplicate scores frequent to exercise ties
            scores.push_back(double(rng.uniform_index(10)) / 10.0);
            labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
            (labels.back() ? pos : neg) = true;
        }
        if (!pos) labels[0] = 1;
        if (!neg) labels[1] = 0;

        const double tau = threshold_search(scores, labels);

        // independent exhaustive scan over the same candidate definition
        std::vector<double> uniq(scores);
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        std::vector<double> cands{-std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity()};
        for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
            cands.push_back(0.5 * (uniq[i] + uniq[i + 1]));
        std::sort(cands.begin(), cands.end());

        double best_f1 = -1.0, best_rec = -1.0, best_tau = 0.0;
        for (double c : cands) {
            std::size_t tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                if (scores[i] > c && labels[i] == 1) ++tp;
                if (scores[i] > c && labels[i] == 0) ++fp;
                if (scores[i] <= c && labels[i] == 1) ++fn;
            }
            const double rec = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
            const double prec = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
            const double f1 = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
            if (f1 > best_f1 || (f1 == best_f1 && rec > best_rec)) {
                best_f1 = f1;
                best_rec = rec;
                best_tau = c;
            }
        }
        EXPECT_EQ(tau, best_tau) << "trial " << trial;
        EXPECT_DOUBLE_EQ(metrics(scores, labels, tau).f1, best_f1);
    }
}

TEST(MetricsAtThreshold, PerfectAndHandValues) {
    const std::vector<double> perfect_scores{0.1, 0.9, 0.2, 0.8};
    const std::vector<int> perfect_labels{0, 1, 0, 1};
    Metrics m = metrics(perfect_scores, perfect_labels, 0.5);
    EXPECT_DOUBLE_EQ(m.f1, 1.0);
    EXPECT_DOUBLE_EQ(m.recall, 1.0);
    EXPECT_DOUBLE_EQ(m.aupr, 1.0);

    Metrics h = metrics({1.0, 2.0, 3.0, 4.0}, {0, 1, 0, 1}, 2.5);
    EXPECT_DOUBLE_EQ(h.f1, 0.5);
    EXPECT_DOUBLE_EQ(h.recall, 0.5);

    EXPECT_THROW(metrics({}, {}, 0.0), ContractError);
    EXPECT_THROW(metrics({0.1}, {2}, 0.0), ContractError);
}

TEST(AveragePrecision, ConstantScoresEqualPrevalence) {
    const std::vector<double> scores(10, 0.42);
    std::vector<int> labels(10, 0);
    labels[2] = labels[5] = labels[6] = 1;
    EXPECT_NEAR(average_precision(scores, labels), 0.3, 1e-12);
}

TEST(AveragePrecision, SixPointHandExample) {
    const std::vector<double> scores{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
    const std::vector<int> labels{1, 0, 1, 1, 0, 0};
    // ranks with positives at 1, 3, 4: AP = (1/3)(1/1 + 2/3 + 3/4) = 29/36
    EXPECT_NEAR(average_precision(scores, labels), 29.0 / 36.0, 1e-12);
}

TEST(AveragePrecision, TiedScoresEnterTogether) {
    const std::vector<double> scores{0.5, 0.5, 0.2};
    const std::vector<int> labels{1, 0, 1};
    // group {0.5}: R=1/2, P=1/2; group {0.2}: R=1, P=2/3
    EXPECT_NEAR(average_precision(scores, labels), 0.5 * 0.5 + 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(ScoreReportOutput, DeterministicBytes) {
    ScoreReport rep;
    rep.tau = 0.375;
    rep.summary = Metrics{0.8, 0.9, 0.7};
    rep.rows.push_back(ScoreRow{0, 0.1, 0.2, 0.15, 0, 0});
    rep.rows.push_back(ScoreRow{1, 1.0 / 3.0, 0.5, 5.0 / 12.0, 1, 1});

    std::ostringstream a, b;
    write_score_csv(rep, a);
    write_score_csv(rep, b);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, 40), "observation_id,s1,s2,s,label,prediction\n");

    std::ostringstream ms;
    write_metrics_summary(rep, ms);
    EXPECT_EQ(ms.str(), "tau=0.375\nf1=0.80000000000000004\nrecall=0.90000000000000002\naupr=0.69999999999999996\n");
}
