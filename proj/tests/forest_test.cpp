#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "itect/error.hpp"
#include "itect/forest.hpp"

using namespace itect;
using namespace itect::forest;
using corpus::Label;
using ents::FeatureMatrix;

namespace {

// Two Gaussian clusters in D dimensions; malware centred at +shift, benign at -shift.
FeatureMatrix clusters(std::mt19937_64& rng, std::size_t per_class, std::size_t dims, double shift, double sd = 1.0) {
    std::normal_distribution<double> g(0, sd);
    FeatureMatrix m;
    for (std::size_t d = 0; d < dims; ++d) m.col_index.push_back(d);
    m.cols = dims;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const bool mal = i % 2 == 0;
        std::vector<double> row(dims);
        for (auto& x : row) x = g(rng) + (mal ? shift : -shift);
        m.append_row(row, "r" + std::to_string(i), mal ? Label::malware : Label::benign);
    }
    return m;
}

// Independent traversal of the flat node array.
double oracle_score(const TrainedForest& f, std::span<const double> row) {
    std::size_t votes = 0;
    for (const auto& t : f.trees) {
        std::size_t i = 0;
        while (t.nodes[i].dim >= 0) i = row[t.nodes[i].dim] <= t.nodes[i].threshold ? t.nodes[i].left : t.nodes[i].right;
        votes += t.nodes[i].malware_fraction > 0.5;
    }
    return double(votes) / f.trees.size();
}

}  // namespace

TEST(TrainForest, SeparableDataIsLearnedExactly) {
    std::mt19937_64 rng(1);
    const auto m = clusters(rng, 100, 2, 5.0, 0.5);
    ForestConfig cfg;
    cfg.trees = 30;
    cfg.seed = 4;
    const auto f = train_forest(m, cfg);
    const auto labels = malware_labels(m);
    for (std::size_t r = 0; r < m.rows; ++r) EXPECT_EQ(score(f, m.row(r)) > 0.5, labels[r]) << r;
}

TEST(TrainForest, DeterministicForSeed) {
    std::mt19937_64 rng(2);
    const auto m = clusters(rng, 80, 6, 0.5);
    ForestConfig cfg;
    cfg.trees = 20;
    cfg.seed = 99;
    const auto a = train_forest(m, cfg);
    EXPECT_EQ(a, train_forest(m, cfg));
    cfg.seed = 100;
    EXPECT_NE(a, train_forest(m, cfg));
}

TEST(TrainForest, HigherFpWeightNeverAddsFalsePositives) {
    std::mt19937_64 rng(3);
    const auto train = clusters(rng, 300, 4, 0.4);
    const auto held = clusters(rng, 1000, 4, 0.4);
    const auto labels = malware_labels(held);
    auto false_positives = [&](double w) {
        ForestConfig cfg;
        cfg.trees = 50;
        cfg.seed = 5;
        cfg.class_weight_fp = w;
        // Fully grown trees end in pure leaves, where the weight has nothing to act on.
        cfg.min_leaf = 10;
        const auto f = train_forest(train, cfg);
        int fp = 0;
        for (std::size_t r = 0; r < held.rows; ++r) fp += !labels[r] && score(f, held.row(r)) >= 0.5;
        return fp;
    };
    const int fp1 = false_positives(1), fp10 = false_positives(10);
    EXPECT_LE(fp10, fp1);
    EXPECT_LT(fp10, fp1 / 2) << "weighting should bite on overlapping clusters";
}

TEST(TrainForest, RejectsOneClass) {
    FeatureMatrix m;
    m.cols = 1;
    m.col_index = {0};
    const double a[] = {1.0}, b[] = {2.0};
    m.append_row(a, "a", Label::malware);
    m.append_row(b, "b", Label::malware);
    EXPECT_THROW(train_forest(m, {}), Error);
}

TEST(Score, MatchesOracleAndBounds) {
    std::mt19937_64 rng(4);
    const auto m = clusters(rng, 100, 5, 0.3);
    ForestConfig cfg;
    cfg.trees = 25;
    const auto f = train_forest(m, cfg);
    const auto probe = clusters(rng, 100, 5, 0.3);
    for (std::size_t r = 0; r < probe.rows; ++r) {
        const double s = score(f, probe.row(r));
        EXPECT_EQ(s, oracle_score(f, probe.row(r)));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Score, MalwareNeighbourhoodScoresOne) {
    std::mt19937_64 rng(5);
    const auto m = clusters(rng, 100, 3, 6.0, 0.3);
    const auto f = train_forest(m, {});
    const std::vector<double> deep_malware(3, 6.0);
    EXPECT_EQ(score(f, deep_malware), 1.0);
}

TEST(Score, SingleTreeIsBinary) {
    std::mt19937_64 rng(6);
    const auto m = clusters(rng, 50, 3, 0.2);
    ForestConfig cfg;
    cfg.trees = 1;
    const auto f = train_forest(m, cfg);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double s = score(f, m.row(r));
        EXPECT_TRUE(s == 0.0 || s == 1.0);
    }
}

TEST(Score, LeafFractionsMatchTrainingCounts) {
    std::mt19937_64 rng(7);
    const auto m = clusters(rng, 60, 2, 0.3);
    ForestConfig cfg;
    cfg.trees = 5;
    const auto f = train_forest(m, cfg);
    for (const auto& t : f.trees) {
        std::set<std::size_t> reached;
        std::vector<std::size_t> stack{0};
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            reached.insert(i);
            const auto& n = t.nodes[i];
            if (n.leaf()) {
                EXPECT_GE(n.malware_fraction, 0.0);
                EXPECT_LE(n.malware_fraction, 1.0);
                EXPECT_GE(n.count, 1u);
            } else {
                EXPECT_EQ(t.nodes[n.left].count + t.nodes[n.right].count, n.count);
                stack.push_back(n.left);
                stack.push_back(n.right);
            }
        }
        EXPECT_EQ(reached.size(), t.nodes.size());
    }
}

TEST(Predict, RequiresCalibration) {
    std::mt19937_64 rng(8);
    const auto m = clusters(rng, 30, 2, 1.0);
    const auto f = train_forest(m, {});
    EXPECT_THROW(predict(f, m.row(0)), Error);
}

TEST(Calibrate, ZeroValidationFalsePositivesByReplay) {
    std::mt19937_64 rng(9);
    const auto m = clusters(rng, 150, 4, 0.6);
    ForestConfig cfg;
    cfg.trees = 40;
    cfg.seed = 1;
    CalibrationReport rep;
    const auto f = calibrate_zero_fp(m, cfg, 10, &rep);
    const auto labels = malware_labels(m);
    EXPECT_TRUE(f.calibrated);
    double max_benign = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
        EXPECT_LT(rep.fold_of_row[r], 10u);
        if (!labels[r]) {
            EXPECT_LT(rep.validation_scores[r], f.cutoff);
            max_benign = std::max(max_benign, rep.validation_scores[r]);
        }
    }
    EXPECT_EQ(rep.max_benign_score, max_benign);
    EXPECT_DOUBLE_EQ(f.cutoff, max_benign + 1.0 / (2 * cfg.trees));
    EXPECT_EQ(cutoff_step(40), 1.0 / 80);
    // Determinism of the whole calibration.
    CalibrationReport again;
    EXPECT_EQ(calibrate_zero_fp(m, cfg, 10, &again), f);
    EXPECT_EQ(again.fold_of_row, rep.fold_of_row);
    // Folds are stratified: every fold holds benign rows.
    std::vector<int> benign_per_fold(10, 0);
    for (std::size_t r = 0; r < m.rows; ++r) benign_per_fold[rep.fold_of_row[r]] += !labels[r];
    for (int c : benign_per_fold) EXPECT_GE(c, 14);
}

TEST(Calibrate, BenignOutlierMakesForestSilent) {
    std::mt19937_64 rng(10);
    auto m = clusters(rng, 100, 3, 5.0, 0.3);
    // A benign row deep inside the malware cluster.
    const std::vector<double> outlier(3, 5.0);
    m.append_row(outlier, "outlier", Label::benign);
    ForestConfig cfg;
    cfg.trees = 20;
    const auto f = calibrate_zero_fp(m, cfg, 10);
    EXPECT_GT(f.cutoff, 1.0);
    for (std::size_t r = 0; r < m.rows; ++r) EXPECT_FALSE(predict(f, m.row(r)));
}

TEST(Calibrate, Errors) {
    std::mt19937_64 rng(11);
    const auto m = clusters(rng, 4, 2, 1.0);
    EXPECT_THROW(calibrate_zero_fp(m, {}, 1), Error);
    EXPECT_THROW(calibrate_zero_fp(m, {}, 10), Error);  // 4 benign rows for 10 folds
}

TEST(Cutoff, RaisingItNeverAddsPositives) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(500);
    for (auto& x : s) x = std::round(u(rng) * 40) / 40;
    std::size_t prev = s.size() + 1;
    for (double c = 0; c <= 1.05; c += 0.0125) {
        const auto n = static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double x) { return x >= c; }));
        EXPECT_LE(n, prev);
        prev = n;
    }
}

namespace {

// Brute-force sweep over every distinct threshold plus "predict nothing".
std::vector<std::pair<double, double>> oracle_roc(const std::vector<double>& s, const std::vector<bool>& mal,
                                                  const std::vector<double>& budgets) {
    std::set<double> thresholds(s.begin(), s.end());
    thresholds.insert(std::numeric_limits<double>::infinity());
    const double pos = std::count(mal.begin(), mal.end(), true), neg = mal.size() - pos;
    std::vector<std::pair<double, double>> out;
    for (double b : budgets) {
        double best_tp = -1, best_fp = 0;
        for (double t : thresholds) {
            double fp = 0, tp = 0;
            for (std::size_t i = 0; i < s.size(); ++i)
                if (s[i] >= t) (mal[i] ? tp : fp) += 1;
            const double fpr = neg > 0 ? fp / neg : 0, tpr = pos > 0 ? tp / pos : 0;
            if (fpr <= b + 1e-12 && (tpr > best_tp || (tpr == best_tp && fpr < best_fp))) {
                best_tp = tpr;
                best_fp = fpr;
            }
        }
        out.emplace_back(best_fp, best_tp);
    }
    return out;
}

}  // namespace

TEST(Roc, MatchesThresholdSweepOracle) {
    std::mt19937_64 rng(13);
    const auto m = clusters(rng, 150, 4, 0.5);
    const auto probe = clusters(rng, 200, 4, 0.5);
    ForestConfig cfg;
    cfg.trees = 30;
    const auto f = train_forest(m, cfg);
    std::vector<double> s;
    for (std::size_t r = 0; r < probe.rows; ++r) s.push_back(score(f, probe.row(r)));
    const auto labels = malware_labels(probe);
    const auto budgets = default_fp_budgets();
    const auto got = roc_points(s, labels, budgets);
    const auto want = oracle_roc(s, labels, budgets);
    ASSERT_EQ(got.size(), want.size());
    double prev_tp = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].budget, budgets[i]);
        EXPECT_DOUBLE_EQ(got[i].tp_rate, want[i].second) << budgets[i];
        EXPECT_LE(got[i].fp_rate, budgets[i] + 1e-12);
        EXPECT_GE(got[i].tp_rate, prev_tp);  // staircase is monotone
        prev_tp = got[i].tp_rate;
    }
}

TEST(Roc, PerfectSeparation) {
    const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
    const std::vector<bool> mal = {true, true, false, false};
    const auto pts = roc_points(s, mal);
    EXPECT_EQ(pts[0].fp_rate, 0.0);
    EXPECT_EQ(pts[0].tp_rate, 1.0);
}

TEST(Roc, RandomScoresFollowTheDiagonal) {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(20000);
    std::vector<bool> mal(20000);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = u(rng);
        mal[i] = i % 2;
    }
    for (const auto& p : roc_points(s, mal)) EXPECT_NEAR(p.tp_rate, p.budget, 0.03) << p.budget;
}

TEST(Roc, AllEqualScoresJumpOnce) {
    const std::vector<double> s(10, 0.5);
    const std::vector<bool> mal = {true, false, true, false, true, false, true, false, true, false};
    for (const auto& p : roc_points(s, mal)) EXPECT_EQ(p.tp_rate, p.budget >= 1.0 ? 1.0 : 0.0) << p.budget;
}

TEST(ForestJson, RoundTrip) {
    std::mt19937_64 rng(15);
    const auto m = clusters(rng, 40, 3, 0.4);
    ForestConfig cfg;
    cfg.trees = 7;
    cfg.seed = 3;
    cfg.class_weight_fp = 2.5;
    auto f = calibrate_zero_fp(m, cfg, 4);
    f.feature_cols = {2, 9, 30};
    EXPECT_EQ(forest_from_json(forest_to_json(f, "{\"tool\":\"itect\"}")), f);
    EXPECT_THROW(forest_from_json("{\"format\":\"other\"}"), Error);
}
