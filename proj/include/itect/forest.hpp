#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "itect/ents.hpp"

namespace itect::forest {

struct ForestConfig {
    std::size_t trees = 100;
    /// Weight of a benign training sample relative to a malware one; values
    /// above 1 make splits and leaves pay more for benign rows on the malware side.
    double class_weight_fp = 5.0;
    std::size_t max_depth = 0;          // 0 = unlimited
    std::size_t min_leaf = 1;
    std::size_t features_per_split = 0; // 0 = floor(sqrt(D)), at least 1
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ForestConfig&) const = default;
};

/// Flat tree node; dim < 0 marks a leaf.
struct TreeNode {
    int dim = -1;
    double threshold = 0.0;  // go left when value <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    double malware_fraction = 0.0;  // class-weighted share of malware at the leaf
    std::uint32_t count = 0;        // training rows (with bootstrap multiplicity) reaching the node

    [[nodiscard]] bool leaf() const { return dim < 0; }
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    [[nodiscard]] const TreeNode& leaf_for(std::span<const double> row) const;
    [[nodiscard]] bool votes_malware(std::span<const double> row) const;
    bool operator==(const Tree&) const = default;
};

struct TrainedForest {
    ForestConfig config;
    std::vector<Tree> trees;
    std::vector<std::size_t> feature_cols;  // original profile dimension of each input column
    double cutoff = 0.0;
    bool calibrated = false;

    bool operator==(const TrainedForest&) const = default;
};

/// Row labels as booleans (true = malware), taken from a labelled matrix.
std::vector<bool> malware_labels(const ents::FeatureMatrix& m);

/**
 * Bagged CART trees on class-weighted Gini impurity. Each tree gets a
 * bootstrap sample and its own seed derived from config.seed, so the result
 * does not depend on thread scheduling.
 */
TrainedForest train_forest(const ents::FeatureMatrix& matrix, const ForestConfig& config);

/// Fraction of trees whose leaf has malware_fraction > 0.5.
double score(const TrainedForest& forest, std::span<const double> row);

/// score(row) >= cutoff. Throws if the forest was never calibrated.
bool predict(const TrainedForest& forest, std::span<const double> row);

struct CalibrationReport {
    std::vector<std::size_t> fold_of_row;
    std::vector<double> validation_scores;  // out-of-fold score of every training row
    double max_benign_score = 0.0;
    double cutoff = 0.0;
};

/**
 * Stratified k-fold calibration: every fold is scored by a forest trained on
 * the other folds, and the cutoff is set just above the highest out-of-fold
 * benign score (by half a vote). The returned forest is retrained on all rows.
 */
TrainedForest calibrate_zero_fp(const ents::FeatureMatrix& matrix, const ForestConfig& config, std::size_t folds = 10,
                                CalibrationReport* report = nullptr);

/// Half a vote on the grid of a forest with the given number of trees.
double cutoff_step(std::size_t trees);

struct RocPoint {
    double budget = 0.0;     // allowed FP rate
    double threshold = 0.0;  // scores >= threshold are called malware
    double fp_rate = 0.0;
    double tp_rate = 0.0;
};

std::vector<double> default_fp_budgets();

/**
 * For each FP-rate budget, the operating point with the highest TP rate whose
 * FP rate stays within the budget (scores >= threshold predicted malware).
 */
std::vector<RocPoint> roc_points(std::span<const double> scores, const std::vector<bool>& malware,
                                 std::span<const double> budgets);
std::vector<RocPoint> roc_points(std::span<const double> scores, const std::vector<bool>& malware);

std::string forest_to_json(const TrainedForest& f, const std::string& provenance = "{}");
TrainedForest forest_from_json(const std::string& text);
void save_forest(const std::filesystem::path& p, const TrainedForest& f, const std::string& provenance = "{}");
TrainedForest load_forest(const std::filesystem::path& p);

}  // namespace itect::forest
