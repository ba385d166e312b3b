#include "itect/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::forest {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

struct TreeBuilder {
    const ents::FeatureMatrix& x;
    const std::vector<bool>& malware;
    const ForestConfig& cfg;
    std::size_t mtry;
    std::mt19937_64 rng;

    struct Pending {
        std::int32_t node;
        std::vector<std::uint32_t> samples;
        std::size_t depth;
    };

    double weight(std::uint32_t r) const { return malware[r] ? 1.0 : cfg.class_weight_fp; }

    Tree build(std::vector<std::uint32_t> samples) {
        Tree tree;
        tree.nodes.emplace_back();
        std::vector<Pending> stack;
        stack.push_back({0, std::move(samples), 0});
        std::vector<std::size_t> features(x.cols);
        std::iota(features.begin(), features.end(), std::size_t{0});
        std::vector<std::pair<double, std::uint32_t>> sorted;

        while (!stack.empty()) {
            Pending job = std::move(stack.back());
            stack.pop_back();

            double wm = 0.0, wb = 0.0;
            for (auto r : job.samples) (malware[r] ? wm : wb) += weight(r);
            {
                TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
                node.count = static_cast<std::uint32_t>(job.samples.size());
                node.malware_fraction = wm + wb > 0.0 ? wm / (wm + wb) : 0.0;
            }
            const bool pure = wm == 0.0 || wb == 0.0;
            const bool too_deep = cfg.max_depth != 0 && job.depth >= cfg.max_depth;
            if (pure || too_deep || job.samples.size() < 2 * cfg.min_leaf) continue;

            // Partial Fisher-Yates: the first mtry entries are the candidate features.
            for (std::size_t i = 0; i < mtry; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, features.size() - 1);
                std::swap(features[i], features[pick(rng)]);
            }

            const double parent_score = (wm * wm + wb * wb) / (wm + wb);
            double best_gain = 1e-12;
            int best_dim = -1;
            double best_threshold = 0.0;
            for (std::size_t f = 0; f < mtry; ++f) {
                const std::size_t dim = features[f];
                sorted.clear();
                for (auto r : job.samples) sorted.emplace_back(x.at(r, dim), r);
                std::sort(sorted.begin(), sorted.end());
                double lm = 0.0, lb = 0.0;
                for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                    const auto r = sorted[i].second;
                    (malware[r] ? lm : lb) += weight(r);
                    const std::size_t left_n = i + 1;
                    if (left_n < cfg.min_leaf) continue;
                    if (sorted.size() - left_n < cfg.min_leaf) break;
                    if (sorted[i].first == sorted[i + 1].first) continue;
                    const double rm = wm - lm, rb = wb - lb;
                    // Weighted Gini gain up to the constant parent term.
                    const double score = (lm * lm + lb * lb) / (lm + lb) + (rm * rm + rb * rb) / (rm + rb);
                    const double gain = score - parent_score;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_dim = static_cast<int>(dim);
                        double t = 0.5 * (sorted[i].first + sorted[i + 1].first);
                        if (!(t < sorted[i + 1].first)) t = sorted[i].first;
                        best_threshold = t;
                    }
                }
            }
            if (best_dim < 0) continue;

            std::vector<std::uint32_t> left, right;
            for (auto r : job.samples)
                (x.at(r, static_cast<std::size_t>(best_dim)) <= best_threshold ? left : right).push_back(r);
            const auto li = static_cast<std::int32_t>(tree.nodes.size());
            tree.nodes.emplace_back();
            const auto ri = static_cast<std::int32_t>(tree.nodes.size());
            tree.nodes.emplace_back();
            TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
            node.dim = best_dim;
            node.threshold = best_threshold;
            node.left = li;
            node.right = ri;
            stack.push_back({ri, std::move(right), job.depth + 1});
            stack.push_back({li, std::move(left), job.depth + 1});
        }
        return tree;
    }
};

ents::FeatureMatrix select_rows(const ents::FeatureMatrix& m, std::span<const std::size_t> rows) {
    ents::FeatureMatrix out;
    out.cols = m.cols;
    out.col_index = m.col_index;
    for (auto r : rows) {
        out.data.insert(out.data.end(), m.row(r).begin(), m.row(r).end());
        out.row_ids.push_back(m.row_ids[r]);
        if (m.labelled()) out.labels.push_back(m.labels[r]);
        ++out.rows;
    }
    return out;
}

}  // namespace

void ForestConfig::validate() const {
    if (trees < 1) throw Error("forest needs at least one tree", ErrorKind::usage);
    if (!(class_weight_fp >= 1.0)) throw Error("false-positive weight must be >= 1", ErrorKind::usage);
    if (min_leaf < 1) throw Error("min_leaf must be >= 1", ErrorKind::usage);
}

const TreeNode& Tree::leaf_for(std::span<const double> row) const {
    const TreeNode* node = &nodes.at(0);
    while (!node->leaf()) {
        const auto dim = static_cast<std::size_t>(node->dim);
        if (dim >= row.size()) throw Error("feature row narrower than the trained forest");
        node = &nodes[static_cast<std::size_t>(row[dim] <= node->threshold ? node->left : node->right)];
    }
    return *node;
}

bool Tree::votes_malware(std::span<const double> row) const { return leaf_for(row).malware_fraction > 0.5; }

std::vector<bool> malware_labels(const ents::FeatureMatrix& m) {
    if (!m.labelled()) throw Error("feature matrix has no labels");
    std::vector<bool> out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = m.labels[r] == corpus::Label::malware;
    return out;
}

TrainedForest train_forest(const ents::FeatureMatrix& matrix, const ForestConfig& config) {
    config.validate();
    const auto malware = malware_labels(matrix);
    const auto n_mal = static_cast<std::size_t>(std::count(malware.begin(), malware.end(), true));
    if (n_mal == 0 || n_mal == matrix.rows) throw Error("training data must contain both malware and benign rows");
    if (matrix.cols == 0) throw Error("feature matrix has no columns");

    std::size_t mtry = config.features_per_split;
    if (mtry == 0) mtry = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(matrix.cols))));
    mtry = std::clamp<std::size_t>(mtry, 1, matrix.cols);

    TrainedForest forest;
    forest.config = config;
    forest.feature_cols = matrix.col_index;
    forest.trees.resize(config.trees);
    parallel_for(config.trees, [&](std::size_t t) {
        TreeBuilder builder{matrix, malware, config, mtry, std::mt19937_64(derive_seed(config.seed, 1, t))};
        std::uniform_int_distribution<std::uint32_t> draw(0, static_cast<std::uint32_t>(matrix.rows - 1));
        std::vector<std::uint32_t> sample(matrix.rows);
        for (auto& s : sample) s = draw(builder.rng);
        forest.trees[t] = builder.build(std::move(sample));
    });
    return forest;
}

double score(const TrainedForest& forest, std::span<const double> row) {
    if (forest.trees.empty()) throw Error("forest has no trees");
    std::size_t votes = 0;
    for (const auto& t : forest.trees) votes += t.votes_malware(row) ? 1 : 0;
    return static_cast<double>(votes) / static_cast<double>(forest.trees.size());
}

bool predict(const TrainedForest& forest, std::span<const double> row) {
    if (!forest.calibrated) throw Error("forest has no calibrated cutoff");
    return score(forest, row) >= forest.cutoff;
}

double cutoff_step(std::size_t trees) { return 1.0 / (2.0 * static_cast<double>(trees)); }

TrainedForest calibrate_zero_fp(const ents::FeatureMatrix& matrix, const ForestConfig& config, std::size_t folds,
                                CalibrationReport* report) {
    config.validate();
    if (folds < 2) throw Error("calibration needs at least 2 folds", ErrorKind::usage);
    const auto malware = malware_labels(matrix);

    // Stratified, seeded fold assignment: shuffle each class, deal round-robin.
    std::vector<std::size_t> fold_of(matrix.rows, 0);
    std::mt19937_64 rng(derive_seed(config.seed, 2, 0));
    for (bool cls : {true, false}) {
        std::vector<std::size_t> idx;
        for (std::size_t r = 0; r < matrix.rows; ++r)
            if (malware[r] == cls) idx.push_back(r);
        if (!cls && idx.size() < folds)
            throw Error("calibration needs at least one benign row per fold (" + std::to_string(idx.size()) +
                        " benign rows for " + std::to_string(folds) + " folds)");
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < idx.size(); ++i) fold_of[idx[i]] = i % folds;
    }

    std::vector<double> oof(matrix.rows, 0.0);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> train_rows, held_rows;
        for (std::size_t r = 0; r < matrix.rows; ++r) (fold_of[r] == f ? held_rows : train_rows).push_back(r);
        ForestConfig fold_cfg = config;
        fold_cfg.seed = derive_seed(config.seed, 3, f);
        const auto fold_forest = train_forest(select_rows(matrix, train_rows), fold_cfg);
        for (auto r : held_rows) oof[r] = score(fold_forest, matrix.row(r));
    }

    double max_benign = 0.0;
    for (std::size_t r = 0; r < matrix.rows; ++r)
        if (!malware[r]) max_benign = std::max(max_benign, oof[r]);

    TrainedForest forest = train_forest(matrix, config);
    forest.cutoff = max_benign + cutoff_step(config.trees);
    forest.calibrated = true;
    if (report) *report = CalibrationReport{fold_of, oof, max_benign, forest.cutoff};
    return forest;
}

std::vector<double> default_fp_budgets() {
    std::vector<double> b{0.0, 0.002, 0.01, 0.05};
    for (int i = 2; i <= 20; ++i) b.push_back(0.05 * i);
    return b;
}

std::vector<RocPoint> roc_points(std::span<const double> scores, const std::vector<bool>& malware,
                                 std::span<const double> budgets) {
    if (scores.size() != malware.size()) throw Error("scores and labels differ in length");
    double positives = 0;
    for (bool m : malware) positives += m ? 1.0 : 0.0;
    const auto negatives = static_cast<double>(malware.size()) - positives;

    // Operating points from strictest (predict nothing) to most permissive.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    struct Op {
        double threshold, fp, tp;
    };
    std::vector<Op> ops{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    double fp = 0, tp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (malware[order[i]] ? tp : fp) += 1.0;
        if (i + 1 < order.size() && scores[order[i + 1]] == scores[order[i]]) continue;
        ops.push_back({scores[order[i]], negatives > 0 ? fp / negatives : 0.0, positives > 0 ? tp / positives : 0.0});
    }

    std::vector<RocPoint> out;
    for (double b : budgets) {
        RocPoint best{b, ops[0].threshold, ops[0].fp, ops[0].tp};
        for (const auto& op : ops)
            if (op.fp <= b + 1e-12 && op.tp > best.tp_rate) best = {b, op.threshold, op.fp, op.tp};
        out.push_back(best);
    }
    return out;
}

std::vector<RocPoint> roc_points(std::span<const double> scores, const std::vector<bool>& malware) {
    const auto b = default_fp_budgets();
    return roc_points(scores, malware, b);
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

using json = nlohmann::ordered_json;

json node_to_json(const Tree& t, std::size_t i) {
    const auto& n = t.nodes[i];
    json j;
    if (n.leaf()) {
        j["malware_fraction"] = n.malware_fraction;
        j["count"] = n.count;
        return j;
    }
    j["dim"] = n.dim;
    j["threshold"] = n.threshold;
    j["malware_fraction"] = n.malware_fraction;
    j["count"] = n.count;
    j["left"] = node_to_json(t, static_cast<std::size_t>(n.left));
    j["right"] = node_to_json(t, static_cast<std::size_t>(n.right));
    return j;
}

// Rebuilds in the builder's numbering: node, then left and right appended as a pair.
void node_from_json(const nlohmann::json& j, Tree& t, std::size_t i) {
    t.nodes[i].malware_fraction = j.at("malware_fraction").get<double>();
    t.nodes[i].count = j.at("count").get<std::uint32_t>();
    if (!j.contains("dim")) return;
    t.nodes[i].dim = j.at("dim").get<int>();
    t.nodes[i].threshold = j.at("threshold").get<double>();
    const auto li = t.nodes.size();
    t.nodes.emplace_back();
    t.nodes.emplace_back();
    t.nodes[i].left = static_cast<std::int32_t>(li);
    t.nodes[i].right = static_cast<std::int32_t>(li + 1);
    node_from_json(j.at("left"), t, li);
    node_from_json(j.at("right"), t, li + 1);
}

}  // namespace

std::string forest_to_json(const TrainedForest& f, const std::string& provenance) {
    json j;
    j["format"] = "itect-forest";
    j["version"] = 1;
    j["provenance"] = json::parse(provenance);
    j["config"] = {{"trees", f.config.trees},
                   {"class_weight_fp", f.config.class_weight_fp},
                   {"max_depth", f.config.max_depth},
                   {"min_leaf", f.config.min_leaf},
                   {"features_per_split", f.config.features_per_split},
                   {"seed", f.config.seed}};
    j["cutoff"] = f.cutoff;
    j["calibrated"] = f.calibrated;
    j["feature_cols"] = f.feature_cols;
    j["trees"] = json::array();
    for (const auto& t : f.trees) j["trees"].push_back(node_to_json(t, 0));
    return j.dump();
}

TrainedForest forest_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format") != "itect-forest") throw Error("not an itect forest file");
        if (j.at("version").get<int>() != 1) throw Error("unsupported forest version");
        TrainedForest f;
        const auto& c = j.at("config");
        f.config.trees = c.at("trees").get<std::size_t>();
        f.config.class_weight_fp = c.at("class_weight_fp").get<double>();
        f.config.max_depth = c.at("max_depth").get<std::size_t>();
        f.config.min_leaf = c.at("min_leaf").get<std::size_t>();
        f.config.features_per_split = c.at("features_per_split").get<std::size_t>();
        f.config.seed = c.at("seed").get<std::uint64_t>();
        f.cutoff = j.at("cutoff").get<double>();
        f.calibrated = j.at("calibrated").get<bool>();
        f.feature_cols = j.at("feature_cols").get<std::vector<std::size_t>>();
        for (const auto& tj : j.at("trees")) {
            Tree t;
            t.nodes.emplace_back();
            node_from_json(tj, t, 0);
            f.trees.push_back(std::move(t));
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad forest file: ") + e.what());
    }
}

void save_forest(const std::filesystem::path& p, const TrainedForest& f, const std::string& provenance) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error("cannot write forest " + p.string());
    out << forest_to_json(f, provenance) << '\n';
}

TrainedForest load_forest(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open forest " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return forest_from_json(ss.str());
}

}  // namespace itect::forest
