#include "itect/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <unordered_map>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::pipeline {

using Clock = std::chrono::steady_clock;

ents::FeatureMatrix ents_features(std::span<const corpus::ManifestEntry> rows, const ents::EntsParams& params,
                                  Diagnostics* diag) {
    params.validate();
    std::vector<std::optional<ents::EntropyProfile>> slots(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
        try {
            const auto bytes = corpus::read_file(rows[i].path);
            slots[i] = ents::entropy_profile(bytes, params, rows[i].digest);
        } catch (const std::exception& e) {
            if (diag) diag->report(Severity::warning, "profile-skipped", e.what(), rows[i].path);
        }
    });
    ents::FeatureMatrix m;
    m.cols = params.length();
    m.col_index.resize(m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) m.col_index[c] = c;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (slots[i]) m.append_row(slots[i]->values, rows[i].digest, rows[i].label);
    return m;
}

SlammDetector train_slamm(std::span<const corpus::ManifestEntry> train_rows, unsigned n,
                          const slamm::SmoothingParams& smoothing, Diagnostics* diag) {
    std::vector<corpus::ManifestEntry> benign;
    std::vector<std::pair<corpus::Category, std::vector<corpus::ManifestEntry>>> zoos;
    for (const auto& e : train_rows) {
        if (e.label == corpus::Label::benign) {
            benign.push_back(e);
            continue;
        }
        auto it = std::find_if(zoos.begin(), zoos.end(), [&](const auto& z) { return z.first == e.category; });
        if (it == zoos.end()) {
            zoos.push_back({e.category, {}});
            it = zoos.end() - 1;
        }
        it->second.push_back(e);
    }
    if (benign.empty() || zoos.empty()) throw Error("SLaMM training needs benign and malware rows");
    std::sort(zoos.begin(), zoos.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    SlammDetector d;
    d.benign = slamm::ZooModel::from(slamm::train_model(benign, n, smoothing, "benign", diag));
    for (const auto& [cat, rows] : zoos)
        d.malware.push_back(
            slamm::ZooModel::from(slamm::train_model(rows, n, smoothing, std::string(corpus::to_string(cat)), diag)));
    return d;
}

TrainedModels train(const corpus::CorpusManifest& manifest, const PipelineConfig& cfg, Diagnostics* diag) {
    if (manifest.needs_split) throw Error("manifest must be split before training");
    const auto rows = manifest.select(corpus::Split::train);

    ents::EntsParams params{cfg.chunk_size, 1, cfg.tau};
    if (cfg.alpha) {
        params.alpha = *cfg.alpha;
    } else {
        corpus::CorpusManifest train_only;
        train_only.entries = rows;
        params.alpha = ents::compute_alpha(train_only, cfg.chunk_size);
    }

    TrainedModels out;
    out.profile_dims = params.length();
    const auto full = ents_features(rows, params, diag);
    const auto pruned = ents::prune_correlated(full, cfg.corr_cutoff);
    out.ents.params = params;
    out.ents.forest = forest::calibrate_zero_fp(pruned, cfg.forest, cfg.folds, &out.calibration);
    out.calibration_labels = pruned.labels;
    out.slamm = train_slamm(rows, cfg.ngram, cfg.smoothing, diag);
    return out;
}

std::vector<LabelledPrediction> to_predictions(std::span<const Verdict> verdicts,
                                               const corpus::CorpusManifest& manifest) {
    std::unordered_map<std::string, const corpus::ManifestEntry*> by_digest;
    for (const auto& e : manifest.entries) by_digest.emplace(e.digest, &e);
    std::vector<LabelledPrediction> out;
    for (const auto& v : verdicts) {
        auto it = by_digest.find(v.digest);
        if (it == by_digest.end()) throw Error("verdict for " + v.digest + " has no manifest entry");
        out.push_back({v.itect_verdict, it->second->label, it->second->category, v.ents_score});
    }
    return out;
}

std::vector<ScalingPoint> time_classification(std::span<const baselines::NamedBytes> files,
                                              std::span<const std::size_t> sizes, const EntsDetector& ents,
                                              const SlammDetector& slamm, int repeats) {
    std::vector<ScalingPoint> out;
    for (auto n : sizes) {
        if (n > files.size()) throw Error("not enough files for a scaling point of " + std::to_string(n));
        double best = 1e300;
        for (int r = 0; r < std::max(1, repeats); ++r) {
            std::vector<char> flags(n);
            const auto t0 = Clock::now();
            parallel_for(n, [&](std::size_t i) {
                flags[i] = itect_classify(files[i].bytes, ents, slamm).itect_verdict ? 1 : 0;
            });
            best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
        }
        out.push_back({n, best});
    }
    return out;
}

std::vector<ScalingPoint> time_ncd(std::span<const baselines::NamedBytes> files, std::span<const std::size_t> sizes,
                                   const baselines::CompressorSpec& spec) {
    std::vector<ScalingPoint> out;
    for (auto n : sizes) {
        if (n > files.size()) throw Error("not enough files for a scaling point of " + std::to_string(n));
        const std::size_t n_test = std::max<std::size_t>(1, n / 3);
        const auto t0 = Clock::now();
        const auto m = baselines::similarity_rows(files.subspan(0, n_test), files.subspan(n_test, n - n_test), spec);
        out.push_back({n, std::chrono::duration<double>(Clock::now() - t0).count()});
        if (m.rows != n_test) throw Error("similarity rows shape mismatch");
    }
    return out;
}

}  // namespace itect::pipeline
