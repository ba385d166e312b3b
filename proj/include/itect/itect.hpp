#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itect/corpus.hpp"
#include "itect/diagnostics.hpp"
#include "itect/ents.hpp"
#include "itect/forest.hpp"
#include "itect/slamm.hpp"

namespace itect {

struct EntsDetector {
    forest::TrainedForest forest;
    ents::EntsParams params;
};

struct SlammDetector {
    std::vector<slamm::ZooModel> malware;
    slamm::ZooModel benign;
};

struct StageTimings {
    double ents_ms = 0.0;
    double slamm_ms = 0.0;
};

struct Verdict {
    std::string path;
    std::string digest;
    bool ents_verdict = false;
    double ents_score = 0.0;
    bool ents_abstained = false;  // file shorter than one chunk
    slamm::SlammVerdict slamm;
    bool itect_verdict = false;   // ents_verdict || slamm.overall
    StageTimings timings;
};

/// Runs both detectors on one file; a detector that abstains votes benign.
Verdict itect_classify(std::span<const std::uint8_t> data, const EntsDetector& ents, const SlammDetector& slamm,
                       std::string digest = {});

/// Reads and classifies a file. Unreadable files yield no verdict and a diagnostic.
std::optional<Verdict> classify_file(const std::filesystem::path& p, const EntsDetector& ents,
                                     const SlammDetector& slamm, Diagnostics* diag = nullptr);

/// Parallel over files; output order follows input order, unreadable files omitted.
std::vector<Verdict> classify_files(std::span<const std::string> paths, const EntsDetector& ents,
                                    const SlammDetector& slamm, Diagnostics* diag = nullptr);

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    [[nodiscard]] std::uint64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

struct Rates {
    double accuracy = 0.0;
    double precision = 1.0;  // 1 when nothing is predicted malware
    double recall = 0.0;     // 0 when there are no malware samples
    double fp_rate = 0.0;
    double fn_rate = 0.0;
};

Rates rates_from(const ConfusionCounts& c);

struct EvalReport {
    ConfusionCounts counts;
    Rates rates;
    std::vector<forest::RocPoint> roc;  // empty unless scores were supplied
    double wall_time_ms = 0.0;
    std::map<std::string, ConfusionCounts> per_category;
    /// Slots for externally obtained engine results shown side by side.
    std::vector<std::pair<std::string, Rates>> external_engines;
};

struct LabelledPrediction {
    bool predicted_malware = false;
    corpus::Label label = corpus::Label::benign;
    corpus::Category category = corpus::Category::unknown;
    double score = 0.0;  // optional ranking score for ROC
};

EvalReport evaluate(std::span<const LabelledPrediction> samples, bool with_roc = false);
EvalReport evaluate(const std::vector<bool>& predicted, std::span<const corpus::Label> labels);

struct DetectorReports {
    EvalReport itect;
    EvalReport ents;
    EvalReport slamm;
};

/// Joins verdicts to manifest rows by digest and evaluates all three detectors.
DetectorReports evaluate_verdicts(std::span<const Verdict> verdicts, const corpus::CorpusManifest& manifest);

struct SweepPoint {
    double malware_fraction = 0.0;
    std::size_t sample_size = 0;
    EvalReport report;
};

/**
 * For each malware fraction, draws (without replacement, seeded) a test set of
 * sample_size files at that prevalence from the pool and evaluates it. A
 * sample_size of 0 picks the largest size every fraction can supply.
 */
std::vector<SweepPoint> prevalence_sweep(std::span<const LabelledPrediction> pool, std::span<const double> fractions,
                                         std::uint64_t seed, std::size_t sample_size = 0);

/// Low-entropy padding chunks needed per high-entropy chunk: (N - M) / (M - O).
double padding_cost(double high, double benign_avg, double padding);

std::string report_to_json(const EvalReport& r);
std::string reports_to_json(const DetectorReports& r, const std::string& provenance = "{}");
std::string verdict_to_json(const Verdict& v, bool with_timings = false);
Verdict verdict_from_json(const std::string& line);

}  // namespace itect
