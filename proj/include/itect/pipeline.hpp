#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itect/baselines.hpp"
#include "itect/corpus.hpp"
#include "itect/diagnostics.hpp"
#include "itect/ents.hpp"
#include "itect/forest.hpp"
#include "itect/itect.hpp"
#include "itect/slamm.hpp"

namespace itect::pipeline {

struct PipelineConfig {
    std::size_t chunk_size = 256;
    std::optional<unsigned> alpha;  // unset = derived from the training zoos' median lengths
    double tau = 0.5;
    double corr_cutoff = 0.8;
    forest::ForestConfig forest;
    std::size_t folds = 10;
    unsigned ngram = 3;
    slamm::SmoothingParams smoothing;
};

/// EnTS profiles for manifest rows, in row order. Unreadable or empty files are skipped with a diagnostic.
ents::FeatureMatrix ents_features(std::span<const corpus::ManifestEntry> rows, const ents::EntsParams& params,
                                  Diagnostics* diag = nullptr);

struct TrainedModels {
    EntsDetector ents;
    SlammDetector slamm;
    forest::CalibrationReport calibration;
    std::vector<corpus::Label> calibration_labels;
    std::size_t profile_dims = 0;
};

/// Malware zoos are formed per category present in the training split.
SlammDetector train_slamm(std::span<const corpus::ManifestEntry> train_rows, unsigned n,
                          const slamm::SmoothingParams& smoothing, Diagnostics* diag = nullptr);

/// Trains EnTS (profiles, pruning, forest, zero-FP calibration) and SLaMM on the train split.
TrainedModels train(const corpus::CorpusManifest& manifest, const PipelineConfig& cfg, Diagnostics* diag = nullptr);

/// Labelled predictions of the combined detector, for evaluation and sweeps.
std::vector<LabelledPrediction> to_predictions(std::span<const Verdict> verdicts,
                                               const corpus::CorpusManifest& manifest);

struct ScalingPoint {
    std::size_t files = 0;
    double seconds = 0.0;
};

/// Best-of-repeats wall time of classifying the first n files of `files`, for each n.
std::vector<ScalingPoint> time_classification(std::span<const baselines::NamedBytes> files,
                                              std::span<const std::size_t> sizes, const EntsDetector& ents,
                                              const SlammDetector& slamm, int repeats = 3);

/// Wall time of NCD similarity rows with a third of the first n files as test rows and the rest as columns.
std::vector<ScalingPoint> time_ncd(std::span<const baselines::NamedBytes> files, std::span<const std::size_t> sizes,
                                   const baselines::CompressorSpec& spec);

}  // namespace itect::pipeline
