#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itect/corpus.hpp"

namespace itect::ents {

struct EntsParams {
    std::size_t chunk_size = 256;
    unsigned alpha = 9;   // profile length N = 2^alpha
    double tau = 0.5;     // detail-coefficient threshold

    [[nodiscard]] std::size_t length() const { return std::size_t{1} << alpha; }
    void validate() const;
    bool operator==(const EntsParams&) const = default;
};

struct EntropyProfile {
    std::vector<double> values;
    std::string source_digest;
    EntsParams params;
};

/// Haar coefficients in the (scale | detail_alpha .. detail_1) layout.
struct HaarCoefficients {
    std::vector<double> coeffs;
    unsigned levels = 0;
};

/**
 * Rows are files, columns are retained profile dimensions. Stored row-major.
 * col_index holds the original dimension id of each retained column.
 */
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::vector<std::size_t> col_index;
    std::vector<std::string> row_ids;                  // file digests
    std::vector<corpus::Label> labels;                 // empty when unlabelled

    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    [[nodiscard]] bool labelled() const { return labels.size() == rows && rows > 0; }

    void append_row(std::span<const double> values, std::string id, std::optional<corpus::Label> label);
};

/// Shannon entropy (bits) of the byte distribution of one block.
double shannon_entropy(std::span<const std::uint8_t> block);

/// One entropy per chunk of c bytes; a short final chunk uses its own length.
std::vector<double> chunk_entropies(std::span<const std::uint8_t> data, std::size_t c);

/// Lower median of the given sizes.
std::uint64_t lower_median(std::vector<std::uint64_t> sizes);

/// Smallest alpha >= 1 with c * 2^alpha >= min(median_M, median_B).
unsigned compute_alpha(std::span<const std::uint64_t> malware_sizes,
                       std::span<const std::uint64_t> benign_sizes, std::size_t c);
unsigned compute_alpha(const corpus::CorpusManifest& manifest, std::size_t c);

/// Index k = floor(k * (num_chunks - 1) / (N - 1)) for k in [0, N).
std::vector<std::size_t> select_chunk_indices(std::size_t num_chunks, std::size_t n);

HaarCoefficients haar_forward(std::span<const double> series);
std::vector<double> haar_inverse(const HaarCoefficients& coeffs);

/// Zeroes detail coefficients with |d| < tau; the top-level scale coefficient is kept.
HaarCoefficients denoise(HaarCoefficients coeffs, double tau);

/// Denoised profile of an already selected N-vector of chunk entropies.
std::vector<double> smooth_series(std::span<const double> entropies, double tau);

EntropyProfile entropy_profile(std::span<const std::uint8_t> data, const EntsParams& params,
                               std::string digest = {});

/**
 * Greedy scan in ascending column order: a column survives only if its
 * |Pearson r| with every earlier survivor is <= cutoff. Zero-variance columns
 * are dropped unless nothing has been kept yet.
 */
FeatureMatrix prune_correlated(const FeatureMatrix& matrix, double cutoff = 0.8);

/// Keeps the columns whose original ids appear in cols (in that order).
FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> cols);

/// Projects a full profile onto the given original dimension ids.
std::vector<double> project(std::span<const double> profile, std::span<const std::size_t> cols);

double pearson(std::span<const double> a, std::span<const double> b);

// CSV: optional '#' comment lines, then header digest,label,x<id>...
void write_feature_csv(std::ostream& out, const FeatureMatrix& m, const std::string& comment = {});
FeatureMatrix read_feature_csv(std::istream& in);

std::string params_to_json(const EntsParams& p);
EntsParams params_from_json(const std::string& text);
std::string profile_to_json(const EntropyProfile& p);

}  // namespace itect::ents
