#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "itect/corpus.hpp"
#include "itect/diagnostics.hpp"

namespace itect::slamm {

/// A k-gram packed big-endian into the low 8k bits (first byte most significant),
/// so numeric order equals lexicographic order among grams of one length.
using GramKey = std::uint64_t;

inline constexpr unsigned kMaxOrder = 5;
/// Orders up to this value use a dense 256^k table.
inline constexpr unsigned kMaxDenseOrder = 3;

GramKey pack_gram(std::span<const std::uint8_t> gram);
std::vector<std::uint8_t> unpack_gram(GramKey key, unsigned k);

struct SmoothingParams {
    double discount = 0.5;  // absolute discount d in (0, 1)
    double floor = 1e-10;   // probability of an event unseen at every order
    void validate() const;
    bool operator==(const SmoothingParams&) const = default;
};

/**
 * Zero-initialised counter array backed by calloc, so untouched pages are never
 * faulted in. Tracks which page-sized blocks hold nonzero entries so scans
 * skip the empty ones.
 */
class DenseCounts {
public:
    static constexpr std::size_t kBlock = 512;  // one 4 KiB page of counters

    DenseCounts() = default;
    explicit DenseCounts(std::size_t size);
    DenseCounts(const DenseCounts& other);
    DenseCounts& operator=(const DenseCounts& other);
    DenseCounts(DenseCounts&&) noexcept = default;
    DenseCounts& operator=(DenseCounts&&) noexcept = default;

    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] bool empty() const { return size_ == 0; }
    [[nodiscard]] std::uint64_t operator[](std::size_t i) const { return data_[i]; }
    void add(std::size_t i, std::uint64_t c) {
        data_[i] += c;
        used_[i / kBlock] = 1;
    }

    /// fn(index, count) over nonzero entries in ascending index order.
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (std::size_t b = 0; b < used_.size(); ++b) {
            if (!used_[b]) continue;
            const std::size_t hi = std::min(size_, (b + 1) * kBlock);
            for (std::size_t i = b * kBlock; i < hi; ++i)
                if (data_[i] != 0) fn(i, data_[i]);
        }
    }

private:
    struct Free {
        void operator()(std::uint64_t* p) const;
    };
    std::size_t size_ = 0;
    std::unique_ptr<std::uint64_t[], Free> data_;
    std::vector<std::uint8_t> used_;
};

/// Counts for grams of one fixed order: dense for small orders, hashed otherwise.
class GramTable {
public:
    explicit GramTable(unsigned order = 1, bool allow_dense = true);

    [[nodiscard]] unsigned order() const { return order_; }
    [[nodiscard]] bool dense() const { return !dense_.empty(); }
    [[nodiscard]] std::uint64_t get(GramKey key) const;
    void add(GramKey key, std::uint64_t count = 1);
    void merge(const GramTable& other);
    [[nodiscard]] std::uint64_t total() const { return total_; }
    [[nodiscard]] std::size_t support() const;

    /// fn(key, count) over nonzero entries in ascending key order.
    template <typename Fn>
    void for_each(Fn&& fn) const {
        if (dense()) {
            dense_.for_each([&](std::size_t k, std::uint64_t c) { fn(static_cast<GramKey>(k), c); });
            return;
        }
        for (auto key : sorted_keys()) fn(key, sparse_.at(key));
    }
    [[nodiscard]] std::vector<GramKey> sorted_keys() const;

private:
    unsigned order_;
    DenseCounts dense_;
    std::unordered_map<GramKey, std::uint64_t> sparse_;
    std::uint64_t total_ = 0;
};

/// Overlapping n-grams, stride 1. Throws when data is shorter than n.
std::vector<GramKey> extract_ngrams(std::span<const std::uint8_t> data, unsigned n);

class NgramModel;

/// Accumulates k-gram counts (k = 1..n) over many byte sequences.
class NgramCounter {
public:
    explicit NgramCounter(unsigned n);
    void add(std::span<const std::uint8_t> data);
    void merge(const NgramCounter& other);
    [[nodiscard]] unsigned order() const { return n_; }
    NgramModel finish(std::string zoo_id, SmoothingParams smoothing) &&;

private:
    unsigned n_;
    std::vector<GramTable> tables_;  // tables_[k-1] holds k-grams
};

/**
 * Byte n-gram language model with absolute-discount back-off:
 *
 *   p(w|h) = (c(hw) - d) / c(h.)                      if c(hw) > 0
 *          = d * types(h.) / c(h.) * p(w|h')          if c(h.) > 0, c(hw) = 0
 *          = p(w|h')                                  if c(h.) = 0
 *
 * where c(h.) sums the counts of all extensions of h and h' drops the oldest
 * byte of h. At the unigram level unseen bytes get the floor probability; every
 * returned probability is at least the floor.
 */
class NgramModel {
public:
    NgramModel() = default;
    NgramModel(unsigned n, std::vector<GramTable> tables, std::string zoo_id, SmoothingParams smoothing);

    [[nodiscard]] unsigned order() const { return n_; }
    [[nodiscard]] const std::string& zoo_id() const { return zoo_id_; }
    [[nodiscard]] const SmoothingParams& smoothing() const { return smoothing_; }
    [[nodiscard]] std::uint64_t total_tokens() const;

    [[nodiscard]] const GramTable& table(unsigned k) const { return (*tables_)[k - 1]; }
    [[nodiscard]] std::shared_ptr<const GramTable> shared_table(unsigned k) const;
    [[nodiscard]] std::uint64_t count(std::span<const std::uint8_t> gram) const;

    /// p(next | context); only the last n-1 bytes of context matter.
    [[nodiscard]] double conditional(std::span<const std::uint8_t> context, std::uint8_t next) const;
    /// Probability of the k-gram key's last byte given its first k-1 bytes.
    [[nodiscard]] double conditional_key(unsigned k, GramKey key) const;

    /// Sum of log2 p(w_i | history) over every byte; the first n-1 bytes use shorter histories.
    [[nodiscard]] double sequence_logprob(std::span<const std::uint8_t> data) const;
    /// -sequence_logprob / len, in bits per byte.
    [[nodiscard]] double cross_entropy(std::span<const std::uint8_t> data) const;

    /// fn(k, key, count) over every stored gram in lexicographic byte order.
    template <typename Fn>
    void for_each_record(Fn&& fn) const;

private:
    void build_context_stats();

    unsigned n_ = 0;
    std::shared_ptr<const std::vector<GramTable>> tables_;
    // ctx_total_[k-1][h] = sum_w c(hw), ctx_types_[k-1][h] = #{w : c(hw) > 0}; h has k-1 bytes.
    std::vector<GramTable> ctx_total_;
    std::vector<GramTable> ctx_types_;
    std::string zoo_id_;
    SmoothingParams smoothing_;
};

/**
 * Unsmoothed relative frequencies of n-grams. Built either from one byte
 * sequence (sparse, sorted) or by sharing a zoo model's order-n table.
 */
class NgramHistogram {
public:
    NgramHistogram() = default;

    static NgramHistogram from_bytes(std::span<const std::uint8_t> data, unsigned n);
    static NgramHistogram from_model(const NgramModel& model);
    static NgramHistogram from_counts(unsigned n, std::vector<std::pair<GramKey, std::uint64_t>> counts);

    [[nodiscard]] unsigned order() const { return n_; }
    [[nodiscard]] std::size_t support_size() const { return support_; }
    [[nodiscard]] std::uint64_t total() const { return total_; }
    [[nodiscard]] double mass(GramKey key) const;
    /// Sum of squared masses over the support.
    [[nodiscard]] double sum_squares() const { return sum_sq_; }
    [[nodiscard]] bool enumerable() const { return table_ == nullptr; }

    /// fn(key, mass) over the support in ascending key order.
    template <typename Fn>
    void for_each(Fn&& fn) const {
        // Same arithmetic as mass(), so both paths agree bit for bit.
        const auto t = static_cast<double>(total_);
        if (table_) {
            table_->for_each([&](GramKey k, std::uint64_t c) { fn(k, static_cast<double>(c) / t); });
            return;
        }
        for (const auto& [k, c] : entries_) fn(k, static_cast<double>(c) / t);
    }

private:
    void finalize();

    unsigned n_ = 0;
    std::uint64_t total_ = 0;
    std::size_t support_ = 0;
    double sum_sq_ = 0.0;
    std::vector<std::pair<GramKey, std::uint64_t>> entries_;
    std::shared_ptr<const GramTable> table_;
};

NgramHistogram histogram(std::span<const std::uint8_t> data, unsigned n);

/// sum over support(p) of p lg(p / q), with q(x) = 0 replaced by eps (no renormalisation).
double kld(const NgramHistogram& p, const NgramHistogram& q, double eps = 1e-10);

/// (1/m) sum over support(model) of (p - q)^2, m = |support(model)|, p = 0 off support(p).
double mse(const NgramHistogram& model, const NgramHistogram& p);

/// A trained zoo: its smoothed model plus the raw histogram of its n-grams.
struct ZooModel {
    std::shared_ptr<const NgramModel> model;
    NgramHistogram hist;

    static ZooModel from(NgramModel m);
    [[nodiscard]] const std::string& id() const { return model->zoo_id(); }
};

bool classify_cx(std::span<const std::uint8_t> suspect, const NgramModel& malware, const NgramModel& benign);
bool classify_cd(const NgramHistogram& suspect, const NgramHistogram& malware, const NgramHistogram& benign,
                 double eps = 1e-10);
bool classify_cmse(const NgramHistogram& suspect, const NgramHistogram& malware, const NgramHistogram& benign);

struct ZooScores {
    std::string zoo_id;
    double cross_entropy = 0.0;
    double kld = 0.0;
    double mse = 0.0;
};

struct SlammVerdict {
    bool cx = false;
    bool cd = false;
    bool cmse = false;
    bool overall = false;
    bool abstained = false;  // suspect shorter than the model order
    ZooScores benign;
    std::vector<ZooScores> malware;
};

/**
 * For each measure, the flag is the OR over malware zoos of the strict
 * comparison against the benign zoo; the verdict is the AND of the three flags.
 */
SlammVerdict slamm_classify(std::span<const std::uint8_t> suspect, std::span<const ZooModel> malware,
                            const ZooModel& benign);

/// The OR-then-AND rule applied to precomputed per-zoo scores.
SlammVerdict combine_scores(ZooScores benign, std::vector<ZooScores> malware);

/**
 * Trains one zoo model from manifest rows. Files shorter than n are skipped
 * with a diagnostic; counting runs per file in parallel and merges in row order.
 */
NgramModel train_model(std::span<const corpus::ManifestEntry> rows, unsigned n, const SmoothingParams& smoothing,
                       std::string zoo_id, Diagnostics* diag = nullptr);

// Binary container: "SLMM", version, n, zoo id, smoothing, provenance JSON,
// then (k, k bytes, count) records in lexicographic byte order.
void save_model(const std::filesystem::path& p, const NgramModel& m, const std::string& provenance = "{}");
NgramModel load_model(const std::filesystem::path& p, std::string* provenance = nullptr);

template <typename Fn>
void NgramModel::for_each_record(Fn&& fn) const {
    // Depth-first over prefixes: a gram is followed by its extensions.
    std::vector<std::vector<GramKey>> sparse_keys(n_ + 1);
    for (unsigned k = 1; k <= n_; ++k)
        if (!table(k).dense()) sparse_keys[k] = table(k).sorted_keys();
    std::vector<std::size_t> cursor(n_ + 1, 0);

    auto visit = [&](auto&& self, unsigned k, GramKey prefix) -> void {
        const GramTable& t = table(k);
        auto emit = [&](GramKey key, std::uint64_t c) {
            fn(k, key, c);
            if (k < n_) self(self, k + 1, key);
        };
        if (t.dense()) {
            const GramKey base = prefix << 8;
            for (GramKey b = 0; b < 256; ++b)
                if (const auto c = t.get(base | b)) emit(base | b, c);
        } else {
            auto& keys = sparse_keys[k];
            auto& i = cursor[k];
            while (i < keys.size() && (keys[i] >> 8) < prefix) ++i;
            while (i < keys.size() && (keys[i] >> 8) == prefix) {
                const GramKey key = keys[i++];
                emit(key, t.get(key));
            }
        }
    };
    if (n_ > 0) visit(visit, 1, 0);
}

}  // namespace itect::slamm
