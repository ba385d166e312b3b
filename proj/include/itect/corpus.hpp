#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itect/diagnostics.hpp"

namespace itect::corpus {

enum class Label { malware, benign };
enum class Category { polymorphic, metamorphic, packed, benign, unknown };
enum class Split { train, validation, test };

std::string_view to_string(Label l);
std::string_view to_string(Category c);
std::string_view to_string(Split s);
Label parse_label(std::string_view s);
Category parse_category(std::string_view s);
Split parse_split(std::string_view s);

struct ManifestEntry {
    std::string path;
    Label label = Label::benign;
    Category category = Category::unknown;
    Split split = Split::train;
    std::uint64_t size_bytes = 0;
    std::string digest;  // lowercase hex SHA-256 of the file contents

    bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
    static constexpr int kSchemaVersion = 1;

    std::vector<ManifestEntry> entries;
    int schema_version = kSchemaVersion;
    /// Set by scan_directory: every split is the "train" sentinel and must be
    /// reassigned by split_manifest before training reads it.
    bool needs_split = false;

    [[nodiscard]] std::vector<ManifestEntry> select(std::optional<Split> split,
                                                    std::optional<Label> label = {},
                                                    std::optional<Category> category = {}) const;
};

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> data);

/**
 * Recursively inventories every regular file under root. Entries are sorted by
 * path; unreadable files are skipped and reported through diag.
 */
CorpusManifest scan_directory(const std::filesystem::path& root, Label label, Category category,
                              Diagnostics* diag = nullptr);

struct SplitOptions {
    /// Share of the non-train remainder that goes to validation; the rest is test.
    double validation_share = 0.0;
    /// Stratify on (label, category) rather than label alone.
    bool stratify_by_category = false;
};

/**
 * Seeded stratified partition. Per stratum, round(train_fraction * n) entries
 * (clamped to [1, n-1]) become train.
 */
CorpusManifest split_manifest(const CorpusManifest& m, double train_fraction, std::uint64_t seed,
                              const SplitOptions& opts = {});

// JSON Lines, one entry per line with exactly the ManifestEntry fields.
void write_manifest(std::ostream& out, const CorpusManifest& m);
void save_manifest(const std::filesystem::path& p, const CorpusManifest& m);
CorpusManifest read_manifest(std::istream& in);
CorpusManifest load_manifest(const std::filesystem::path& p);

/**
 * Parses "offset: hex-pairs" records (the colon is optional, as in Kaggle
 * .bytes dumps). "??" decodes to 0x00. Offsets must strictly increase.
 */
std::vector<std::uint8_t> hexdump_to_bytes(std::string_view text);

/// Kaggle-style dump: 8-digit uppercase offset, 16 space-separated pairs per line.
std::string bytes_to_hexdump(std::span<const std::uint8_t> data);

}  // namespace itect::corpus
