#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "itect/ents.hpp"

namespace itect::baselines {

struct CompressorSpec {
    std::string algorithm_id = "lzma2";  // "lzma2" or "zlib"
    int level = 9;                       // maximum preset
    /// Upper bound on the LZMA2 dictionary. The effective dictionary is the
    /// smallest power of two covering the input (capped here), which makes the
    /// whole input visible to the match finder just as a 4 GiB window would.
    std::uint64_t dict_size = 1536ull << 20;

    bool operator==(const CompressorSpec&) const = default;
};

class Compressor {
public:
    virtual ~Compressor() = default;
    [[nodiscard]] virtual std::vector<std::uint8_t> compress(std::span<const std::uint8_t> data) const = 0;
    [[nodiscard]] virtual std::vector<std::uint8_t> decompress(std::span<const std::uint8_t> data) const = 0;
    [[nodiscard]] virtual std::size_t compressed_size(std::span<const std::uint8_t> data) const {
        return compress(data).size();
    }
    [[nodiscard]] virtual std::string describe() const = 0;
};

/// Stateless compressors; instances are safe to share across threads.
std::unique_ptr<Compressor> make_compressor(const CompressorSpec& spec);

/// C(x) / len(x).
double compression_rate(std::span<const std::uint8_t> data, const Compressor& c);
double compression_rate(std::span<const std::uint8_t> data, const CompressorSpec& spec);

/// (C(PQ) - min(C(P), C(Q))) / max(C(P), C(Q)), with PQ = P followed by Q.
double ncd(std::span<const std::uint8_t> p, std::span<const std::uint8_t> q, const Compressor& c);
double ncd(std::span<const std::uint8_t> p, std::span<const std::uint8_t> q, const CompressorSpec& spec);

struct NamedBytes {
    std::string id;
    std::vector<std::uint8_t> bytes;
};

/**
 * NCD of every test file against every train file: one row per test file, one
 * column per train file. Cost is |test| * |train| compressions of
 * concatenations, so this is for baseline comparisons only.
 */
ents::FeatureMatrix similarity_rows(std::span<const NamedBytes> test, std::span<const NamedBytes> train,
                                    const CompressorSpec& spec);

}  // namespace itect::baselines
