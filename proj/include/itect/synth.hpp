#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string_view>
#include <vector>

#include "itect/corpus.hpp"

namespace itect::synth {

enum class Profile { benign_like, polymorphic_like, metamorphic_like, packed_like };

std::string_view to_string(Profile p);
Profile parse_profile(std::string_view s);
corpus::Label label_of(Profile p);
corpus::Category category_of(Profile p);

/**
 * Byte generators for desk-scale experiments. Each class draws from a fixed
 * "language" shared by all files of that class, so zoo statistics are
 * meaningful; the per-file rng only varies layout and content.
 *
 *  benign_like       code-, text- and table-like segments, smooth mid/low entropy
 *  polymorphic_like  short low-entropy stub, then a long random (encrypted) body
 *  metamorphic_like  junk-laden opcode-like patterns with short random pockets
 *  packed_like       small header, then a nearly uniform body
 */
std::vector<std::uint8_t> synth_file(Profile p, std::size_t size, std::mt19937_64& rng);

struct SynthOptions {
    std::size_t count = 100;
    std::size_t min_size = 80 * 1024;
    std::size_t max_size = 120 * 1024;
    std::uint64_t seed = 1;
};

/// Writes count files named <profile>_<index>.bin into dir and returns their manifest.
corpus::CorpusManifest synth_corpus(Profile p, const SynthOptions& opts, const std::filesystem::path& dir);

}  // namespace itect::synth
