#include "itect/synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <string>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::synth {
namespace {

using Bytes = std::vector<std::uint8_t>;

/// First-order byte chain over a fixed alphabet with skewed successor choice.
class ByteChain {
public:
    ByteChain(std::uint64_t language_seed, std::size_t alphabet_size) {
        std::mt19937_64 g(language_seed);
        std::array<std::uint8_t, 256> all{};
        for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
        std::shuffle(all.begin(), all.end(), g);
        alphabet_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(alphabet_size));
        successors_.resize(alphabet_size);
        std::uniform_int_distribution<std::size_t> pick(0, alphabet_size - 1);
        for (auto& s : successors_)
            for (auto& v : s) v = pick(g);
    }

    void emit(std::size_t n, std::mt19937_64& rng, Bytes& out) const {
        // Successor k is taken with probability ~ 2^-(k+1); the tail goes to a uniform pick.
        std::size_t state = rng() % alphabet_.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = rng();
            const int k = std::countr_zero(r | (std::uint64_t{1} << kSucc));
            state = k < kSucc ? successors_[state][static_cast<std::size_t>(k)] : (r >> 32) % alphabet_.size();
            out.push_back(alphabet_[state]);
        }
    }

private:
    static constexpr int kSucc = 6;
    std::vector<std::uint8_t> alphabet_;
    std::vector<std::array<std::size_t, kSucc>> successors_;
};

const ByteChain& benign_code() {
    static const ByteChain chain(0xB0B0'0001ULL, 72);
    return chain;
}

const ByteChain& malware_code() {
    static const ByteChain chain(0x3A1E'0002ULL, 40);
    return chain;
}

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = [] {
        std::mt19937_64 g(0x7E47'0003ULL);
        std::vector<std::string> w;
        for (int i = 0; i < 400; ++i) {
            std::string s;
            const auto len = 2 + g() % 8;
            for (std::size_t k = 0; k < len; ++k) s.push_back(static_cast<char>('a' + g() % 26));
            w.push_back(std::move(s));
        }
        return w;
    }();
    return words;
}

void emit_random(std::size_t n, std::mt19937_64& rng, Bytes& out) {
    while (n > 0) {
        auto r = rng();
        for (int k = 0; k < 8 && n > 0; ++k, --n) {
            out.push_back(static_cast<std::uint8_t>(r));
            r >>= 8;
        }
    }
}

void emit_text(std::size_t n, std::mt19937_64& rng, Bytes& out) {
    const auto& words = vocabulary();
    const std::size_t end = out.size() + n;
    // Zipf-like word choice: low indices dominate.
    while (out.size() < end) {
        const auto r = rng();
        const std::size_t idx = std::min<std::size_t>(words.size() - 1, (r % 64) * ((r >> 8) % 7) + (r >> 16) % 5);
        for (char c : words[idx]) out.push_back(static_cast<std::uint8_t>(c));
        const auto sep = (r >> 40) % 16;
        out.push_back(sep == 0 ? '\n' : sep == 1 ? '.' : ' ');
    }
    out.resize(end);
}

void emit_table(std::size_t n, std::mt19937_64& rng, Bytes& out) {
    const std::size_t end = out.size() + n;
    if (rng() % 3 == 0) {
        out.resize(end, 0);
        return;
    }
    std::uint32_t v = static_cast<std::uint32_t>(rng() % 4096);
    const std::uint32_t stride = 1 + static_cast<std::uint32_t>(rng() % 16);
    while (out.size() < end) {
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
        v += stride;
    }
    out.resize(end);
}

/// Malware code padded with junk: NOP runs and push/pop pairs.
void emit_junk_code(std::size_t n, std::mt19937_64& rng, Bytes& out) {
    const std::size_t end = out.size() + n;
    while (out.size() < end) {
        const auto r = rng();
        switch (r % 4) {
            case 0: out.insert(out.end(), 1 + (r >> 8) % 6, 0x90); break;
            case 1: {
                const auto reg = static_cast<std::uint8_t>((r >> 8) % 8);
                out.push_back(0x50 + reg);
                out.push_back(0x58 + reg);
                break;
            }
            default: malware_code().emit(4 + (r >> 8) % 24, rng, out); break;
        }
    }
    out.resize(end);
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return hi <= lo ? lo : lo + rng() % (hi - lo + 1);
}

Bytes benign_like(std::size_t size, std::mt19937_64& rng) {
    Bytes out;
    out.reserve(size);
    while (out.size() < size) {
        const std::size_t len = std::min(size - out.size(), uniform(rng, 1024, 8192));
        const auto kind = rng() % 20;
        if (kind < 11)
            benign_code().emit(len, rng, out);
        else if (kind < 17)
            emit_text(len, rng, out);
        else
            emit_table(len, rng, out);
    }
    return out;
}

Bytes polymorphic_like(std::size_t size, std::mt19937_64& rng) {
    Bytes out;
    out.reserve(size);
    const std::size_t stub = std::max<std::size_t>(256, size * uniform(rng, 4, 12) / 100);
    const std::size_t tail = std::max<std::size_t>(256, size / 100);
    emit_junk_code(std::min(stub, size), rng, out);
    if (out.size() + tail < size) emit_random(size - out.size() - tail, rng, out);
    emit_junk_code(size - out.size(), rng, out);
    return out;
}

Bytes metamorphic_like(std::size_t size, std::mt19937_64& rng) {
    Bytes out;
    out.reserve(size);
    while (out.size() < size) {
        emit_junk_code(std::min(size - out.size(), uniform(rng, 8192, 24576)), rng, out);
        if (out.size() < size) emit_random(std::min(size - out.size(), uniform(rng, 256, 1024)), rng, out);
    }
    return out;
}

Bytes packed_like(std::size_t size, std::mt19937_64& rng) {
    Bytes out;
    out.reserve(size);
    const std::size_t header = std::min(size, uniform(rng, 512, 2048));
    out.push_back('M');
    out.push_back('Z');
    static constexpr char kSections[] = "UPX0\0\0\0\0UPX1\0\0\0\0.rsrc\0\0\0";
    while (out.size() < header) {
        const auto r = rng();
        if (r % 8 == 0)
            out.insert(out.end(), std::begin(kSections), std::end(kSections));
        else
            out.insert(out.end(), 4 + (r >> 8) % 28, static_cast<std::uint8_t>((r >> 16) % 4 == 0 ? r >> 24 : 0));
    }
    out.resize(header);
    // Near-uniform body: random bytes with a light sprinkling of zeros.
    while (out.size() < size) {
        const auto r = rng();
        out.push_back((r & 0x3F) == 0 ? 0 : static_cast<std::uint8_t>(r >> 8));
    }
    return out;
}

}  // namespace

std::string_view to_string(Profile p) {
    switch (p) {
        case Profile::benign_like: return "benign_like";
        case Profile::polymorphic_like: return "polymorphic_like";
        case Profile::metamorphic_like: return "metamorphic_like";
        case Profile::packed_like: return "packed_like";
    }
    return "benign_like";
}

Profile parse_profile(std::string_view s) {
    for (auto p : {Profile::benign_like, Profile::polymorphic_like, Profile::metamorphic_like, Profile::packed_like})
        if (to_string(p) == s) return p;
    throw Error("unknown synthetic profile '" + std::string(s) + "'", ErrorKind::usage);
}

corpus::Label label_of(Profile p) {
    return p == Profile::benign_like ? corpus::Label::benign : corpus::Label::malware;
}

corpus::Category category_of(Profile p) {
    switch (p) {
        case Profile::benign_like: return corpus::Category::benign;
        case Profile::polymorphic_like: return corpus::Category::polymorphic;
        case Profile::metamorphic_like: return corpus::Category::metamorphic;
        case Profile::packed_like: return corpus::Category::packed;
    }
    return corpus::Category::unknown;
}

std::vector<std::uint8_t> synth_file(Profile p, std::size_t size, std::mt19937_64& rng) {
    if (size == 0) return {};
    switch (p) {
        case Profile::benign_like: return benign_like(size, rng);
        case Profile::polymorphic_like: return polymorphic_like(size, rng);
        case Profile::metamorphic_like: return metamorphic_like(size, rng);
        case Profile::packed_like: return packed_like(size, rng);
    }
    return {};
}

corpus::CorpusManifest synth_corpus(Profile p, const SynthOptions& opts, const std::filesystem::path& dir) {
    if (opts.min_size == 0 || opts.min_size > opts.max_size)
        throw Error("synthetic size range must satisfy 0 < min <= max", ErrorKind::usage);
    std::filesystem::create_directories(dir);

    corpus::CorpusManifest m;
    m.needs_split = true;
    m.entries.resize(opts.count);
    parallel_for(opts.count, [&](std::size_t i) {
        // Per-file stream so output does not depend on generation order.
        std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                          static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        const auto size = uniform(rng, opts.min_size, opts.max_size);
        const auto bytes = synth_file(p, size, rng);
        char name[64];
        std::snprintf(name, sizeof name, "%s_%05zu.bin", std::string(to_string(p)).c_str(), i);
        const auto path = dir / name;
        corpus::write_file(path, bytes);
        m.entries[i] = {path.generic_string(), label_of(p), category_of(p), corpus::Split::train, bytes.size(),
                        corpus::sha256_hex(bytes)};
    });
    return m;
}

}  // namespace itect::synth
