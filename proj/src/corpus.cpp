#include "itect/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::corpus {
namespace fs = std::filesystem;

std::string_view to_string(Label l) { return l == Label::malware ? "malware" : "benign"; }

std::string_view to_string(Category c) {
    switch (c) {
        case Category::polymorphic: return "polymorphic";
        case Category::metamorphic: return "metamorphic";
        case Category::packed: return "packed";
        case Category::benign: return "benign";
        case Category::unknown: return "unknown";
    }
    return "unknown";
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

Label parse_label(std::string_view s) {
    if (s == "malware") return Label::malware;
    if (s == "benign") return Label::benign;
    throw Error("unknown label '" + std::string(s) + "' (expected malware|benign)", ErrorKind::usage);
}

Category parse_category(std::string_view s) {
    for (auto c : {Category::polymorphic, Category::metamorphic, Category::packed, Category::benign,
                   Category::unknown})
        if (to_string(c) == s) return c;
    throw Error("unknown category '" + std::string(s) + "'", ErrorKind::usage);
}

Split parse_split(std::string_view s) {
    for (auto v : {Split::train, Split::validation, Split::test})
        if (to_string(v) == s) return v;
    throw Error("unknown split '" + std::string(s) + "'", ErrorKind::usage);
}

std::vector<ManifestEntry> CorpusManifest::select(std::optional<Split> split, std::optional<Label> label,
                                                  std::optional<Category> category) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (split && e.split != *split) continue;
        if (label && e.label != *label) continue;
        if (category && e.category != *category) continue;
        out.push_back(e);
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) throw Error("cannot read " + p.string());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    if (!data.empty() && !in.read(reinterpret_cast<char*>(data.data()), size))
        throw Error("short read on " + p.string());
    return data;
}

void write_file(const fs::path& p, std::span<const std::uint8_t> data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write failed on " + p.string());
}

CorpusManifest scan_directory(const fs::path& root, Label label, Category category, Diagnostics* diag) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw Error("not a readable directory: " + root.string());

    std::vector<fs::path> candidates;
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
         !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
        const auto& de = *it;
        std::error_code sec;
        if (de.is_regular_file(sec) || de.is_symlink(sec)) candidates.push_back(de.path());
    }
    if (ec) throw Error("cannot walk " + root.string() + ": " + ec.message());
    std::sort(candidates.begin(), candidates.end());

    std::vector<std::optional<ManifestEntry>> slots(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) {
        const auto& p = candidates[i];
        std::error_code sec;
        if (fs::is_symlink(fs::symlink_status(p, sec)) && fs::is_directory(p, sec)) return;
        try {
            if (!fs::is_regular_file(p)) throw Error("not a regular file");
            const auto bytes = read_file(p);
            slots[i] = ManifestEntry{p.generic_string(), label, category, Split::train, bytes.size(),
                                     sha256_hex(bytes)};
        } catch (const std::exception& e) {
            if (diag) diag->report(Severity::warning, "unreadable-file", e.what(), p.generic_string());
        }
    });

    CorpusManifest m;
    m.needs_split = true;
    for (auto& s : slots)
        if (s) m.entries.push_back(std::move(*s));
    return m;
}

CorpusManifest split_manifest(const CorpusManifest& m, double train_fraction, std::uint64_t seed,
                              const SplitOptions& opts) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw Error("train fraction must lie strictly between 0 and 1", ErrorKind::usage);
    if (opts.validation_share < 0.0 || opts.validation_share > 1.0)
        throw Error("validation share must lie in [0, 1]", ErrorKind::usage);

    // Stratum -> entry indices, strata visited in a fixed order.
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        const int cat = opts.stratify_by_category ? static_cast<int>(e.category) : -1;
        strata[{static_cast<int>(e.label), cat}].push_back(i);
    }

    const std::size_t min_per_stratum = opts.validation_share > 0.0 ? 3 : 2;
    CorpusManifest out = m;
    out.needs_split = false;
    std::mt19937_64 rng(seed);
    for (auto& [key, idx] : strata) {
        const auto label = static_cast<Label>(key.first);
        if (idx.size() < min_per_stratum) {
            std::string name(to_string(label));
            if (key.second >= 0) name += "/" + std::string(to_string(static_cast<Category>(key.second)));
            throw Error("too few files labelled " + name + " to split (" + std::to_string(idx.size()) +
                        ", need at least " + std::to_string(min_per_stratum) + ")");
        }
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return m.entries[a].path < m.entries[b].path; });
        std::shuffle(idx.begin(), idx.end(), rng);

        const std::size_t n = idx.size();
        auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
        const bool with_validation = opts.validation_share > 0.0;
        n_train = std::clamp<std::size_t>(n_train, 1, n - (with_validation ? 2 : 1));
        const std::size_t rest = n - n_train;
        auto n_val = static_cast<std::size_t>(std::llround(opts.validation_share * static_cast<double>(rest)));
        if (with_validation) n_val = std::clamp<std::size_t>(n_val, 1, rest - 1);

        for (std::size_t k = 0; k < n; ++k) {
            auto& e = out.entries[idx[k]];
            if (k < n_train)
                e.split = Split::train;
            else if (k < n_train + n_val)
                e.split = Split::validation;
            else
                e.split = Split::test;
        }
    }
    return out;
}

void write_manifest(std::ostream& out, const CorpusManifest& m) {
    for (const auto& e : m.entries) {
        nlohmann::ordered_json j;
        j["path"] = e.path;
        j["label"] = to_string(e.label);
        j["category"] = to_string(e.category);
        j["split"] = to_string(e.split);
        j["size_bytes"] = e.size_bytes;
        j["digest"] = e.digest;
        out << j.dump() << '\n';
    }
}

void save_manifest(const fs::path& p, const CorpusManifest& m) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + p.string());
    write_manifest(out, m);
}

CorpusManifest read_manifest(std::istream& in) {
    CorpusManifest m;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("provenance") && !j.contains("path")) continue;
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            e.label = parse_label(j.at("label").get<std::string>());
            e.category = parse_category(j.at("category").get<std::string>());
            e.split = parse_split(j.at("split").get<std::string>());
            e.size_bytes = j.at("size_bytes").get<std::uint64_t>();
            e.digest = j.at("digest").get<std::string>();
            if (!seen.insert(e.path).second) throw Error("duplicate path " + e.path);
            m.entries.push_back(std::move(e));
        } catch (const std::exception& ex) {
            throw Error("manifest line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return m;
}

CorpusManifest load_manifest(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open manifest " + p.string());
    return read_manifest(in);
}

namespace {

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

}  // namespace

std::vector<std::uint8_t> hexdump_to_bytes(std::string_view text) {
    std::vector<std::uint8_t> out;
    std::optional<std::uint64_t> last_offset;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;

        std::vector<std::string_view> tokens;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            const std::size_t start = i;
            while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i > start) tokens.push_back(line.substr(start, i - start));
        }
        if (tokens.empty()) continue;

        auto fail = [&](const std::string& why) {
            return Error("hexdump line " + std::to_string(line_no) + ": " + why);
        };

        std::string_view off_tok = tokens[0];
        std::size_t first_pair = 1;
        if (!off_tok.empty() && off_tok.back() == ':') {
            off_tok.remove_suffix(1);
        } else if (tokens.size() > 1 && tokens[1] == ":") {
            first_pair = 2;
        }
        std::uint64_t offset = 0;
        auto [ptr, ec] = std::from_chars(off_tok.data(), off_tok.data() + off_tok.size(), offset, 16);
        if (off_tok.empty() || ec != std::errc{} || ptr != off_tok.data() + off_tok.size())
            throw fail("bad offset '" + std::string(tokens[0]) + "'");
        if (last_offset && offset <= *last_offset) throw fail("offsets are not increasing");
        last_offset = offset;

        for (std::size_t t = first_pair; t < tokens.size(); ++t) {
            const auto tok = tokens[t];
            if (tok == "??") {
                out.push_back(0x00);
                continue;
            }
            const int hi = tok.size() == 2 ? hex_value(tok[0]) : -1;
            const int lo = tok.size() == 2 ? hex_value(tok[1]) : -1;
            if (hi < 0 || lo < 0) throw fail("malformed hex pair '" + std::string(tok) + "'");
            out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
        }
    }
    return out;
}

std::string bytes_to_hexdump(std::span<const std::uint8_t> data) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(data.size() * 3 + data.size() / 16 * 10 + 16);
    for (std::size_t off = 0; off < data.size(); off += 16) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08zX", off);
        out += buf;
        for (std::size_t k = off; k < std::min(off + 16, data.size()); ++k) {
            out.push_back(' ');
            out.push_back(kHex[data[k] >> 4]);
            out.push_back(kHex[data[k] & 0xF]);
        }
        out.push_back('\n');
    }
    return out;
}

}  // namespace itect::corpus
