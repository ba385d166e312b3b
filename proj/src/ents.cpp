#include "itect/ents.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "itect/error.hpp"

namespace itect::ents {

void EntsParams::validate() const {
    if (chunk_size < 1) throw Error("chunk size must be at least 1", ErrorKind::usage);
    if (alpha < 1 || alpha > 30) throw Error("alpha must lie in [1, 30]", ErrorKind::usage);
    if (!(tau >= 0.0)) throw Error("threshold tau must be nonnegative", ErrorKind::usage);
}

void FeatureMatrix::append_row(std::span<const double> values, std::string id,
                               std::optional<corpus::Label> label) {
    if (rows == 0 && cols == 0 && col_index.empty()) {
        cols = values.size();
        col_index.resize(cols);
        std::iota(col_index.begin(), col_index.end(), std::size_t{0});
    }
    if (values.size() != cols) throw Error("feature row width mismatch");
    data.insert(data.end(), values.begin(), values.end());
    row_ids.push_back(std::move(id));
    if (label) {
        if (labels.size() != rows) throw Error("cannot mix labelled and unlabelled rows");
        labels.push_back(*label);
    } else if (!labels.empty()) {
        throw Error("cannot mix labelled and unlabelled rows");
    }
    ++rows;
}

double shannon_entropy(std::span<const std::uint8_t> block) {
    if (block.empty()) return 0.0;
    std::array<std::uint32_t, 256> freq{};
    for (auto b : block) ++freq[b];
    const double n = static_cast<double>(block.size());
    double h = 0.0;
    for (auto f : freq) {
        if (f == 0) continue;
        const double p = f / n;
        h -= p * std::log2(p);
    }
    return h;
}

std::vector<double> chunk_entropies(std::span<const std::uint8_t> data, std::size_t c) {
    if (data.empty()) throw Error("empty file");
    if (c == 0) throw Error("chunk size must be at least 1", ErrorKind::usage);
    std::vector<double> out;
    out.reserve((data.size() + c - 1) / c);
    for (std::size_t off = 0; off < data.size(); off += c)
        out.push_back(shannon_entropy(data.subspan(off, std::min(c, data.size() - off))));
    return out;
}

std::uint64_t lower_median(std::vector<std::uint64_t> sizes) {
    if (sizes.empty()) throw Error("median of an empty zoo");
    const std::size_t mid = (sizes.size() - 1) / 2;
    std::nth_element(sizes.begin(), sizes.begin() + static_cast<std::ptrdiff_t>(mid), sizes.end());
    return sizes[mid];
}

unsigned compute_alpha(std::span<const std::uint64_t> malware_sizes, std::span<const std::uint64_t> benign_sizes,
                       std::size_t c) {
    if (malware_sizes.empty() || benign_sizes.empty()) throw Error("both zoos must be nonempty");
    if (c == 0) throw Error("chunk size must be at least 1", ErrorKind::usage);
    const auto med_m = lower_median({malware_sizes.begin(), malware_sizes.end()});
    const auto med_b = lower_median({benign_sizes.begin(), benign_sizes.end()});
    if (med_m == 0) throw Error("malware zoo has a zero median file length");
    if (med_b == 0) throw Error("benign zoo has a zero median file length");
    // ceil(log2(m / c)) computed exactly: smallest a with c * 2^a >= m.
    const std::uint64_t m = std::min(med_m, med_b);
    unsigned alpha = 1;
    while (alpha < 62 && (static_cast<unsigned __int128>(c) << alpha) < m) ++alpha;
    return alpha;
}

unsigned compute_alpha(const corpus::CorpusManifest& manifest, std::size_t c) {
    std::vector<std::uint64_t> mal, ben;
    for (const auto& e : manifest.entries)
        (e.label == corpus::Label::malware ? mal : ben).push_back(e.size_bytes);
    return compute_alpha(mal, ben, c);
}

std::vector<std::size_t> select_chunk_indices(std::size_t num_chunks, std::size_t n) {
    if (num_chunks < 1) throw Error("need at least one chunk");
    if (n < 2) throw Error("profile length must be at least 2");
    std::vector<std::size_t> idx(n);
    const auto span = static_cast<unsigned __int128>(num_chunks - 1);
    for (std::size_t k = 0; k < n; ++k) idx[k] = static_cast<std::size_t>(span * k / (n - 1));
    return idx;
}

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

unsigned log2_exact(std::size_t n) {
    unsigned a = 0;
    while ((std::size_t{1} << a) < n) ++a;
    return a;
}

}  // namespace

HaarCoefficients haar_forward(std::span<const double> series) {
    if (!is_power_of_two(series.size()) || series.size() < 2)
        throw Error("Haar transform needs a power-of-two length >= 2, got " + std::to_string(series.size()));
    std::vector<double> w(series.begin(), series.end());
    std::vector<double> tmp(w.size());
    for (std::size_t len = w.size(); len > 1; len /= 2) {
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < half; ++i) {
            tmp[i] = (w[2 * i] + w[2 * i + 1]) * M_SQRT1_2;
            tmp[half + i] = (w[2 * i] - w[2 * i + 1]) * M_SQRT1_2;
        }
        std::copy_n(tmp.begin(), len, w.begin());
    }
    return {std::move(w), log2_exact(series.size())};
}

std::vector<double> haar_inverse(const HaarCoefficients& coeffs) {
    const std::size_t n = coeffs.coeffs.size();
    if (!is_power_of_two(n) || n < 2 || (std::size_t{1} << coeffs.levels) != n)
        throw Error("Haar coefficient layout does not match its level count");
    std::vector<double> x = coeffs.coeffs;
    std::vector<double> tmp(n);
    for (std::size_t len = 2; len <= n; len *= 2) {
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < half; ++i) {
            const double s = x[i];
            const double d = x[half + i];
            tmp[2 * i] = (s + d) * M_SQRT1_2;
            tmp[2 * i + 1] = (s - d) * M_SQRT1_2;
        }
        std::copy_n(tmp.begin(), len, x.begin());
    }
    return x;
}

HaarCoefficients denoise(HaarCoefficients coeffs, double tau) {
    if (!(tau >= 0.0)) throw Error("threshold tau must be nonnegative", ErrorKind::usage);
    for (std::size_t i = 1; i < coeffs.coeffs.size(); ++i)
        if (std::abs(coeffs.coeffs[i]) < tau) coeffs.coeffs[i] = 0.0;
    return coeffs;
}

std::vector<double> smooth_series(std::span<const double> entropies, double tau) {
    return haar_inverse(denoise(haar_forward(entropies), tau));
}

EntropyProfile entropy_profile(std::span<const std::uint8_t> data, const EntsParams& params, std::string digest) {
    params.validate();
    if (data.empty()) throw Error("empty file");
    const std::size_t c = params.chunk_size;
    const std::size_t num_chunks = (data.size() + c - 1) / c;
    const auto idx = select_chunk_indices(num_chunks, params.length());

    std::vector<double> selected(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        // Repeated indices reuse the previous value.
        if (k > 0 && idx[k] == idx[k - 1]) {
            selected[k] = selected[k - 1];
            continue;
        }
        const std::size_t off = idx[k] * c;
        selected[k] = shannon_entropy(data.subspan(off, std::min(c, data.size() - off)));
    }
    return {smooth_series(selected, params.tau), std::move(digest), params};
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw Error("pearson needs two equal-length samples of size >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

FeatureMatrix prune_correlated(const FeatureMatrix& matrix, double cutoff) {
    if (matrix.rows < 2) throw Error("correlation pruning needs at least two rows");
    const std::size_t rows = matrix.rows;

    // Centered, unit-norm columns; a zero norm marks a constant column.
    std::vector<std::vector<double>> z(matrix.cols, std::vector<double>(rows));
    std::vector<bool> constant(matrix.cols, false);
    for (std::size_t c = 0; c < matrix.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mean += matrix.at(r, c);
        mean /= static_cast<double>(rows);
        double norm = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            z[c][r] = matrix.at(r, c) - mean;
            norm += z[c][r] * z[c][r];
        }
        // Relative test so values that differ only by rounding count as constant.
        if (norm <= 1e-24 * std::max(1.0, mean * mean) * static_cast<double>(rows)) {
            constant[c] = true;
            continue;
        }
        const double inv = 1.0 / std::sqrt(norm);
        for (auto& v : z[c]) v *= inv;
    }

    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < matrix.cols; ++c) {
        if (constant[c]) {
            if (kept.empty()) kept.push_back(c);
            continue;
        }
        bool drop = false;
        for (auto k : kept) {
            if (constant[k]) continue;
            double r = 0.0;
            for (std::size_t i = 0; i < rows; ++i) r += z[c][i] * z[k][i];
            if (std::abs(r) > cutoff) {
                drop = true;
                break;
            }
        }
        if (!drop) kept.push_back(c);
    }

    std::vector<std::size_t> ids;
    ids.reserve(kept.size());
    for (auto k : kept) ids.push_back(matrix.col_index[k]);
    return select_columns(matrix, ids);
}

FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> cols) {
    std::vector<std::size_t> pos;
    pos.reserve(cols.size());
    for (auto id : cols) {
        auto it = std::find(matrix.col_index.begin(), matrix.col_index.end(), id);
        if (it == matrix.col_index.end()) throw Error("feature column x" + std::to_string(id) + " not present");
        pos.push_back(static_cast<std::size_t>(it - matrix.col_index.begin()));
    }
    FeatureMatrix out;
    out.rows = matrix.rows;
    out.cols = cols.size();
    out.col_index.assign(cols.begin(), cols.end());
    out.row_ids = matrix.row_ids;
    out.labels = matrix.labels;
    out.data.reserve(out.rows * out.cols);
    for (std::size_t r = 0; r < matrix.rows; ++r)
        for (auto p : pos) out.data.push_back(matrix.at(r, p));
    return out;
}

std::vector<double> project(std::span<const double> profile, std::span<const std::size_t> cols) {
    std::vector<double> out;
    out.reserve(cols.size());
    for (auto c : cols) {
        if (c >= profile.size()) throw Error("feature column x" + std::to_string(c) + " beyond profile length");
        out.push_back(profile[c]);
    }
    return out;
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& m, const std::string& comment) {
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "digest,label";
    for (auto id : m.col_index) out << ",x" << id;
    out << '\n';
    char buf[32];
    for (std::size_t r = 0; r < m.rows; ++r) {
        out << m.row_ids[r] << ',' << (m.labelled() ? corpus::to_string(m.labels[r]) : "");
        for (std::size_t c = 0; c < m.cols; ++c) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, m.at(r, c));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        out << '\n';
    }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) return out;
        start = comma + 1;
    }
}

}  // namespace

FeatureMatrix read_feature_csv(std::istream& in) {
    FeatureMatrix m;
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_commas(line);
        if (!header_seen) {
            if (fields.size() < 2 || fields[0] != "digest" || fields[1] != "label")
                throw Error("feature CSV header must start with digest,label");
            for (std::size_t i = 2; i < fields.size(); ++i) {
                const auto f = fields[i];
                std::size_t id = 0;
                auto [p, ec] = std::from_chars(f.data() + 1, f.data() + f.size(), id);
                if (f.size() < 2 || f[0] != 'x' || ec != std::errc{} || p != f.data() + f.size())
                    throw Error("bad feature column name '" + std::string(f) + "'");
                m.col_index.push_back(id);
            }
            m.cols = m.col_index.size();
            header_seen = true;
            continue;
        }
        if (fields.size() != m.cols + 2)
            throw Error("feature CSV line " + std::to_string(line_no) + ": expected " + std::to_string(m.cols + 2) +
                        " fields");
        row.assign(m.cols, 0.0);
        for (std::size_t c = 0; c < m.cols; ++c) {
            const auto f = fields[c + 2];
            auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), row[c]);
            if (ec != std::errc{} || p != f.data() + f.size())
                throw Error("feature CSV line " + std::to_string(line_no) + ": bad number '" + std::string(f) + "'");
        }
        std::optional<corpus::Label> label;
        if (!fields[1].empty()) label = corpus::parse_label(fields[1]);
        m.data.insert(m.data.end(), row.begin(), row.end());
        m.row_ids.emplace_back(fields[0]);
        if (label) m.labels.push_back(*label);
        ++m.rows;
    }
    if (!header_seen) throw Error("feature CSV has no header");
    if (!m.labels.empty() && m.labels.size() != m.rows) throw Error("feature CSV mixes labelled and unlabelled rows");
    return m;
}

std::string params_to_json(const EntsParams& p) {
    nlohmann::ordered_json j;
    j["chunk_size"] = p.chunk_size;
    j["alpha"] = p.alpha;
    j["tau"] = p.tau;
    return j.dump();
}

EntsParams params_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        const auto& src = j.contains("params") ? j.at("params") : j;
        EntsParams p;
        p.chunk_size = src.at("chunk_size").get<std::size_t>();
        p.alpha = src.at("alpha").get<unsigned>();
        p.tau = src.at("tau").get<double>();
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad EnTS parameter file: ") + e.what());
    }
}

std::string profile_to_json(const EntropyProfile& p) {
    nlohmann::ordered_json j;
    j["digest"] = p.source_digest;
    j["params"] = nlohmann::ordered_json::parse(params_to_json(p.params));
    j["values"] = p.values;
    return j.dump();
}

}  // namespace itect::ents
