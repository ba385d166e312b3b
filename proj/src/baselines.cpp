#include "itect/baselines.hpp"

#include <algorithm>

#include <lzma.h>
#include <zlib.h>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::baselines {
namespace {

std::uint32_t dictionary_for(std::size_t input, std::uint64_t cap) {
    std::uint64_t d = LZMA_DICT_SIZE_MIN;
    while (d < input && d < cap) d <<= 1;
    return static_cast<std::uint32_t>(std::min<std::uint64_t>(d, cap));
}

class Lzma2Compressor final : public Compressor {
public:
    explicit Lzma2Compressor(const CompressorSpec& spec) : spec_(spec) {
        if (spec.level < 0 || spec.level > 9) throw Error("lzma2 level must lie in [0, 9]", ErrorKind::usage);
        if (spec.dict_size < LZMA_DICT_SIZE_MIN) throw Error("lzma2 dictionary too small", ErrorKind::usage);
    }

    std::vector<std::uint8_t> compress(std::span<const std::uint8_t> data) const override {
        lzma_options_lzma opt;
        if (lzma_lzma_preset(&opt, static_cast<std::uint32_t>(spec_.level) | LZMA_PRESET_EXTREME))
            throw Error("lzma preset rejected");
        opt.dict_size = dictionary_for(data.size(), std::min<std::uint64_t>(spec_.dict_size, 1536ull << 20));
        lzma_filter filters[] = {{LZMA_FILTER_LZMA2, &opt}, {LZMA_VLI_UNKNOWN, nullptr}};
        std::vector<std::uint8_t> out(lzma_stream_buffer_bound(data.size()));
        std::size_t pos = 0;
        const auto rc = lzma_stream_buffer_encode(filters, LZMA_CHECK_NONE, nullptr, data.data(), data.size(),
                                                  out.data(), &pos, out.size());
        if (rc != LZMA_OK) throw Error("lzma2 compression failed (code " + std::to_string(rc) + ")");
        out.resize(pos);
        return out;
    }

    std::vector<std::uint8_t> decompress(std::span<const std::uint8_t> data) const override {
        lzma_stream strm = LZMA_STREAM_INIT;
        if (lzma_stream_decoder(&strm, UINT64_MAX, 0) != LZMA_OK) throw Error("lzma decoder init failed");
        std::vector<std::uint8_t> out;
        std::uint8_t buf[1 << 16];
        strm.next_in = data.data();
        strm.avail_in = data.size();
        lzma_ret rc = LZMA_OK;
        while (rc == LZMA_OK) {
            strm.next_out = buf;
            strm.avail_out = sizeof buf;
            rc = lzma_code(&strm, LZMA_FINISH);
            out.insert(out.end(), buf, buf + (sizeof buf - strm.avail_out));
        }
        lzma_end(&strm);
        if (rc != LZMA_STREAM_END) throw Error("lzma2 stream is corrupt (code " + std::to_string(rc) + ")");
        return out;
    }

    std::string describe() const override {
        return "lzma2 level " + std::to_string(spec_.level) + " extreme, dictionary cap " +
               std::to_string(std::min<std::uint64_t>(spec_.dict_size, 1536ull << 20)) + " bytes";
    }

private:
    CompressorSpec spec_;
};

class ZlibCompressor final : public Compressor {
public:
    explicit ZlibCompressor(const CompressorSpec& spec) : level_(spec.level) {
        if (level_ < 0 || level_ > 9) throw Error("zlib level must lie in [0, 9]", ErrorKind::usage);
    }

    std::vector<std::uint8_t> compress(std::span<const std::uint8_t> data) const override {
        uLongf len = compressBound(static_cast<uLong>(data.size()));
        std::vector<std::uint8_t> out(len);
        if (compress2(out.data(), &len, data.data(), static_cast<uLong>(data.size()), level_) != Z_OK)
            throw Error("zlib compression failed");
        out.resize(len);
        return out;
    }

    std::vector<std::uint8_t> decompress(std::span<const std::uint8_t> data) const override {
        z_stream strm{};
        if (inflateInit(&strm) != Z_OK) throw Error("zlib decoder init failed");
        strm.next_in = const_cast<Bytef*>(data.data());
        strm.avail_in = static_cast<uInt>(data.size());
        std::vector<std::uint8_t> out;
        std::uint8_t buf[1 << 16];
        int rc = Z_OK;
        while (rc == Z_OK) {
            strm.next_out = buf;
            strm.avail_out = sizeof buf;
            rc = inflate(&strm, Z_NO_FLUSH);
            out.insert(out.end(), buf, buf + (sizeof buf - strm.avail_out));
        }
        inflateEnd(&strm);
        if (rc != Z_STREAM_END) throw Error("zlib stream is corrupt");
        return out;
    }

    std::string describe() const override { return "zlib level " + std::to_string(level_); }

private:
    int level_;
};

std::vector<std::uint8_t> concat(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    std::vector<std::uint8_t> pq;
    pq.reserve(a.size() + b.size());
    pq.insert(pq.end(), a.begin(), a.end());
    pq.insert(pq.end(), b.begin(), b.end());
    return pq;
}

double ncd_from_sizes(double cp, double cq, double cpq) { return (cpq - std::min(cp, cq)) / std::max(cp, cq); }

}  // namespace

std::unique_ptr<Compressor> make_compressor(const CompressorSpec& spec) {
    if (spec.algorithm_id == "lzma2") return std::make_unique<Lzma2Compressor>(spec);
    if (spec.algorithm_id == "zlib") return std::make_unique<ZlibCompressor>(spec);
    throw Error("unknown compressor '" + spec.algorithm_id + "' (expected lzma2|zlib)", ErrorKind::usage);
}

double compression_rate(std::span<const std::uint8_t> data, const Compressor& c) {
    if (data.empty()) throw Error("compression rate of an empty input");
    return static_cast<double>(c.compressed_size(data)) / static_cast<double>(data.size());
}

double compression_rate(std::span<const std::uint8_t> data, const CompressorSpec& spec) {
    return compression_rate(data, *make_compressor(spec));
}

double ncd(std::span<const std::uint8_t> p, std::span<const std::uint8_t> q, const Compressor& c) {
    if (p.empty() || q.empty()) throw Error("NCD needs two nonempty inputs");
    const auto cp = static_cast<double>(c.compressed_size(p));
    const auto cq = static_cast<double>(c.compressed_size(q));
    const auto cpq = static_cast<double>(c.compressed_size(concat(p, q)));
    return ncd_from_sizes(cp, cq, cpq);
}

double ncd(std::span<const std::uint8_t> p, std::span<const std::uint8_t> q, const CompressorSpec& spec) {
    return ncd(p, q, *make_compressor(spec));
}

ents::FeatureMatrix similarity_rows(std::span<const NamedBytes> test, std::span<const NamedBytes> train,
                                    const CompressorSpec& spec) {
    const auto comp = make_compressor(spec);
    for (const auto& f : test)
        if (f.bytes.empty()) throw Error("NCD needs nonempty inputs: " + f.id);
    for (const auto& f : train)
        if (f.bytes.empty()) throw Error("NCD needs nonempty inputs: " + f.id);

    std::vector<double> c_test(test.size()), c_train(train.size());
    parallel_for(test.size(), [&](std::size_t i) { c_test[i] = static_cast<double>(comp->compressed_size(test[i].bytes)); });
    parallel_for(train.size(),
                 [&](std::size_t j) { c_train[j] = static_cast<double>(comp->compressed_size(train[j].bytes)); });

    ents::FeatureMatrix m;
    m.rows = test.size();
    m.cols = train.size();
    m.col_index.resize(train.size());
    for (std::size_t j = 0; j < train.size(); ++j) m.col_index[j] = j;
    m.data.assign(m.rows * m.cols, 0.0);
    for (const auto& f : test) m.row_ids.push_back(f.id);
    parallel_for(test.size() * train.size(), [&](std::size_t k) {
        const std::size_t i = k / train.size(), j = k % train.size();
        const auto cpq = static_cast<double>(comp->compressed_size(concat(test[i].bytes, train[j].bytes)));
        m.data[k] = ncd_from_sizes(c_test[i], c_train[j], cpq);
    });
    return m;
}

}  // namespace itect::baselines
