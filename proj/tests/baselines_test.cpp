#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "itect/baselines.hpp"
#include "itect/error.hpp"

using namespace itect;
using namespace itect::baselines;

namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes random_bytes(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

// Repetitive but not trivial: a 300-byte motif with occasional edits.
Bytes repetitive(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    Bytes motif = random_bytes(seed + 1, 300);
    Bytes b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = rng() % 97 == 0 ? static_cast<std::uint8_t>(rng()) : motif[i % 300];
    return b;
}

CompressorSpec zlib_spec() {
    CompressorSpec s;
    s.algorithm_id = "zlib";
    return s;
}

}  // namespace

TEST(Compressor, RoundTripBothAlgorithms) {
    for (const auto& spec : {CompressorSpec{}, zlib_spec()}) {
        const auto c = make_compressor(spec);
        for (const auto& x : {Bytes{}, Bytes{42}, random_bytes(1, 5000), repetitive(2, 20000)}) {
            const auto z = c->compress(x);
            EXPECT_EQ(c->decompress(z), x) << c->describe();
            EXPECT_EQ(c->compress(x), z) << "deterministic";
            EXPECT_EQ(c->compressed_size(x), z.size());
        }
    }
}

TEST(Compressor, UnknownAlgorithm) {
    CompressorSpec s;
    s.algorithm_id = "brotli";
    EXPECT_THROW(make_compressor(s), Error);
}

TEST(CompressionRate, RepeatedByteGolden) {
    const Bytes x(1 << 20, 0x41);
    const double r = compression_rate(x, CompressorSpec{});
    EXPECT_LT(r, 0.01);
    // Pinned output of the xz/LZMA2 preset-9e encoder for this input.
    EXPECT_EQ(make_compressor({})->compressed_size(x), 280u);
    EXPECT_EQ(compression_rate(x, CompressorSpec{}), r);
}

TEST(CompressionRate, RandomIsIncompressible) {
    const double r = compression_rate(random_bytes(3, 1 << 20), CompressorSpec{});
    EXPECT_GT(r, 0.99);
    EXPECT_LT(r, 1.05);
}

TEST(CompressionRate, NonincreasingInCopies) {
    const auto base = repetitive(4, 4000);
    double prev = 10;
    for (int k = 1; k <= 8; k *= 2) {
        Bytes x;
        for (int i = 0; i < k; ++i) x.insert(x.end(), base.begin(), base.end());
        const double r = compression_rate(x, CompressorSpec{});
        EXPECT_LE(r, prev);
        prev = r;
    }
    EXPECT_THROW(compression_rate(Bytes{}, CompressorSpec{}), Error);
}

TEST(Ncd, SelfRandomAndSymmetry) {
    const auto c = make_compressor({});
    const auto x = repetitive(5, 100 * 1024);
    const auto y = random_bytes(6, 100 * 1024);
    const auto z = random_bytes(7, 100 * 1024);
    EXPECT_LE(ncd(x, x, *c), 0.1);
    EXPECT_GE(ncd(y, z, *c), 0.9);
    EXPECT_LT(ncd(y, y, *c), ncd(y, z, *c));
    EXPECT_LE(std::fabs(ncd(x, y, *c) - ncd(y, x, *c)), 0.05);
    EXPECT_THROW(ncd(Bytes{}, x, *c), Error);
}

TEST(Ncd, FormulaUsesPThenQ) {
    const auto c = make_compressor(zlib_spec());
    const auto p = repetitive(8, 3000);
    const auto q = random_bytes(9, 2000);
    Bytes pq = p;
    pq.insert(pq.end(), q.begin(), q.end());
    const double cp = c->compressed_size(p), cq = c->compressed_size(q), cpq = c->compressed_size(pq);
    EXPECT_DOUBLE_EQ(ncd(p, q, *c), (cpq - std::min(cp, cq)) / std::max(cp, cq));
}

TEST(SimilarityRows, ShapeIdentityAndDeterminism) {
    const std::vector<NamedBytes> one_test = {{"t", repetitive(10, 5000)}};
    const std::vector<NamedBytes> one_train = {{"u", random_bytes(11, 5000)}};
    const auto m11 = similarity_rows(one_test, one_train, zlib_spec());
    EXPECT_EQ(m11.rows, 1u);
    EXPECT_EQ(m11.cols, 1u);

    std::vector<NamedBytes> train;
    for (int i = 0; i < 4; ++i) train.push_back({"f" + std::to_string(i), repetitive(20 + i, 8000)});
    const std::vector<NamedBytes> test = {{"copy", train[2].bytes}, {"other", random_bytes(30, 8000)}};
    const auto m = similarity_rows(test, train, CompressorSpec{});
    ASSERT_EQ(m.rows, 2u);
    ASSERT_EQ(m.cols, 4u);
    EXPECT_EQ(m.row_ids, (std::vector<std::string>{"copy", "other"}));
    EXPECT_LT(m.at(0, 2), 0.1);
    for (std::size_t j = 0; j < 4; ++j)
        if (j != 2) EXPECT_GT(m.at(0, j), m.at(0, 2));
    EXPECT_EQ(similarity_rows(test, train, CompressorSpec{}).data, m.data);
}
