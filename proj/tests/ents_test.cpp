#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "itect/ents.hpp"
#include "itect/error.hpp"

using namespace itect;
using namespace itect::ents;

namespace {

std::vector<std::uint8_t> filled(std::size_t n, std::uint8_t v) { return std::vector<std::uint8_t>(n, v); }

std::vector<std::uint8_t> all_bytes() {
    std::vector<std::uint8_t> v(256);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Chunk of 256 bytes whose entropy is exactly log2(k): k symbols, 256/k each.
std::vector<std::uint8_t> chunk_with_symbols(unsigned k) {
    std::vector<std::uint8_t> v(256);
    for (std::size_t i = 0; i < 256; ++i) v[i] = static_cast<std::uint8_t>(i % k);
    return v;
}

double oracle_entropy(const std::vector<std::uint8_t>& block) {
    std::map<std::uint8_t, double> f;
    for (auto b : block) f[b] += 1;
    double h = 0;
    for (auto& [b, c] : f) h -= c / block.size() * std::log2(c / block.size());
    return h;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g(0, 3);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST(ChunkEntropies, Examples) {
    EXPECT_EQ(chunk_entropies(filled(256, 0x41), 256), std::vector<double>{0.0});
    EXPECT_DOUBLE_EQ(chunk_entropies(all_bytes(), 256).at(0), 8.0);
    auto two = all_bytes();
    auto tail = filled(256, 7);
    two.insert(two.end(), tail.begin(), tail.end());
    const auto h = chunk_entropies(two, 256);
    ASSERT_EQ(h.size(), 2u);
    EXPECT_DOUBLE_EQ(h[0], 8.0);
    EXPECT_DOUBLE_EQ(h[1], 0.0);
    EXPECT_THROW(chunk_entropies({}, 256), Error);
}

TEST(ChunkEntropies, PartialFinalChunkUsesOwnLength) {
    std::vector<std::uint8_t> data = filled(256, 1);
    data.push_back(1);
    data.push_back(2);  // final chunk {1,2}: one bit
    const auto h = chunk_entropies(data, 256);
    ASSERT_EQ(h.size(), 2u);
    EXPECT_DOUBLE_EQ(h[1], 1.0);
}

TEST(ChunkEntropies, MatchesOracleOnRandomData) {
    std::mt19937_64 rng(9);
    std::vector<std::uint8_t> data(10'000);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng() % 37);
    const auto h = chunk_entropies(data, 300);
    ASSERT_EQ(h.size(), 34u);
    for (std::size_t j = 0; j < h.size(); ++j) {
        std::vector<std::uint8_t> chunk(data.begin() + j * 300, data.begin() + std::min(data.size(), (j + 1) * 300));
        EXPECT_NEAR(h[j], oracle_entropy(chunk), 1e-12);
    }
}

TEST(ComputeAlpha, Examples) {
    const std::uint64_t m1[] = {118'784, 200'000, 100'000};  // lower median 118,784
    const std::uint64_t b1[] = {500'000};
    EXPECT_EQ(compute_alpha(m1, b1, 256), 9u);
    const std::uint64_t c[] = {256};
    EXPECT_EQ(compute_alpha(c, c, 256), 1u);
    const std::uint64_t p[] = {20 * 256};
    const std::uint64_t q[] = {6 * 256};
    EXPECT_EQ(compute_alpha(p, q, 256), 3u);
    const std::uint64_t zero[] = {0, 0};
    EXPECT_THROW(compute_alpha(zero, c, 256), Error);
}

TEST(ComputeAlpha, LowerMedian) {
    EXPECT_EQ(lower_median({4, 1, 3, 2}), 2u);
    EXPECT_EQ(lower_median({5}), 5u);
}

TEST(SelectChunkIndices, GoldenVectors) {
    EXPECT_EQ(select_chunk_indices(20, 8), (std::vector<std::size_t>{0, 2, 5, 8, 10, 13, 16, 19}));
    EXPECT_EQ(select_chunk_indices(6, 8), (std::vector<std::size_t>{0, 0, 1, 2, 2, 3, 4, 5}));
    std::vector<std::size_t> id(16);
    std::iota(id.begin(), id.end(), 0);
    EXPECT_EQ(select_chunk_indices(16, 16), id);
}

TEST(SelectChunkIndices, MonotoneProperty) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t chunks = 1 + rng() % 5000;
        const std::size_t n = std::size_t{1} << (1 + rng() % 10);
        const auto idx = select_chunk_indices(chunks, n);
        ASSERT_EQ(idx.size(), n);
        EXPECT_EQ(idx.front(), 0u);
        EXPECT_EQ(idx.back(), chunks - 1);
        EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    }
}

TEST(Haar, WorkedWalkThrough) {
    const std::vector<double> x = {4, 5, 4, 1, 1, 2, 1, 2};
    const auto w = haar_forward(x);
    const double r2 = std::sqrt(2.0);
    // Orthonormal Haar computed by hand.
    const std::vector<double> expect = {10 / r2, 4 / r2, 2, 0, -1 / r2, 3 / r2, -1 / r2, -1 / r2};
    ASSERT_EQ(w.coeffs.size(), 8u);
    EXPECT_EQ(w.levels, 3u);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(w.coeffs[i], expect[i], 1e-12) << i;

    const auto d = denoise(w, 0.75);
    const std::vector<double> dexp = {10 / r2, 4 / r2, 2, 0, 0, 3 / r2, 0, 0};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(d.coeffs[i], dexp[i], 1e-12) << i;

    const auto rec = haar_inverse(d);
    const std::vector<double> rexp = {4.5, 4.5, 4, 1, 1.5, 1.5, 1.5, 1.5};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(rec[i], rexp[i], 1e-12) << i;
}

TEST(Haar, ConstantVector) {
    const std::vector<double> x(8, 3.0);
    const auto w = haar_forward(x);
    EXPECT_NEAR(w.coeffs[0], 3.0 * std::sqrt(8.0), 1e-12);
    for (std::size_t i = 1; i < 8; ++i) EXPECT_NEAR(w.coeffs[i], 0.0, 1e-12);
}

TEST(Haar, RejectsNonPowerOfTwo) {
    const std::vector<double> x(6, 1.0);
    EXPECT_THROW(haar_forward(x), Error);
    EXPECT_THROW(haar_inverse(HaarCoefficients{{1, 2, 3}, 1}), Error);
}

TEST(Haar, ZeroCoefficients) {
    const auto v = haar_inverse(HaarCoefficients{std::vector<double>(16, 0.0), 4});
    for (double x : v) EXPECT_EQ(x, 0.0);
}

TEST(Haar, RoundTripAndParsevalProperty) {
    std::mt19937_64 rng(42);
    for (int t = 0; t < 1000; ++t) {
        const auto x = random_vector(rng, std::size_t{1} << (1 + rng() % 10));
        const auto w = haar_forward(x);
        const auto y = haar_inverse(w);
        double ex = 0, ew = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            ASSERT_NEAR(y[i], x[i], 1e-9);
            ex += x[i] * x[i];
            ew += w.coeffs[i] * w.coeffs[i];
        }
        ASSERT_NEAR(ew, ex, 1e-9 * ex);
    }
}

TEST(Denoise, Extremes) {
    std::mt19937_64 rng(3);
    const auto w = haar_forward(random_vector(rng, 32));
    EXPECT_EQ(denoise(w, 0.0).coeffs, w.coeffs);
    const auto all = denoise(w, std::numeric_limits<double>::infinity());
    EXPECT_EQ(all.coeffs[0], w.coeffs[0]);
    for (std::size_t i = 1; i < all.coeffs.size(); ++i) EXPECT_EQ(all.coeffs[i], 0.0);
}

TEST(EntropyProfile, WorkedExample) {
    // Twenty chunks; the selected ones (0,2,5,8,10,13,16,19) carry entropies 4,5,4,1,1,2,1,2.
    const unsigned sel[] = {0, 2, 5, 8, 10, 13, 16, 19};
    const unsigned syms[] = {16, 32, 16, 2, 2, 4, 2, 4};
    std::vector<std::uint8_t> data;
    for (unsigned c = 0; c < 20; ++c) {
        unsigned k = 1;
        for (int i = 0; i < 8; ++i)
            if (sel[i] == c) k = syms[i];
        const auto chunk = chunk_with_symbols(k);
        data.insert(data.end(), chunk.begin(), chunk.end());
    }
    const auto p = entropy_profile(data, {256, 3, 0.75});
    const std::vector<double> expect = {4.5, 4.5, 4, 1, 1.5, 1.5, 1.5, 1.5};
    ASSERT_EQ(p.values.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(p.values[i], expect[i], 0.05) << i;
}

TEST(EntropyProfile, ConstantFileIsZero) {
    const auto p = entropy_profile(filled(10'000, 0x90), {256, 4, 0.5});
    ASSERT_EQ(p.values.size(), 16u);
    for (double v : p.values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(EntropyProfile, UniformRandomChunksMatchMonteCarloOracle) {
    // A 256-byte sample of uniform bytes has expected plug-in entropy well below 8
    // (about 7.18 bits), so the oracle is a Monte-Carlo estimate of that mean.
    std::mt19937_64 oracle_rng(100);
    double mc = 0;
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
        std::vector<std::uint8_t> c(256);
        for (auto& b : c) b = static_cast<std::uint8_t>(oracle_rng());
        mc += oracle_entropy(c);
    }
    mc /= trials;

    std::mt19937_64 rng(7);
    const EntsParams params{256, 5, 0.5};
    std::vector<std::uint8_t> data(params.length() * 256);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    const auto p = entropy_profile(data, params);
    for (double v : p.values) EXPECT_NEAR(v, mc, 0.2);
}

TEST(EntropyProfile, BoundsAndDeterminism) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 40; ++t) {
        std::vector<std::uint8_t> data(1 + rng() % 60'000);
        const unsigned alphabet = 1 + rng() % 256;
        for (auto& b : data) b = static_cast<std::uint8_t>(rng() % alphabet);
        for (std::size_t i = 0; i < data.size() / 3; ++i) data[i] = 0;
        const EntsParams params{256, static_cast<unsigned>(1 + rng() % 9), 0.5};
        const auto p = entropy_profile(data, params);
        ASSERT_EQ(p.values.size(), params.length());
        for (double v : p.values) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, -1e-6);
            EXPECT_LE(v, 8 + 1e-6);
        }
        EXPECT_EQ(entropy_profile(data, params).values, p.values);
    }
}

TEST(Params, ValidateAndJson) {
    EXPECT_THROW((EntsParams{0, 3, 0.5}.validate()), Error);
    EXPECT_THROW((EntsParams{256, 0, 0.5}.validate()), Error);
    EXPECT_THROW((EntsParams{256, 3, -1}.validate()), Error);
    const EntsParams p{128, 7, 0.25};
    EXPECT_EQ(params_from_json(params_to_json(p)), p);
    EXPECT_EQ(params_from_json("{\"provenance\":{},\"params\":" + params_to_json(p) + "}"), p);
}

namespace {

FeatureMatrix matrix_from_columns(const std::vector<std::vector<double>>& cols) {
    FeatureMatrix m;
    for (std::size_t r = 0; r < cols[0].size(); ++r) {
        std::vector<double> row;
        for (const auto& c : cols) row.push_back(c[r]);
        m.append_row(row, "r" + std::to_string(r), corpus::Label::benign);
    }
    return m;
}

}  // namespace

TEST(PruneCorrelated, Examples) {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const std::vector<double> b = {1, -2, 0, 2, -1};
    EXPECT_EQ(prune_correlated(matrix_from_columns({a, a})).col_index, std::vector<std::size_t>{0});
    // a and b are orthogonal after centring.
    EXPECT_NEAR(pearson(a, b), 0.0, 1e-12);
    EXPECT_EQ(prune_correlated(matrix_from_columns({a, b})).col_index, (std::vector<std::size_t>{0, 1}));
    EXPECT_THROW(prune_correlated(matrix_from_columns({{1.0}, {2.0}})), Error);
}

TEST(PruneCorrelated, ZeroVarianceColumns) {
    const std::vector<double> k = {2, 2, 2, 2};
    const std::vector<double> a = {1, 5, 2, 3};
    EXPECT_EQ(prune_correlated(matrix_from_columns({a, k})).col_index, std::vector<std::size_t>{0});
    EXPECT_EQ(prune_correlated(matrix_from_columns({k, a})).col_index, (std::vector<std::size_t>{0, 1}));
}

TEST(PruneCorrelated, NoisyCopiesMatchPairwiseOracle) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0, 1), tiny(0, 0.01);
    std::vector<std::vector<double>> cols(10, std::vector<double>(200));
    for (std::size_t r = 0; r < 200; ++r) {
        cols[0][r] = g(rng);
        for (std::size_t c = 1; c < 10; ++c) cols[c][r] = cols[0][r] + tiny(rng);
    }
    const auto m = matrix_from_columns(cols);
    const auto pruned = prune_correlated(m);

    // Oracle: independent greedy scan over directly computed correlations.
    auto corr = [](const std::vector<double>& x, const std::vector<double>& y) {
        const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
        double sxy = 0, sxx = 0, syy = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
        }
        return sxy / std::sqrt(sxx * syy);
    };
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        bool ok = true;
        for (auto k : kept) ok = ok && std::fabs(corr(cols[c], cols[k])) <= 0.8;
        if (ok) kept.push_back(c);
    }
    EXPECT_EQ(pruned.col_index, kept);
    EXPECT_EQ(pruned.cols, 1u);
    for (std::size_t i = 0; i < pruned.cols; ++i)
        for (std::size_t j = i + 1; j < pruned.cols; ++j) {
            std::vector<double> ci, cj;
            for (std::size_t r = 0; r < pruned.rows; ++r) {
                ci.push_back(pruned.at(r, i));
                cj.push_back(pruned.at(r, j));
            }
            EXPECT_LE(std::fabs(pearson(ci, cj)), 0.8);
        }
}

TEST(FeatureCsv, RoundTrip) {
    FeatureMatrix m;
    m.col_index = {0, 3, 7};
    m.cols = 3;
    const double r0[] = {0.125, 7.5, 3.0};
    const double r1[] = {1.0 / 3.0, 0.0, 8.0};
    m.append_row(r0, "aa", corpus::Label::malware);
    m.append_row(r1, "bb", corpus::Label::benign);
    std::stringstream ss;
    write_feature_csv(ss, m, "provenance {}");
    const auto back = read_feature_csv(ss);
    EXPECT_EQ(back.col_index, m.col_index);
    EXPECT_EQ(back.data, m.data);
    EXPECT_EQ(back.row_ids, m.row_ids);
    EXPECT_EQ(back.labels, m.labels);
}

TEST(Project, SelectsOriginalDimensions) {
    const std::vector<double> p = {10, 11, 12, 13};
    const std::size_t cols[] = {1, 3};
    EXPECT_EQ(project(p, cols), (std::vector<double>{11, 13}));
}
