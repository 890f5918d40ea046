#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "m3/tensor_io.hpp"
#include "m3/token_pyramid.hpp"

using m3::TokenGrid;

namespace {

TokenGrid<double> random_grid(int h, int w, int c, std::uint32_t seed) {
    std::mt19937 rng(seed);
    TokenGrid<double> g(h, w, c);
    for (auto& x : g.v) x = (static_cast<double>(rng()) / 4294967296.0) * 2.0 - 1.0;
    return g;
}

// independent oracle: coarse token = direct mean over its source block
double block_mean(const TokenGrid<double>& src, int m_rows, int m_cols, int bi, int bj, int ch) {
    const int rh = src.h / m_rows, rw = src.w / m_cols;
    double s = 0.0;
    for (int i = 0; i < rh; ++i) {
        for (int j = 0; j < rw; ++j) s += src.at(bi * rh + i, bj * rw + j, ch);
    }
    return s / (rh * rw);
}

}  // namespace

TEST_CASE("pool_2x2 basics") {
    TokenGrid<double> g(2, 2, 1);
    g.at(0, 0, 0) = 1;
    g.at(0, 1, 0) = 2;
    g.at(1, 0, 0) = 3;
    g.at(1, 1, 0) = 5;
    auto out = m3::pool_2x2(g);
    CHECK(out.h == 1);
    CHECK(out.w == 1);
    CHECK(out.at(0, 0, 0) == doctest::Approx(2.75));

    TokenGrid<double> big(24, 24, 3, 0.5);
    auto half = m3::pool_2x2(big);
    CHECK(half.h == 12);
    CHECK(half.w == 12);
    for (auto x : half.v) CHECK(x == doctest::Approx(0.5));

    CHECK_THROWS_AS(m3::pool_2x2(TokenGrid<double>(3, 4, 1)), std::invalid_argument);
    CHECK_THROWS_AS(m3::pool_2x2(TokenGrid<double>(4, 5, 1)), std::invalid_argument);
}

TEST_CASE("pool_3x3 basics") {
    TokenGrid<double> g(3, 3, 1);
    for (int i = 0; i < 9; ++i) g.v[i] = i + 1;
    auto out = m3::pool_3x3(g);
    CHECK(out.tokens() == 1);
    CHECK(out.at(0, 0, 0) == doctest::Approx(5.0));

    TokenGrid<double> c(3, 3, 4, 1.25);
    auto oc = m3::pool_3x3(c);
    for (auto x : oc.v) CHECK(x == doctest::Approx(1.25));

    CHECK_THROWS_AS(m3::pool_3x3(TokenGrid<double>(4, 4, 1)), std::invalid_argument);
}

TEST_CASE("build_pyramid schedules") {
    auto p24 = m3::build_pyramid(random_grid(24, 24, 2, 1));
    CHECK(p24.schedule.sizes == std::vector<int>{1, 9, 36, 144, 576});

    auto p6 = m3::build_pyramid(random_grid(6, 6, 1, 2));
    CHECK(p6.schedule.sizes == std::vector<int>{1, 9, 36});

    auto p12 = m3::build_pyramid(random_grid(12, 12, 1, 3));
    CHECK(p12.schedule.sizes == std::vector<int>{1, 9, 36, 144});
}

TEST_CASE("build_pyramid rejects odd stalls and names the dimension") {
    try {
        m3::build_pyramid(random_grid(10, 10, 1, 4));
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("5") != std::string::npos);
    }
    // even shapes at or below 3 terminate without the 1-token scale
    auto p8 = m3::build_pyramid(random_grid(8, 8, 1, 5));
    CHECK(p8.schedule.sizes == std::vector<int>{4, 16, 64});
}

TEST_CASE("pyramid block-mean fidelity against direct recomputation") {
    auto src = random_grid(24, 24, 8, 42);
    auto p = m3::build_pyramid(src);
    for (std::size_t s = 0; s < p.scales.size(); ++s) {
        const auto& g = p.scales[s];
        for (int i = 0; i < g.h; ++i) {
            for (int j = 0; j < g.w; ++j) {
                for (int ch = 0; ch < g.c; ++ch) {
                    double expect = block_mean(src, g.h, g.w, i, j, ch);
                    CHECK(g.at(i, j, ch) ==
                          doctest::Approx(expect).epsilon(1e-6));
                }
            }
        }
    }
    // finest scale is bit-identical to the source
    CHECK(p.finest().v == src.v);
}

TEST_CASE("pyramid determinism and global mean conservation") {
    auto src = random_grid(24, 24, 4, 7);
    auto p1 = m3::build_pyramid(src);
    auto p2 = m3::build_pyramid(src);
    for (std::size_t s = 0; s < p1.scales.size(); ++s) {
        CHECK(p1.scales[s].v == p2.scales[s].v);
    }
    double src_mean = 0.0;
    for (auto x : src.v) src_mean += x;
    src_mean /= static_cast<double>(src.v.size());
    for (const auto& g : p1.scales) {
        double m = 0.0;
        for (auto x : g.v) m += x;
        m /= static_cast<double>(g.v.size());
        CHECK(m == doctest::Approx(src_mean).epsilon(1e-6));
    }
}

TEST_CASE("schedule law for the 3*2^a family") {
    for (int a = 0; a <= 3; ++a) {
        int side = 3 << a;
        auto p = m3::build_pyramid(random_grid(side, side, 1, 100 + a));
        REQUIRE(p.schedule.scales() == a + 2);
        CHECK(p.schedule.sizes[0] == 1);
        for (int i = 1; i <= a + 1; ++i) {
            CHECK(p.schedule.sizes[static_cast<std::size_t>(i)] == 9 * (1 << (2 * (i - 1))));
        }
    }
}

TEST_CASE("flatten is row-major and preserves the finest scale") {
    TokenGrid<double> g(2, 2, 1);
    g.at(0, 0, 0) = 1;
    g.at(0, 1, 0) = 2;
    g.at(1, 0, 0) = 3;
    g.at(1, 1, 0) = 4;
    auto s = m3::flatten(g);
    CHECK(s.count == 4);
    CHECK(s.v == std::vector<double>{1, 2, 3, 4});

    TokenGrid<double> one(1, 1, 3, 0.5);
    CHECK(m3::flatten(one).count == 1);

    auto src = random_grid(12, 12, 2, 9);
    auto p = m3::build_pyramid(src);
    CHECK(m3::flatten(p.finest()).v == m3::flatten(src).v);
}

TEST_CASE("spatial_sample lattice") {
    auto g = random_grid(24, 24, 2, 11);
    auto full = m3::spatial_sample(g, 24 * 24);
    CHECK(full.v == g.v);

    auto one = m3::spatial_sample(g, 1);
    CHECK(one.at(0, 0, 0) == g.at(12, 12, 0));
    CHECK(one.at(0, 0, 1) == g.at(12, 12, 1));

    auto four = m3::spatial_sample(g, 4);
    CHECK(four.at(0, 0, 0) == g.at(6, 6, 0));
    CHECK(four.at(0, 1, 0) == g.at(6, 18, 0));
    CHECK(four.at(1, 0, 0) == g.at(18, 6, 0));
    CHECK(four.at(1, 1, 0) == g.at(18, 18, 0));

    CHECK_THROWS_AS(m3::spatial_sample(g, 8), std::invalid_argument);
}

TEST_CASE("sequential_sample prefixes") {
    auto g = random_grid(6, 6, 3, 13);
    auto all = m3::sequential_sample(g, 36);
    CHECK(all.v == m3::flatten(g).v);

    auto one = m3::sequential_sample(g, 1);
    CHECK(one.at(0, 0) == g.at(0, 0, 0));

    auto row = m3::sequential_sample(g, 6);
    for (int j = 0; j < 6; ++j) {
        for (int ch = 0; ch < 3; ++ch) CHECK(row.at(j, ch) == g.at(0, j, ch));
    }
    CHECK_THROWS_AS(m3::sequential_sample(g, 0), std::invalid_argument);
    CHECK_THROWS_AS(m3::sequential_sample(g, 37), std::invalid_argument);
}

TEST_CASE("samplers never alter token values") {
    auto g = random_grid(12, 12, 4, 17);
    std::mt19937 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        int m = 1 + static_cast<int>(rng() % 12);
        auto sp = m3::spatial_sample(g, m * m);
        for (auto x : sp.v) {
            CHECK(std::find(g.v.begin(), g.v.end(), x) != g.v.end());
        }
        int k = 1 + static_cast<int>(rng() % 144);
        auto sq = m3::sequential_sample(g, k);
        CHECK(std::equal(sq.v.begin(), sq.v.end(), g.v.begin()));
    }
}

TEST_CASE("inference_pool matches the pyramid bit-exactly") {
    auto g = random_grid(24, 24, 3, 19);
    auto p = m3::build_pyramid(g);
    for (int k : p.schedule.sizes) {
        auto pooled = m3::inference_pool(g, k);
        CHECK(pooled.v == p.scales[static_cast<std::size_t>(p.schedule.index_of(k))].v);
    }
    CHECK(m3::inference_pool(g, 576).v == g.v);
    CHECK(m3::inference_pool(g, 144).v == m3::pool_2x2(g).v);
    CHECK_THROWS_AS(m3::inference_pool(g, 100), std::invalid_argument);
}

TEST_CASE("grid file round trip") {
    TokenGrid<float> g(5, 7, 3);
    std::mt19937 rng(23);
    for (auto& x : g.v) x = static_cast<float>(rng()) / 4294967296.0f;
    const std::string path = "test_grid_roundtrip.bin";
    m3::write_grid(path, g);
    auto back = m3::read_grid(path);
    CHECK(back.h == 5);
    CHECK(back.w == 7);
    CHECK(back.c == 3);
    CHECK(back.v == g.v);
    std::remove(path.c_str());
}
