#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "m3/toy_lmm.hpp"
#include "m3/training.hpp"

using m3::LmmConfig;
using m3::Model;
using m3::TrainConfig;

namespace {

LmmConfig tiny_cfg() {
    LmmConfig c;
    c.vocab = 11;
    c.width = 8;
    c.heads = 2;
    c.layers = 2;
    c.ffn_mult = 2;
    c.enc_in = 3;
    c.enc_channels = 4;
    c.enc_grid = 6;
    c.patch = 1;
    c.max_seq = 48;
    return c;
}

template <typename T>
m3::TokenGrid<T> random_pixels(const LmmConfig& c, std::uint64_t seed) {
    m3::SeededNormal rng(seed);
    m3::TokenGrid<T> g(c.image_side(), c.image_side(), c.enc_in);
    for (auto& x : g.v) x = static_cast<T>(rng.normal());
    return g;
}

template <typename T>
std::vector<m3::TrainSample<T>> toy_data(const LmmConfig& c, int n, std::uint64_t seed) {
    std::vector<m3::TrainSample<T>> data;
    for (int i = 0; i < n; ++i) {
        m3::TrainSample<T> s;
        s.pixels = random_pixels<T>(c, seed + static_cast<std::uint64_t>(i));
        s.question = {1 + i % 2};
        s.answer = {3 + i % 4, 0};
        data.push_back(std::move(s));
    }
    return data;
}

}  // namespace

TEST_CASE("multiscale loss is the mean of the per-scale answer nll") {
    LmmConfig c = tiny_cfg();
    Model<double> m(c);
    m.init(5);
    auto enc = m3::encode_image(m, random_pixels<double>(c, 7));
    auto pyr = m3::build_pyramid(enc);
    REQUIRE(pyr.schedule.scales() == 3);
    std::vector<int> q = {1, 2}, ans = {6, 0};
    double direct = 0.0;
    for (const auto& s : pyr.scales) direct += m3::nll(m, m3::grid_to_mat(s), q, ans);
    direct /= 3.0;
    CHECK(m3::multiscale_loss(m, pyr, q, ans) == doctest::Approx(direct).epsilon(1e-12));

    m3::TokenPyramid<double> empty;
    CHECK_THROWS_AS(m3::multiscale_loss(m, empty, q, ans), std::invalid_argument);
}

TEST_CASE("two-scale pyramid averages exactly two terms") {
    LmmConfig c = tiny_cfg();
    c.enc_grid = 3;
    Model<double> m(c);
    m.init(11);
    auto enc = m3::encode_image(m, random_pixels<double>(c, 13));
    auto pyr = m3::build_pyramid(enc);
    REQUIRE(pyr.schedule.sizes == std::vector<int>{1, 9});
    std::vector<int> q = {2}, ans = {9, 0};
    double a = m3::nll(m, m3::grid_to_mat(pyr.scales[0]), q, ans);
    double b = m3::nll(m, m3::grid_to_mat(pyr.scales[1]), q, ans);
    CHECK(m3::multiscale_loss(m, pyr, q, ans) == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
}

TEST_CASE("sample_loss, sample_loss_grad, and per-scale accumulation agree") {
    LmmConfig c = tiny_cfg();
    Model<double> m(c);
    m.init(17);
    auto pix = random_pixels<double>(c, 19);
    std::vector<int> q = {1}, ans = {4, 0};

    std::vector<double> grad_all(m.w.size(), 0.0);
    double loss_all = m3::sample_loss_grad(m, pix, q, ans, {0, 1, 2}, grad_all);
    CHECK(loss_all == doctest::Approx(m3::sample_loss(m, pix, q, ans, {0, 1, 2})).epsilon(1e-12));

    // averaging the three single-scale gradients reproduces the joint one
    std::vector<double> grad_sum(m.w.size(), 0.0);
    double loss_sum = 0.0;
    for (int idx : {0, 1, 2}) {
        loss_sum += m3::sample_loss_grad(m, pix, q, ans, {idx}, grad_sum, 1.0 / 3.0);
    }
    CHECK(loss_all == doctest::Approx(loss_sum / 3.0).epsilon(1e-12));
    for (std::size_t i = 0; i < grad_all.size(); ++i) {
        CHECK(std::abs(grad_all[i] - grad_sum[i]) <=
              1e-10 + 1e-9 * std::max(std::abs(grad_all[i]), std::abs(grad_sum[i])));
    }

    CHECK_THROWS_AS(m3::sample_loss_grad(m, pix, q, ans, {}, grad_all), std::invalid_argument);
    CHECK_THROWS_AS(m3::sample_loss_grad(m, pix, q, ans, {3}, grad_all), std::invalid_argument);
}

TEST_CASE("gradient accumulation is linear in coef") {
    LmmConfig c = tiny_cfg();
    Model<double> m(c);
    m.init(23);
    auto pix = random_pixels<double>(c, 29);
    std::vector<int> q = {2}, ans = {7, 0};
    std::vector<double> g1(m.w.size(), 0.0), g2(m.w.size(), 0.0);
    m3::sample_loss_grad(m, pix, q, ans, {0, 2}, g1, 1.0);
    m3::sample_loss_grad(m, pix, q, ans, {0, 2}, g2, 2.0);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        CHECK(std::abs(g2[i] - 2.0 * g1[i]) <= 1e-12 + 1e-10 * std::abs(g1[i]));
    }
}

TEST_CASE("adaptive moment arithmetic against a hand-rolled update") {
    TrainConfig cfg;
    cfg.step_size = 0.1;
    m3::AdamOptimizer<double> opt(4, cfg);
    std::vector<double> w = {1.0, -2.0, 3.0, 0.5};
    std::vector<std::uint8_t> mask = {1, 1, 0, 1};
    std::vector<std::vector<double>> grads = {
        {0.5, -0.2, 4.0, 1.0}, {-0.3, 0.1, -1.0, 0.7}, {0.0, 0.4, 2.0, -0.2}};

    std::vector<double> wr = w, mm(4, 0.0), vv(4, 0.0);
    for (int t = 1; t <= 3; ++t) {
        const auto& g = grads[static_cast<std::size_t>(t - 1)];
        for (int i = 0; i < 4; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            mm[i] = 0.9 * mm[i] + 0.1 * g[static_cast<std::size_t>(i)];
            vv[i] = 0.999 * vv[i] + 0.001 * g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
            double mhat = mm[i] / (1.0 - std::pow(0.9, t));
            double vhat = vv[i] / (1.0 - std::pow(0.999, t));
            wr[static_cast<std::size_t>(i)] -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        }
        opt.step(w, grads[static_cast<std::size_t>(t - 1)], mask);
    }
    for (int i = 0; i < 4; ++i) {
        CHECK(w[static_cast<std::size_t>(i)] ==
              doctest::Approx(wr[static_cast<std::size_t>(i)]).epsilon(1e-14));
    }
    CHECK(w[2] == 3.0);  // masked coordinate untouched bit-for-bit
    CHECK(opt.steps_taken() == 3);

    std::vector<double> short_g = {1.0};
    CHECK_THROWS_AS(opt.step(w, short_g, mask), std::invalid_argument);
}

TEST_CASE("trainable mask covers exactly the configured set") {
    Model<float> m(tiny_cfg());
    auto all = m3::trainable_mask(m, TrainConfig::TrainableSet::AllParams);
    CHECK(std::count(all.begin(), all.end(), 1) == static_cast<long>(m.w.size()));

    auto enc_only = m3::trainable_mask(m, TrainConfig::TrainableSet::EncoderAndProjectorOnly);
    std::size_t expect = 0;
    for (const auto& r : m3::param_layout(m.cfg)) {
        bool enc = r.name == "enc_w" || r.name == "enc_b" || r.name == "proj_w" ||
                   r.name == "proj_b";
        if (enc) expect += r.size;
        for (std::size_t i = 0; i < r.size; ++i) {
            CHECK(enc_only[r.offset + i] == (enc ? 1 : 0));
        }
    }
    CHECK(std::count(enc_only.begin(), enc_only.end(), 1) == static_cast<long>(expect));
}

TEST_CASE("frozen language model: only encoder and projector move") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(42);
    auto data = toy_data<float>(c, 8, 31);
    TrainConfig cfg;
    cfg.trainable = TrainConfig::TrainableSet::EncoderAndProjectorOnly;
    cfg.batch_size = 4;
    cfg.steps = 15;
    cfg.seed = 3;
    auto res = m3::train(init, data, cfg);
    auto mask = m3::trainable_mask(init, cfg.trainable);
    bool any_enc_moved = false;
    for (std::size_t i = 0; i < init.w.size(); ++i) {
        if (mask[i]) {
            any_enc_moved |= (res.model.w[i] != init.w[i]);
        } else {
            CHECK(res.model.w[i] == init.w[i]);  // bit-identical
        }
    }
    CHECK(any_enc_moved);
    CHECK(res.loss_curve.size() == 15);
}

TEST_CASE("zero steps returns the initial parameters bit-identically") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(7);
    auto data = toy_data<float>(c, 4, 37);
    TrainConfig cfg;
    cfg.steps = 0;
    auto res = m3::train(init, data, cfg);
    CHECK(res.model.w == init.w);
    CHECK(res.loss_curve.empty());
}

TEST_CASE("scale draws are uniform across the schedule") {
    std::mt19937 rng(9);
    const int M = 4, n = 10000;
    std::vector<int> counts(M, 0);
    for (int i = 0; i < n; ++i) {
        int k = m3::draw_scale_index(rng, M);
        REQUIRE(k >= 0);
        REQUIRE(k < M);
        ++counts[static_cast<std::size_t>(k)];
    }
    // 3 sigma around n/M with sigma = sqrt(n p (1-p)) ~ 43.3
    for (int m = 0; m < M; ++m) {
        CHECK(counts[static_cast<std::size_t>(m)] > 2500 - 130);
        CHECK(counts[static_cast<std::size_t>(m)] < 2500 + 130);
    }
}

TEST_CASE("training is deterministic given the seed") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(21);
    auto data = toy_data<float>(c, 8, 41);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 10;
    cfg.seed = 77;
    auto r1 = m3::train(init, data, cfg);
    auto r2 = m3::train(init, data, cfg);
    CHECK(r1.model.w == r2.model.w);
    CHECK(r1.loss_curve == r2.loss_curve);

    cfg.seed = 78;
    auto r3 = m3::train(init, data, cfg);
    CHECK(r1.model.w != r3.model.w);
}

TEST_CASE("training modes explore different scale sets") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(33);
    auto data = toy_data<float>(c, 8, 43);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 6;
    cfg.phase1_steps = 0;
    cfg.seed = 5;
    auto avg = m3::train(init, data, cfg);

    cfg.mode = TrainConfig::Mode::RandomScalePerSample;
    auto rnd = m3::train(init, data, cfg);
    CHECK(avg.model.w != rnd.model.w);
    for (double l : rnd.loss_curve) CHECK(std::isfinite(l));

    cfg.mode = TrainConfig::Mode::AverageAllScales;
    cfg.phase1_steps = 6;  // finest-scale warmup covers the whole run
    auto warm = m3::train(init, data, cfg);
    CHECK(warm.model.w != avg.model.w);
    for (double l : warm.loss_curve) CHECK(std::isfinite(l));
}

TEST_CASE("callback fires on the interval and at the final step") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(3);
    auto data = toy_data<float>(c, 4, 47);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.steps = 7;
    std::vector<int> fired;
    std::function<void(int, const Model<float>&)> cb = [&](int step, const Model<float>&) {
        fired.push_back(step);
    };
    m3::train(init, data, cfg, cb, 3);
    CHECK(fired == std::vector<int>{3, 6, 7});
}

TEST_CASE("non-finite loss aborts the run with a diagnostic") {
    LmmConfig c = tiny_cfg();
    Model<float> init(c);
    init.init(13);
    init.w[init.find("head_b")] = std::numeric_limits<float>::quiet_NaN();
    auto data = toy_data<float>(c, 4, 53);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.steps = 3;
    CHECK_THROWS_AS(m3::train(init, data, cfg), std::runtime_error);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.steps = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.phase1_steps = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    Model<float> m(tiny_cfg());
    m.init(1);
    std::vector<m3::TrainSample<float>> empty;
    cfg = TrainConfig{};
    CHECK_THROWS_AS(m3::train(m, empty, cfg), std::invalid_argument);
}
