// Small decoder-only autoregressive multimodal transformer. Visual tokens and
// the question form the prefix; next-token prediction is teacher-forced over
// the answer. Forward, loss, exact reverse-mode gradients, greedy decoding,
// and the toy patch-mean image encoder live here. Templated scalar: float for
// training, double for gradient checks.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3/token_pyramid.hpp"

namespace m3 {

struct LmmConfig {
    int vocab = 64;
    int width = 64;
    int heads = 4;
    int layers = 4;
    int ffn_mult = 4;
    int enc_in = 11;        // raw patch-mean channels (3 color + 8 glyph)
    int enc_channels = 16;  // encoder token width C
    int enc_grid = 12;      // encoder token grid side
    int patch = 2;          // sub-pixels per cell side
    int max_seq = 160;

    int image_side() const { return enc_grid * patch; }
    int ffn_width() const { return ffn_mult * width; }

    void validate() const {
        if (vocab < 2) throw std::invalid_argument("LmmConfig: vocab must be >= 2");
        if (width % heads != 0) throw std::invalid_argument("LmmConfig: width % heads != 0");
        if (layers < 1 || heads < 1 || enc_grid < 1 || patch < 1 || max_seq < 1 ||
            enc_in < 1 || enc_channels < 1) {
            throw std::invalid_argument("LmmConfig: all dimensions must be positive");
        }
    }
};

struct ParamRange {
    std::string name;
    std::size_t offset;
    std::size_t size;
};

inline std::vector<ParamRange> param_layout(const LmmConfig& c) {
    std::vector<ParamRange> r;
    std::size_t off = 0;
    auto add = [&](const std::string& name, std::size_t n) {
        r.push_back({name, off, n});
        off += n;
    };
    const std::size_t d = c.width, V = c.vocab, f = c.ffn_width();
    add("embed", V * d);
    add("pos", static_cast<std::size_t>(c.max_seq) * d);
    add("enc_w", static_cast<std::size_t>(c.enc_channels) * c.enc_in);
    add("enc_b", c.enc_channels);
    add("proj_w", d * c.enc_channels);
    add("proj_b", d);
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        add(p + "ln1_g", d);
        add(p + "ln1_b", d);
        add(p + "wq", d * d);
        add(p + "bq", d);
        add(p + "wk", d * d);
        add(p + "bk", d);
        add(p + "wv", d * d);
        add(p + "bv", d);
        add(p + "wo", d * d);
        add(p + "bo", d);
        add(p + "ln2_g", d);
        add(p + "ln2_b", d);
        add(p + "w1", f * d);
        add(p + "b1", f);
        add(p + "w2", d * f);
        add(p + "b2", d);
    }
    add("lnf_g", d);
    add("lnf_b", d);
    add("head_w", V * d);
    add("head_b", V);
    return r;
}

// Closed-form parameter count; must agree with the layout above.
inline std::int64_t param_count(const LmmConfig& c) {
    const std::int64_t d = c.width, V = c.vocab, f = c.ffn_width();
    std::int64_t per_block = 4 * d +                       // two layer norms
                             4 * (d * d + d) +             // q, k, v, o
                             f * d + f + d * f + d;        // feed-forward
    return V * d + static_cast<std::int64_t>(c.max_seq) * d +
           static_cast<std::int64_t>(c.enc_channels) * c.enc_in + c.enc_channels +
           d * c.enc_channels + d + c.layers * per_block + 2 * d + V * d + V;
}

template <typename T>
struct Model {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    LmmConfig cfg;
    std::vector<T> w;

    explicit Model(const LmmConfig& c = LmmConfig{}) : cfg(c) {
        cfg.validate();
        w.assign(static_cast<std::size_t>(param_count(cfg)), T(0));
    }

    std::size_t find(const std::string& name) const {
        for (const ParamRange& r : param_layout(cfg)) {
            if (r.name == name) return r.offset;
        }
        throw std::invalid_argument("Model: no parameter named " + name);
    }

    MapM tensor(T* base, const std::string& name, int rows, int cols) const {
        return MapM(base + find(name), rows, cols);
    }
    CMapM view(const std::string& name, int rows, int cols) const {
        return CMapM(w.data() + find(name), rows, cols);
    }

    CMapM embed() const { return view("embed", cfg.vocab, cfg.width); }
    CMapM pos() const { return view("pos", cfg.max_seq, cfg.width); }
    CMapM enc_w() const { return view("enc_w", cfg.enc_channels, cfg.enc_in); }
    CMapM enc_b() const { return view("enc_b", cfg.enc_channels, 1); }
    CMapM proj_w() const { return view("proj_w", cfg.width, cfg.enc_channels); }
    CMapM proj_b() const { return view("proj_b", cfg.width, 1); }
    CMapM lnf_g() const { return view("lnf_g", cfg.width, 1); }
    CMapM lnf_b() const { return view("lnf_b", cfg.width, 1); }
    CMapM head_w() const { return view("head_w", cfg.vocab, cfg.width); }
    CMapM head_b() const { return view("head_b", cfg.vocab, 1); }
    CMapM block(int l, const std::string& name, int rows, int cols) const {
        return view("block" + std::to_string(l) + "." + name, rows, cols);
    }

    void init(std::uint64_t seed);

    bool finite() const {
        for (const T& x : w) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> m(cfg);
        for (std::size_t i = 0; i < w.size(); ++i) m.w[i] = static_cast<U>(w[i]);
        return m;
    }
};

// Deterministic normal draws; Box-Muller over raw mt19937 output so init does
// not depend on libstdc++ distribution internals.
class SeededNormal {
public:
    explicit SeededNormal(std::uint64_t seed) : rng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    double uniform() {  // in (0, 1)
        return (static_cast<double>(rng_()) + 0.5) / 4294967296.0;
    }
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

private:
    std::mt19937 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
void Model<T>::init(std::uint64_t seed) {
    SeededNormal rng(seed);
    auto fill_normal = [&](std::size_t off, std::size_t n, double sd) {
        for (std::size_t i = 0; i < n; ++i) w[off + i] = static_cast<T>(sd * rng.normal());
    };
    for (const ParamRange& r : param_layout(cfg)) {
        const std::string& n = r.name;
        auto ends_with = [&](const char* s) {
            std::string t(s);
            return n.size() >= t.size() && n.compare(n.size() - t.size(), t.size(), t) == 0;
        };
        if (n == "embed" || n == "pos") {
            fill_normal(r.offset, r.size, 0.02);
        } else if (ends_with("ln1_g") || ends_with("ln2_g") || n == "lnf_g") {
            for (std::size_t i = 0; i < r.size; ++i) w[r.offset + i] = T(1);
        } else if (ends_with("_b") || ends_with("bq") || ends_with("bk") || ends_with("bv") ||
                   ends_with("bo") || ends_with("b1") || ends_with("b2")) {
            // biases and ln shifts start at zero
        } else {
            // weight matrices: fan-in scaled
            int fan_in = cfg.width;
            if (n == "enc_w") fan_in = cfg.enc_in;
            if (n == "proj_w") fan_in = cfg.enc_channels;
            if (ends_with("w2")) fan_in = cfg.ffn_width();
            fill_normal(r.offset, r.size, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        }
    }
}

namespace detail {

template <typename T>
struct BlockCache {
    using Mat = typename Model<T>::Mat;
    using Vec = typename Model<T>::Vec;
    Mat x_in, ln1_out, q, k, v, att_concat, x_mid, ln2_out, ffn_pre, ffn_act;
    Vec m1, r1, m2, r2;
    std::vector<Mat> att;  // per head, row-softmax over causal scores
};

template <typename T>
struct LayerNormGrads {
    typename Model<T>::Vec dg, db;
};

// y = xhat * g + b per row; returns xhat via out params.
template <typename T>
void layer_norm_fwd(const typename Model<T>::Mat& x, const typename Model<T>::Vec& g,
                    const typename Model<T>::Vec& b, typename Model<T>::Mat& y,
                    typename Model<T>::Vec& mean, typename Model<T>::Vec& rstd) {
    const T eps = T(1e-5);
    const Eigen::Index n = x.rows(), d = x.cols();
    y.resize(n, d);
    mean.resize(n);
    rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        T mu = x.row(i).mean();
        T var = (x.row(i).array() - mu).square().mean();
        T rs = T(1) / std::sqrt(var + eps);
        mean(i) = mu;
        rstd(i) = rs;
        y.row(i) = (((x.row(i).array() - mu) * rs) * g.transpose().array() + b.transpose().array())
                       .matrix();
    }
}

template <typename T>
void layer_norm_bwd(const typename Model<T>::Mat& x, const typename Model<T>::Vec& g,
                    const typename Model<T>::Vec& mean, const typename Model<T>::Vec& rstd,
                    const typename Model<T>::Mat& dy, typename Model<T>::Mat& dx,
                    Eigen::Ref<typename Model<T>::Mat> dg_acc,
                    Eigen::Ref<typename Model<T>::Mat> db_acc) {
    const Eigen::Index n = x.rows(), d = x.cols();
    dx.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto xhat = ((x.row(i).array() - mean(i)) * rstd(i)).eval();
        auto dyg = (dy.row(i).array() * g.transpose().array()).eval();
        dg_acc.col(0).array() += (dy.row(i).array() * xhat).transpose();
        db_acc.col(0).array() += dy.row(i).array().transpose();
        T m1 = dyg.mean();
        T m2 = (dyg * xhat).mean();
        dx.row(i) = (rstd(i) * (dyg - m1 - xhat * m2)).matrix();
    }
}

inline double gelu_d(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad_d(double x) {
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

}  // namespace detail

template <typename T>
struct ForwardCache {
    using Mat = typename Model<T>::Mat;
    using Vec = typename Model<T>::Vec;
    Mat x0;  // embedded sequence with positions added
    std::vector<detail::BlockCache<T>> blocks;
    Mat x_final, lnf_out, logits;
    Vec mf, rf;
    int n_vis = 0, n_q = 0, n_ans = 0;
};

// Full-sequence forward. visual_raw: n_vis x enc_channels encoder tokens
// (pre-projection); question and answer_prefix are token ids. Returns logits
// for every position; causal masking guarantees position t sees only <= t.
template <typename T>
typename Model<T>::Mat forward(const Model<T>& m, const typename Model<T>::Mat& visual_raw,
                               std::span<const int> question, std::span<const int> answer_prefix,
                               ForwardCache<T>* cache = nullptr) {
    using Mat = typename Model<T>::Mat;
    const LmmConfig& c = m.cfg;
    const int n_vis = static_cast<int>(visual_raw.rows());
    const int n_q = static_cast<int>(question.size());
    const int n_a = static_cast<int>(answer_prefix.size());
    const int n = n_vis + n_q + n_a;
    if (n_vis > 0 && visual_raw.cols() != c.enc_channels) {
        throw std::invalid_argument("forward: visual token width != enc_channels");
    }
    if (n > c.max_seq) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(n) +
                                    " exceeds max_seq " + std::to_string(c.max_seq));
    }
    if (n == 0) throw std::invalid_argument("forward: empty sequence");
    auto check_tok = [&](int t) {
        if (t < 0 || t >= c.vocab) throw std::invalid_argument("forward: token id out of range");
    };
    for (int t : question) check_tok(t);
    for (int t : answer_prefix) check_tok(t);

    const int d = c.width, h = c.heads, dh = d / h;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

    Mat x(n, d);
    if (n_vis > 0) {
        x.topRows(n_vis) = visual_raw * m.proj_w().transpose();
        x.topRows(n_vis).rowwise() += m.proj_b().col(0).transpose();
    }
    for (int i = 0; i < n_q; ++i) x.row(n_vis + i) = m.embed().row(question[i]);
    for (int i = 0; i < n_a; ++i) x.row(n_vis + n_q + i) = m.embed().row(answer_prefix[i]);
    x += m.pos().topRows(n);

    ForwardCache<T> local;
    ForwardCache<T>& cc = cache ? *cache : local;
    cc.n_vis = n_vis;
    cc.n_q = n_q;
    cc.n_ans = n_a;
    cc.x0 = x;
    cc.blocks.assign(c.layers, {});

    for (int l = 0; l < c.layers; ++l) {
        detail::BlockCache<T>& b = cc.blocks[l];
        b.x_in = x;
        detail::layer_norm_fwd<T>(x, m.block(l, "ln1_g", d, 1).col(0),
                                  m.block(l, "ln1_b", d, 1).col(0), b.ln1_out, b.m1, b.r1);
        b.q = b.ln1_out * m.block(l, "wq", d, d).transpose();
        b.q.rowwise() += m.block(l, "bq", d, 1).col(0).transpose();
        b.k = b.ln1_out * m.block(l, "wk", d, d).transpose();
        b.k.rowwise() += m.block(l, "bk", d, 1).col(0).transpose();
        b.v = b.ln1_out * m.block(l, "wv", d, d).transpose();
        b.v.rowwise() += m.block(l, "bv", d, 1).col(0).transpose();

        b.att.assign(h, Mat());
        b.att_concat.resize(n, d);
        for (int hi = 0; hi < h; ++hi) {
            auto qh = b.q.middleCols(hi * dh, dh);
            auto kh = b.k.middleCols(hi * dh, dh);
            auto vh = b.v.middleCols(hi * dh, dh);
            Mat scores = qh * kh.transpose() * inv_sqrt_dh;
            Mat& a = b.att[hi];
            a = Mat::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                T mx = scores(i, 0);
                for (int j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
                T sum = T(0);
                for (int j = 0; j <= i; ++j) {
                    a(i, j) = std::exp(scores(i, j) - mx);
                    sum += a(i, j);
                }
                for (int j = 0; j <= i; ++j) a(i, j) /= sum;
            }
            b.att_concat.middleCols(hi * dh, dh) = a * vh;
        }
        Mat att_out = b.att_concat * m.block(l, "wo", d, d).transpose();
        att_out.rowwise() += m.block(l, "bo", d, 1).col(0).transpose();
        b.x_mid = x + att_out;

        detail::layer_norm_fwd<T>(b.x_mid, m.block(l, "ln2_g", d, 1).col(0),
                                  m.block(l, "ln2_b", d, 1).col(0), b.ln2_out, b.m2, b.r2);
        const int f = c.ffn_width();
        b.ffn_pre = b.ln2_out * m.block(l, "w1", f, d).transpose();
        b.ffn_pre.rowwise() += m.block(l, "b1", f, 1).col(0).transpose();
        b.ffn_act = b.ffn_pre.unaryExpr(
            [](T z) { return static_cast<T>(detail::gelu_d(static_cast<double>(z))); });
        Mat ffn_out = b.ffn_act * m.block(l, "w2", d, f).transpose();
        ffn_out.rowwise() += m.block(l, "b2", d, 1).col(0).transpose();
        x = b.x_mid + ffn_out;
    }

    cc.x_final = x;
    detail::layer_norm_fwd<T>(x, m.lnf_g().col(0), m.lnf_b().col(0), cc.lnf_out, cc.mf, cc.rf);
    cc.logits = cc.lnf_out * m.head_w().transpose();
    cc.logits.rowwise() += m.head_b().col(0).transpose();
    return cc.logits;
}

// Row-wise log-softmax value for one target column.
template <typename T>
T log_softmax_at(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& row, int target) {
    T mx = row.maxCoeff();
    T sum = (row.array() - mx).exp().sum();
    return row(target) - mx - std::log(sum);
}

// -log P(X_a | visual, X_q): sum of teacher-forced per-token terms.
template <typename T>
T nll(const Model<T>& m, const typename Model<T>::Mat& visual_raw, std::span<const int> question,
      std::span<const int> answer) {
    if (answer.empty()) throw std::invalid_argument("nll: empty answer");
    const int L = static_cast<int>(answer.size());
    std::span<const int> prefix = answer.subspan(0, L - 1);
    auto logits = forward(m, visual_raw, question, prefix);
    const int p0 = static_cast<int>(visual_raw.rows()) + static_cast<int>(question.size()) - 1;
    T loss = T(0);
    for (int j = 0; j < L; ++j) {
        loss -= log_softmax_at<T>(logits.row(p0 + j), answer[j]);
    }
    return loss;
}

// Reverse-mode gradient of nll. Accumulates coef * d(nll)/d(params) into
// grad; if d_visual is non-null it is overwritten with coef * d(nll)/d(visual_raw).
template <typename T>
T nll_grad(const Model<T>& m, const typename Model<T>::Mat& visual_raw,
           std::span<const int> question, std::span<const int> answer, std::vector<T>& grad,
           typename Model<T>::Mat* d_visual = nullptr, T coef = T(1)) {
    using Mat = typename Model<T>::Mat;
    if (answer.empty()) throw std::invalid_argument("nll_grad: empty answer");
    if (grad.size() != m.w.size()) throw std::invalid_argument("nll_grad: grad size mismatch");
    const LmmConfig& c = m.cfg;
    const int L = static_cast<int>(answer.size());
    std::span<const int> prefix = answer.subspan(0, L - 1);

    ForwardCache<T> cc;
    forward(m, visual_raw, question, prefix, &cc);
    const int n = static_cast<int>(cc.logits.rows());
    const int d = c.width, h = c.heads, dh = d / h, f = c.ffn_width();
    const int p0 = cc.n_vis + cc.n_q - 1;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

    T loss = T(0);
    Mat dlogits = Mat::Zero(n, c.vocab);
    for (int j = 0; j < L; ++j) {
        const int t = p0 + j;
        T mx = cc.logits.row(t).maxCoeff();
        Eigen::Matrix<T, 1, Eigen::Dynamic> p = (cc.logits.row(t).array() - mx).exp();
        p /= p.sum();
        loss -= cc.logits(t, answer[j]) - mx - std::log((cc.logits.row(t).array() - mx).exp().sum());
        dlogits.row(t) = p;
        dlogits(t, answer[j]) -= T(1);
    }
    dlogits *= coef;

    T* g = grad.data();
    auto acc = [&](const std::string& name, int rows, int cols) {
        return typename Model<T>::MapM(g + m.find(name), rows, cols);
    };

    // head
    acc("head_w", c.vocab, d) += dlogits.transpose() * cc.lnf_out;
    acc("head_b", c.vocab, 1).col(0) += dlogits.colwise().sum().transpose();
    Mat dlnf_out = dlogits * m.head_w();
    Mat dx;
    {
        auto dg = acc("lnf_g", d, 1);
        auto db = acc("lnf_b", d, 1);
        detail::layer_norm_bwd<T>(cc.x_final, m.lnf_g().col(0), cc.mf, cc.rf, dlnf_out, dx, dg, db);
    }

    for (int l = c.layers - 1; l >= 0; --l) {
        const detail::BlockCache<T>& b = cc.blocks[l];
        const std::string p = "block" + std::to_string(l) + ".";
        // ffn_out branch: dx feeds both x_mid (residual) and ffn path
        Mat dffn_out = dx;
        acc(p + "w2", d, f) += dffn_out.transpose() * b.ffn_act;
        acc(p + "b2", d, 1).col(0) += dffn_out.colwise().sum().transpose();
        Mat dffn_act = dffn_out * m.block(l, "w2", d, f);
        Mat dffn_pre = dffn_act.binaryExpr(b.ffn_pre, [](T dy, T z) {
            return static_cast<T>(static_cast<double>(dy) *
                                  detail::gelu_grad_d(static_cast<double>(z)));
        });
        acc(p + "w1", f, d) += dffn_pre.transpose() * b.ln2_out;
        acc(p + "b1", f, 1).col(0) += dffn_pre.colwise().sum().transpose();
        Mat dln2_out = dffn_pre * m.block(l, "w1", f, d);
        Mat dx_mid;
        {
            auto dg = acc(p + "ln2_g", d, 1);
            auto db = acc(p + "ln2_b", d, 1);
            detail::layer_norm_bwd<T>(b.x_mid, m.block(l, "ln2_g", d, 1).col(0), b.m2, b.r2,
                                      dln2_out, dx_mid, dg, db);
        }
        dx_mid += dx;  // residual

        // attention output projection
        Mat datt_out = dx_mid;
        acc(p + "wo", d, d) += datt_out.transpose() * b.att_concat;
        acc(p + "bo", d, 1).col(0) += datt_out.colwise().sum().transpose();
        Mat datt_concat = datt_out * m.block(l, "wo", d, d);

        Mat dq = Mat::Zero(n, d), dk = Mat::Zero(n, d), dv = Mat::Zero(n, d);
        for (int hi = 0; hi < h; ++hi) {
            auto kh = b.k.middleCols(hi * dh, dh);
            auto qh = b.q.middleCols(hi * dh, dh);
            auto vh = b.v.middleCols(hi * dh, dh);
            const Mat& a = b.att[hi];
            Mat dout_h = datt_concat.middleCols(hi * dh, dh);
            Mat dvh = a.transpose() * dout_h;
            Mat da = dout_h * vh.transpose();
            // softmax backward, causal support only
            Mat ds = Mat::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                T dot = T(0);
                for (int j = 0; j <= i; ++j) dot += da(i, j) * a(i, j);
                for (int j = 0; j <= i; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot);
            }
            dq.middleCols(hi * dh, dh) = ds * kh * inv_sqrt_dh;
            dk.middleCols(hi * dh, dh) = ds.transpose() * qh * inv_sqrt_dh;
            dv.middleCols(hi * dh, dh) = dvh;
        }
        acc(p + "wq", d, d) += dq.transpose() * b.ln1_out;
        acc(p + "bq", d, 1).col(0) += dq.colwise().sum().transpose();
        acc(p + "wk", d, d) += dk.transpose() * b.ln1_out;
        acc(p + "bk", d, 1).col(0) += dk.colwise().sum().transpose();
        acc(p + "wv", d, d) += dv.transpose() * b.ln1_out;
        acc(p + "bv", d, 1).col(0) += dv.colwise().sum().transpose();
        Mat dln1_out = dq * m.block(l, "wq", d, d) + dk * m.block(l, "wk", d, d) +
                       dv * m.block(l, "wv", d, d);
        Mat dx_in;
        {
            auto dg = acc(p + "ln1_g", d, 1);
            auto db = acc(p + "ln1_b", d, 1);
            detail::layer_norm_bwd<T>(b.x_in, m.block(l, "ln1_g", d, 1).col(0), b.m1, b.r1,
                                      dln1_out, dx_in, dg, db);
        }
        dx = dx_in + dx_mid;
    }

    // input embeddings
    acc("pos", c.max_seq, d).topRows(n) += dx;
    auto dembed = acc("embed", c.vocab, d);
    for (int i = 0; i < cc.n_q; ++i) dembed.row(question[i]) += dx.row(cc.n_vis + i);
    for (int i = 0; i < cc.n_ans; ++i) {
        dembed.row(prefix[i]) += dx.row(cc.n_vis + cc.n_q + i);
    }
    if (cc.n_vis > 0) {
        Mat dvis_proj = dx.topRows(cc.n_vis);
        acc("proj_w", d, c.enc_channels) += dvis_proj.transpose() * visual_raw;
        acc("proj_b", d, 1).col(0) += dvis_proj.colwise().sum().transpose();
        if (d_visual) *d_visual = dvis_proj * m.proj_w();
    } else if (d_visual) {
        d_visual->resize(0, c.enc_channels);
    }
    return loss;
}

// Greedy argmax decoding until eos or max_len; ties break to the lowest id.
template <typename T>
std::vector<int> generate(const Model<T>& m, const typename Model<T>::Mat& visual_raw,
                          std::span<const int> question, int max_len, int eos_token) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
        auto logits = forward(m, visual_raw, question, out);
        const auto last = logits.row(logits.rows() - 1);
        int best = 0;
        for (int t = 1; t < m.cfg.vocab; ++t) {
            if (last(t) > last(best)) best = t;
        }
        out.push_back(best);
        if (best == eos_token) break;
    }
    return out;
}

// Per-cell patch means of a pixel tensor (image_side x image_side x enc_in).
template <typename T>
typename Model<T>::Mat patch_means(const LmmConfig& c, const TokenGrid<T>& pixels) {
    if (pixels.h != c.image_side() || pixels.w != c.image_side() || pixels.c != c.enc_in) {
        throw std::invalid_argument("patch_means: image resolution mismatch, expected " +
                                    std::to_string(c.image_side()) + "x" +
                                    std::to_string(c.image_side()) + "x" +
                                    std::to_string(c.enc_in));
    }
    const int g = c.enc_grid, r = c.patch;
    typename Model<T>::Mat p(g * g, c.enc_in);
    const T inv = T(1) / static_cast<T>(r * r);
    for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
            for (int ch = 0; ch < c.enc_in; ++ch) {
                T s = T(0);
                for (int di = 0; di < r; ++di) {
                    for (int dj = 0; dj < r; ++dj) s += pixels.at(i * r + di, j * r + dj, ch);
                }
                p(i * g + j, ch) = s * inv;
            }
        }
    }
    return p;
}

// Toy image encoder: patch-mean embedding followed by a learned linear map.
template <typename T>
TokenGrid<T> encode_image(const Model<T>& m, const TokenGrid<T>& pixels) {
    const LmmConfig& c = m.cfg;
    typename Model<T>::Mat p = patch_means<T>(c, pixels);
    typename Model<T>::Mat e = p * m.enc_w().transpose();
    e.rowwise() += m.enc_b().col(0).transpose();
    TokenGrid<T> grid(c.enc_grid, c.enc_grid, c.enc_channels);
    for (int i = 0; i < c.enc_grid; ++i) {
        for (int j = 0; j < c.enc_grid; ++j) {
            for (int ch = 0; ch < c.enc_channels; ++ch) {
                grid.at(i, j, ch) = e(i * c.enc_grid + j, ch);
            }
        }
    }
    return grid;
}

// Row-major flattening of a grid into an Eigen matrix (tokens x channels).
template <typename T>
typename Model<T>::Mat grid_to_mat(const TokenGrid<T>& g) {
    typename Model<T>::Mat m(g.tokens(), g.c);
    for (int t = 0; t < g.tokens(); ++t) {
        for (int ch = 0; ch < g.c; ++ch) m(t, ch) = g.v[static_cast<std::size_t>(t) * g.c + ch];
    }
    return m;
}

template <typename T>
typename Model<T>::Mat seq_to_mat(const TokenSeq<T>& s) {
    typename Model<T>::Mat m(s.count, s.channels);
    for (int t = 0; t < s.count; ++t) {
        for (int ch = 0; ch < s.channels; ++ch) m(t, ch) = s.at(t, ch);
    }
    return m;
}

// Checkpoint: one-line JSON header then parameters as little-endian float32
// in declaration order.
template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& m, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const LmmConfig& c = m.cfg;
    nlohmann::json header = {{"format", "m3-checkpoint-v1"},
                             {"vocab", c.vocab},
                             {"width", c.width},
                             {"heads", c.heads},
                             {"layers", c.layers},
                             {"ffn_mult", c.ffn_mult},
                             {"enc_in", c.enc_in},
                             {"enc_channels", c.enc_channels},
                             {"enc_grid", c.enc_grid},
                             {"patch", c.patch},
                             {"max_seq", c.max_seq},
                             {"seed", seed},
                             {"param_count", param_count(c)}};
    out << header.dump() << "\n";
    std::vector<float> data(m.w.size());
    for (std::size_t i = 0; i < m.w.size(); ++i) data[i] = static_cast<float>(m.w[i]);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("load_checkpoint: missing header");
    nlohmann::json h = nlohmann::json::parse(header_line);
    if (h.value("format", "") != std::string("m3-checkpoint-v1")) {
        throw std::runtime_error("load_checkpoint: unknown format");
    }
    LmmConfig c;
    c.vocab = h.at("vocab");
    c.width = h.at("width");
    c.heads = h.at("heads");
    c.layers = h.at("layers");
    c.ffn_mult = h.at("ffn_mult");
    c.enc_in = h.at("enc_in");
    c.enc_channels = h.at("enc_channels");
    c.enc_grid = h.at("enc_grid");
    c.patch = h.at("patch");
    c.max_seq = h.at("max_seq");
    if (h.at("param_count").get<std::int64_t>() != param_count(c)) {
        throw std::runtime_error("load_checkpoint: header param_count inconsistent with shapes");
    }
    Model<T> m(c);
    std::vector<float> data(m.w.size());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float))) {
        throw std::runtime_error("load_checkpoint: truncated payload");
    }
    for (std::size_t i = 0; i < data.size(); ++i) m.w[i] = static_cast<T>(data[i]);
    if (seed_out) *seed_out = h.value("seed", std::uint64_t(0));
    return m;
}

}  // namespace m3
