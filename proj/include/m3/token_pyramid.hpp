// Nested coarse-to-fine visual token scales built by block-mean pooling,
// plus the training-free sampling baselines (spatial / sequential selection).
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace m3 {

// H x W spatial grid of C-dimensional tokens, row-major, channel-minor.
template <typename T>
struct TokenGrid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<T> v;  // size h*w*c, index (i*w + j)*c + ch

    TokenGrid() = default;
    TokenGrid(int h_, int w_, int c_, T fill = T(0))
        : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {
        if (h_ < 1 || w_ < 1 || c_ < 1) {
            throw std::invalid_argument("TokenGrid: dimensions must be >= 1");
        }
    }

    T& at(int i, int j, int ch) { return v[(static_cast<std::size_t>(i) * w + j) * c + ch]; }
    const T& at(int i, int j, int ch) const {
        return v[(static_cast<std::size_t>(i) * w + j) * c + ch];
    }

    int tokens() const { return h * w; }

    bool finite() const {
        for (const T& x : v) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    void validate() const {
        if (h < 1 || w < 1 || c < 1) {
            throw std::invalid_argument("TokenGrid: dimensions must be >= 1");
        }
        if (v.size() != static_cast<std::size_t>(h) * w * c) {
            throw std::invalid_argument("TokenGrid: value count does not match h*w*c");
        }
        if (!finite()) {
            throw std::invalid_argument("TokenGrid: non-finite value");
        }
    }
};

// Flat token sequence, count x channels, row-major.
template <typename T>
struct TokenSeq {
    int count = 0;
    int channels = 0;
    std::vector<T> v;  // size count*channels

    T& at(int t, int ch) { return v[static_cast<std::size_t>(t) * channels + ch]; }
    const T& at(int t, int ch) const { return v[static_cast<std::size_t>(t) * channels + ch]; }
};

// Strictly increasing token counts per scale, finest last.
struct ScaleSchedule {
    std::vector<int> sizes;

    int scales() const { return static_cast<int>(sizes.size()); }

    void validate() const {
        if (sizes.empty()) throw std::invalid_argument("ScaleSchedule: empty");
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (sizes[i] < 1) throw std::invalid_argument("ScaleSchedule: size < 1");
            if (i > 0 && sizes[i] <= sizes[i - 1]) {
                throw std::invalid_argument("ScaleSchedule: not strictly increasing");
            }
        }
    }

    int index_of(int size) const {
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (sizes[i] == size) return static_cast<int>(i);
        }
        return -1;
    }
};

template <typename T>
struct TokenPyramid {
    std::vector<TokenGrid<T>> scales;  // coarsest first
    ScaleSchedule schedule;
    int channels = 0;

    const TokenGrid<T>& finest() const { return scales.back(); }
    const TokenGrid<T>& coarsest() const { return scales.front(); }
};

// 2x2 mean pooling with stride 2. Both dims must be even.
template <typename T>
TokenGrid<T> pool_2x2(const TokenGrid<T>& g) {
    if (g.h % 2 != 0 || g.w % 2 != 0 || g.h < 2 || g.w < 2) {
        throw std::invalid_argument("pool_2x2: grid is " + std::to_string(g.h) + "x" +
                                    std::to_string(g.w) + ", both dims must be even and >= 2");
    }
    TokenGrid<T> out(g.h / 2, g.w / 2, g.c);
    for (int i = 0; i < out.h; ++i) {
        for (int j = 0; j < out.w; ++j) {
            for (int ch = 0; ch < g.c; ++ch) {
                T s = g.at(2 * i, 2 * j, ch) + g.at(2 * i, 2 * j + 1, ch) +
                      g.at(2 * i + 1, 2 * j, ch) + g.at(2 * i + 1, 2 * j + 1, ch);
                out.at(i, j, ch) = s / T(4);
            }
        }
    }
    return out;
}

// Collapses a 3x3 grid into the single most condensed token.
template <typename T>
TokenGrid<T> pool_3x3(const TokenGrid<T>& g) {
    if (g.h != 3 || g.w != 3) {
        throw std::invalid_argument("pool_3x3: grid is " + std::to_string(g.h) + "x" +
                                    std::to_string(g.w) + ", expected 3x3");
    }
    TokenGrid<T> out(1, 1, g.c);
    for (int ch = 0; ch < g.c; ++ch) {
        T s = T(0);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) s += g.at(i, j, ch);
        }
        out.at(0, 0, ch) = s / T(9);
    }
    return out;
}

// Cascade: halve while both dims are even and > 3; a 3x3 terminal collapses
// to one token. A stall on an odd dimension above 3 is rejected.
template <typename T>
TokenPyramid<T> build_pyramid(const TokenGrid<T>& grid) {
    grid.validate();
    std::vector<TokenGrid<T>> fine_to_coarse;
    fine_to_coarse.push_back(grid);
    while (true) {
        const TokenGrid<T>& cur = fine_to_coarse.back();
        if (cur.h % 2 == 0 && cur.w % 2 == 0 && cur.h > 3 && cur.w > 3) {
            fine_to_coarse.push_back(pool_2x2(cur));
            continue;
        }
        if (cur.h == 3 && cur.w == 3) {
            fine_to_coarse.push_back(pool_3x3(cur));
            break;
        }
        if (cur.h % 2 != 0 && cur.h > 3) {
            throw std::invalid_argument("build_pyramid: cascade stalls at odd dimension h=" +
                                        std::to_string(cur.h));
        }
        if (cur.w % 2 != 0 && cur.w > 3) {
            throw std::invalid_argument("build_pyramid: cascade stalls at odd dimension w=" +
                                        std::to_string(cur.w));
        }
        break;  // even shape at or below 3: smallest reachable grid, no 1-token scale
    }

    TokenPyramid<T> p;
    p.channels = grid.c;
    for (auto it = fine_to_coarse.rbegin(); it != fine_to_coarse.rend(); ++it) {
        p.schedule.sizes.push_back(it->tokens());
        p.scales.push_back(std::move(*it));
    }
    p.schedule.validate();
    return p;
}

// Row-major flattening, row 0 left-to-right first.
template <typename T>
TokenSeq<T> flatten(const TokenGrid<T>& g) {
    TokenSeq<T> s;
    s.count = g.tokens();
    s.channels = g.c;
    s.v = g.v;  // storage is already row-major, channel-minor
    return s;
}

// Uniform lattice selection: k = m*m tokens at center-of-cell indices.
template <typename T>
TokenGrid<T> spatial_sample(const TokenGrid<T>& g, int k) {
    int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k))));
    if (k < 1 || m * m != k) {
        throw std::invalid_argument("spatial_sample: k=" + std::to_string(k) +
                                    " is not a perfect square");
    }
    if (m > g.h || m > g.w) {
        throw std::invalid_argument("spatial_sample: lattice exceeds grid");
    }
    TokenGrid<T> out(m, m, g.c);
    for (int i = 0; i < m; ++i) {
        int si = static_cast<int>((2 * i + 1) * g.h / (2 * m));  // floor((i+0.5)*H/m)
        for (int j = 0; j < m; ++j) {
            int sj = static_cast<int>((2 * j + 1) * g.w / (2 * m));
            for (int ch = 0; ch < g.c; ++ch) out.at(i, j, ch) = g.at(si, sj, ch);
        }
    }
    return out;
}

// First k tokens of the row-major flattening.
template <typename T>
TokenSeq<T> sequential_sample(const TokenGrid<T>& g, int k) {
    if (k < 1 || k > g.tokens()) {
        throw std::invalid_argument("sequential_sample: k=" + std::to_string(k) +
                                    " out of range 1.." + std::to_string(g.tokens()));
    }
    TokenSeq<T> s;
    s.count = k;
    s.channels = g.c;
    s.v.assign(g.v.begin(), g.v.begin() + static_cast<std::size_t>(k) * g.c);
    return s;
}

// Training-free average pooling at inference time; identical computation to
// the pyramid scale of size k.
template <typename T>
TokenGrid<T> inference_pool(const TokenGrid<T>& g, int k) {
    TokenPyramid<T> p = build_pyramid(g);
    int idx = p.schedule.index_of(k);
    if (idx < 0) {
        throw std::invalid_argument("inference_pool: k=" + std::to_string(k) +
                                    " is not a schedule size");
    }
    return p.scales[static_cast<std::size_t>(idx)];
}

}  // namespace m3
