#pragma once

// Reference computations written with plain loops, independent of the tape.

#include "agla/nets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from dividing by zero.
inline double rel_err(double a, double n, double floor = 1e-3) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences of f at x with step h.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (double& x : v) x = u(rng);
    return v;
}

/// Row-major (rows x cols) dense matrix view over a flat vector.
struct Dense {
    std::size_t rows = 0, cols = 0;
    Vec v;
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline Dense dense_of(const agla::Tensor& t) { return {t.rows(), t.cols(), Vec(t.data().begin(), t.data().end())}; }

/// y = x W + b for each row of x.
inline Mat affine(const Mat& x, const Dense& w, const Dense& b) {
    Mat y(x.size(), Vec(w.cols, 0.0));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t j = 0; j < w.cols; ++j) {
            double s = b(0, j);
            for (std::size_t i = 0; i < w.rows; ++i) s += x[r][i] * w(i, j);
            y[r][j] = s;
        }
    return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Named parameters as flat vectors, for perturbation by the finite-difference loop.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::vector<Vec> values;

    static ParamSet from(const agla::NamedTensors& named) {
        ParamSet p;
        for (const auto& [n, t] : named) {
            p.names.push_back(n);
            p.shapes.emplace_back(t.rows(), t.cols());
            p.values.emplace_back(t.data().begin(), t.data().end());
        }
        return p;
    }

    Dense get(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return {shapes[i].first, shapes[i].second, values[i]};
        throw std::runtime_error("oracle: no parameter " + name);
    }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }

    double& flat(std::size_t k) {
        for (auto& v : values) {
            if (k < v.size()) return v[k];
            k -= v.size();
        }
        throw std::out_of_range("oracle: flat index");
    }
};

/// Pre-activation signs of every ReLU; a change inside the stencil means a kink was crossed.
using Pattern = std::vector<bool>;

/// Base learner logits (all heads side by side) plus the ReLU pattern.
inline Mat base_forward(const ParamSet& p, const Mat& x, Pattern* pattern = nullptr) {
    Mat h1 = affine(x, p.get("fc1.weight"), p.get("fc1.bias"));
    for (auto& r : h1)
        for (double& v : r) {
            if (pattern) pattern->push_back(v > 0);
            v = std::max(v, 0.0);
        }
    Mat h2 = affine(h1, p.get("fc2.weight"), p.get("fc2.bias"));
    for (auto& r : h2)
        for (double& v : r) {
            if (pattern) pattern->push_back(v > 0);
            v = std::max(v, 0.0);
        }
    Mat out(x.size());
    for (std::size_t head = 0;; ++head) {
        const std::string w = "head" + std::to_string(head) + ".weight";
        if (std::find(p.names.begin(), p.names.end(), w) == p.names.end()) break;
        const Mat o = affine(h2, p.get(w), p.get("head" + std::to_string(head) + ".bias"));
        for (std::size_t r = 0; r < x.size(); ++r) out[r].insert(out[r].end(), o[r].begin(), o[r].end());
    }
    return out;
}

/// Assessor weights (rows x 3) for rows processed as one sequence from a zero state.
inline Mat assessor_forward(const ParamSet& p, const Mat& x, std::size_t layers, Pattern* pattern = nullptr) {
    Mat seq = affine(x, p.get("assessor.fc.weight"), p.get("assessor.fc.bias"));
    for (auto& r : seq)
        for (double& v : r) {
            if (pattern) pattern->push_back(v > 0);
            v = std::max(v, 0.0);
        }
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string pre = "assessor.lstm" + std::to_string(l);
        const Dense wih = p.get(pre + ".w_ih"), b = p.get(pre + ".b"), whh = p.get(pre + ".w_hh");
        const std::size_t H = whh.rows;
        Vec h(H, 0.0), c(H, 0.0);
        Mat out;
        for (const Vec& xt : seq) {
            Vec g(4 * H);
            for (std::size_t j = 0; j < 4 * H; ++j) {
                double s = b(0, j);
                for (std::size_t i = 0; i < wih.rows; ++i) s += xt[i] * wih(i, j);
                for (std::size_t i = 0; i < H; ++i) s += h[i] * whh(i, j);
                g[j] = s;
            }
            for (std::size_t j = 0; j < H; ++j) {
                const double in = sigmoid(g[j]), f = sigmoid(g[H + j]), cand = std::tanh(g[2 * H + j]),
                             o = sigmoid(g[3 * H + j]);
                c[j] = f * c[j] + in * cand;
                h[j] = o * std::tanh(c[j]);
            }
            out.push_back(h);
        }
        seq = out;
    }
    Mat w = affine(seq, p.get("assessor.out.weight"), p.get("assessor.out.bias"));
    for (auto& r : w)
        for (double& v : r) v = sigmoid(v);
    return w;
}

inline double logsumexp(const Vec& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

inline double ce(const Vec& logits, std::size_t label) { return logsumexp(logits) - logits[label]; }

inline double mse(const Vec& o, const Vec& h) {
    double s = 0;
    for (std::size_t j = 0; j < h.size(); ++j) s += (o[j] - h[j]) * (o[j] - h[j]);
    return s / static_cast<double>(h.size());
}

/// Cross entropy between softmax(h/T) and softmax(o/T) over the first |h| columns.
inline double distill(const Vec& o, const Vec& h, double T) {
    Vec os(h.size()), hs(h.size());
    for (std::size_t j = 0; j < h.size(); ++j) {
        os[j] = o[j] / T;
        hs[j] = h[j] / T;
    }
    const double lo = logsumexp(os), lh = logsumexp(hs);
    double s = 0;
    for (std::size_t j = 0; j < h.size(); ++j) s -= std::exp(hs[j] - lh) * (os[j] - lo);
    return s;
}

struct Row {
    std::size_t offset = 0, width = 0, target = 0;
    bool memory = false;
    Vec stored;
    double cos = 1.0;
};

/// (1/n) sum_r cos_r * (alpha CE + memory * (k beta (MSE + CE) + k gamma distill)), memory
/// terms only from the second task on.
inline double combined(const Mat& logits, const std::vector<Row>& rows, const Mat& meta, int k, double T,
                       bool der = true, bool dist = true) {
    double total = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Row& row = rows[r];
        const Vec window(logits[r].begin() + row.offset, logits[r].begin() + row.offset + row.width);
        const double c = ce(window, row.target);
        double l = meta[r][0] * c;
        if (k >= 2 && row.memory) {
            if (der) l += k * meta[r][1] * (mse(window, row.stored) + c);
            if (dist) l += k * meta[r][2] * distill(window, row.stored, T);
        }
        total += row.cos * l;
    }
    return total / static_cast<double>(rows.size());
}

inline Mat to_mat(const agla::Tensor& t) {
    Mat m(t.rows(), Vec(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

inline agla::Tensor to_tensor(const Mat& m, bool requires_grad = false) {
    Vec flat;
    for (const Vec& r : m) flat.insert(flat.end(), r.begin(), r.end());
    return agla::Tensor({m.size(), m.front().size()}, flat, requires_grad);
}

}  // namespace oracle

#include "agla/memory.hpp"

#include <boost/math/distributions/chi_squared.hpp>

namespace oracle {

/// Pearson goodness-of-fit of per-item inclusion counts against the uniform
/// capacity/stream rate, over independent reservoir runs.
struct ChiSquare {
    double statistic = 0;
    double p_value = 0;
    std::vector<double> frequency;
};

inline ChiSquare reservoir_uniformity(std::size_t capacity, std::size_t stream, std::size_t trials, std::uint64_t seed) {
    std::vector<double> counts(stream, 0.0);
    agla::Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        agla::ReservoirBuffer buf(capacity);
        for (std::size_t i = 0; i < stream; ++i) buf.insert(agla::MemoryEntry{{}, 0, {}, 0, i, 0}, rng);
        for (const auto& e : buf.entries(0)) counts[e.origin] += 1;
    }
    ChiSquare out;
    const double expected = static_cast<double>(trials * capacity) / static_cast<double>(stream);
    for (double c : counts) {
        out.statistic += (c - expected) * (c - expected) / expected;
        out.frequency.push_back(c / static_cast<double>(trials));
    }
    boost::math::chi_squared dist(static_cast<double>(stream - 1));
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
    return out;
}

}  // namespace oracle
