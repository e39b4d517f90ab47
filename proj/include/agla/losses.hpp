#pragma once

// Cross-entropy, DER++ logit matching, temperature distillation, and their
// meta-weighted combination with the lambda = k*beta, pi = k*gamma schedule.

#include "agla/error.hpp"
#include "agla/ndmath.hpp"

#include <cmath>
#include <iostream>
#include <mutex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agla {

/// Per-sample assessor output. alpha weights CE, beta and gamma are scaled by the
/// task index into the DER and distillation weights.
struct MetaWeights {
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 0.5;
};

/// lambda = k*beta for k >= 2, zero on the first task.
inline double der_weight(int task_index, double beta) { return task_index >= 2 ? task_index * beta : 0.0; }

/// pi = k*gamma for k >= 2, zero on the first task.
inline double distill_weight(int task_index, double gamma) { return task_index >= 2 ? task_index * gamma : 0.0; }

namespace detail {

inline void warn_once(const std::string& key, const std::string& message) {
    static std::mutex mu;
    static std::set<std::string> seen;
    std::lock_guard lock(mu);
    if (seen.insert(key).second) std::clog << "[agla] warning: " << message << '\n';
}

inline std::size_t& memory_term_counter() {
    thread_local std::size_t count = 0;
    return count;
}

}  // namespace detail

/// Number of combined-loss evaluations on this thread that built the DER or distillation terms.
inline std::size_t memory_term_evaluations() { return detail::memory_term_counter(); }

/// Columns [offset, offset + width) of a logit row that form one sample's classifier head.
struct LogitWindow {
    std::size_t offset = 0;
    std::size_t width = 0;
};

/// Per-row -log softmax(o[window])[target]; returns rows x 1.
inline Tensor window_cross_entropy(const Tensor& logits, std::span<const LogitWindow> windows,
                                   std::span<const std::size_t> targets) {
    const std::size_t rows = logits.rows(), cols = logits.cols();
    if (windows.size() != rows || targets.size() != rows)
        throw DimensionError("cross entropy: " + std::to_string(rows) + " logit rows but " +
                             std::to_string(windows.size()) + " windows / " + std::to_string(targets.size()) +
                             " labels");
    for (std::size_t r = 0; r < rows; ++r) {
        if (windows[r].width == 0 || windows[r].offset + windows[r].width > cols)
            throw DimensionError("cross entropy: window outside logit row of width " + std::to_string(cols));
        if (targets[r] >= windows[r].width)
            throw std::out_of_range("cross entropy: label " + std::to_string(targets[r]) + " outside [0," +
                                    std::to_string(windows[r].width) + ")");
    }
    std::vector<double> out(rows);
    std::vector<std::vector<double>> logp(rows);
    const auto o = logits.data();
    for (std::size_t r = 0; r < rows; ++r) {
        logp[r].resize(windows[r].width);
        detail::log_softmax_row(o.subspan(r * cols + windows[r].offset, windows[r].width), logp[r]);
        out[r] = -logp[r][targets[r]];
    }
    std::vector<LogitWindow> win(windows.begin(), windows.end());
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return Tensor::make_result(
        {rows, 1}, std::move(out), OpKind::custom, {logits},
        [win = std::move(win), tgt = std::move(tgt), logp = std::move(logp), cols](detail::Node& self) {
            auto* ga = detail::parent_grad(self, 0);
            if (!ga) return;
            for (std::size_t r = 0; r < win.size(); ++r) {
                const double g = self.grad[r];
                for (std::size_t j = 0; j < win[r].width; ++j)
                    (*ga)[r * cols + win[r].offset + j] += g * (std::exp(logp[r][j]) - (j == tgt[r] ? 1.0 : 0.0));
            }
        });
}

/// Per-row mean((o[offset : offset+|h|] - h)^2); rows with empty h give 0.
inline Tensor window_mse(const Tensor& logits, std::span<const std::size_t> offsets,
                         std::span<const std::vector<double>> targets) {
    const std::size_t rows = logits.rows(), cols = logits.cols();
    if (offsets.size() != rows || targets.size() != rows)
        throw DimensionError("logit mse: row count mismatch");
    for (std::size_t r = 0; r < rows; ++r)
        if (offsets[r] + targets[r].size() > cols)
            throw DimensionError("logit mse: stored logits of width " + std::to_string(targets[r].size()) +
                                 " exceed the current head");
    std::vector<double> out(rows, 0.0);
    const auto o = logits.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& h = targets[r];
        if (h.empty()) continue;
        double s = 0;
        for (std::size_t j = 0; j < h.size(); ++j) {
            const double d = o[r * cols + offsets[r] + j] - h[j];
            s += d * d;
        }
        out[r] = s / static_cast<double>(h.size());
    }
    std::vector<std::size_t> off(offsets.begin(), offsets.end());
    std::vector<std::vector<double>> tg(targets.begin(), targets.end());
    return Tensor::make_result({rows, 1}, std::move(out), OpKind::custom, {logits},
                               [off = std::move(off), tg = std::move(tg), cols](detail::Node& self) {
                                   auto* ga = detail::parent_grad(self, 0);
                                   if (!ga) return;
                                   const auto& o = self.parents[0]->data;
                                   for (std::size_t r = 0; r < tg.size(); ++r) {
                                       const auto& h = tg[r];
                                       if (h.empty()) continue;
                                       const double k = 2.0 * self.grad[r] / static_cast<double>(h.size());
                                       for (std::size_t j = 0; j < h.size(); ++j) {
                                           const std::size_t idx = r * cols + off[r] + j;
                                           (*ga)[idx] += k * (o[idx] - h[j]);
                                       }
                                   }
                               });
}

/// Per-row -sum_c softmax(h/T)_c log softmax(o[offset : offset+|h|]/T)_c; rows with empty h give 0.
inline Tensor window_distill(const Tensor& logits, std::span<const std::size_t> offsets,
                             std::span<const std::vector<double>> targets, double temperature) {
    if (!(temperature > 0)) throw ParameterError("distillation temperature must be positive");
    const std::size_t rows = logits.rows(), cols = logits.cols();
    if (offsets.size() != rows || targets.size() != rows)
        throw DimensionError("distillation: row count mismatch");
    for (std::size_t r = 0; r < rows; ++r)
        if (offsets[r] + targets[r].size() > cols)
            throw DimensionError("distillation: stored logits of width " + std::to_string(targets[r].size()) +
                                 " exceed the current head");
    std::vector<double> out(rows, 0.0);
    std::vector<std::vector<double>> p(rows), q(rows);  // target probs, current softmax
    const auto o = logits.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& h = targets[r];
        if (h.empty()) continue;
        const std::size_t w = h.size();
        std::vector<double> hs(w), os(w), lp(w), lq(w);
        for (std::size_t j = 0; j < w; ++j) {
            hs[j] = h[j] / temperature;
            os[j] = o[r * cols + offsets[r] + j] / temperature;
        }
        detail::log_softmax_row(hs, lp);
        detail::log_softmax_row(os, lq);
        p[r].resize(w);
        q[r].resize(w);
        double s = 0;
        for (std::size_t j = 0; j < w; ++j) {
            p[r][j] = std::exp(lp[j]);
            q[r][j] = std::exp(lq[j]);
            s -= p[r][j] * lq[j];
        }
        out[r] = s;
    }
    std::vector<std::size_t> off(offsets.begin(), offsets.end());
    return Tensor::make_result(
        {rows, 1}, std::move(out), OpKind::custom, {logits},
        [off = std::move(off), p = std::move(p), q = std::move(q), cols, temperature](detail::Node& self) {
            auto* ga = detail::parent_grad(self, 0);
            if (!ga) return;
            for (std::size_t r = 0; r < p.size(); ++r) {
                const double g = self.grad[r] / temperature;
                for (std::size_t j = 0; j < p[r].size(); ++j) (*ga)[r * cols + off[r] + j] += g * (q[r][j] - p[r][j]);
            }
        });
}

namespace detail {

inline Tensor as_row(const Tensor& t) {
    if (t.rank() == 2 && t.rows() == 1) return t;
    if (t.rank() == 1) return concat({t}, 0);
    throw DimensionError("expected a single logit row, got shape " + shape_string(t.shape()));
}

inline std::vector<double> checked_stored(const Tensor& o, const Tensor& h, const char* op) {
    if (h.size() > o.size())
        throw DimensionError(std::string(op) + ": stored logits wider (" + std::to_string(h.size()) +
                             ") than current logits (" + std::to_string(o.size()) + ")");
    if (h.size() < o.size())
        warn_once(std::string(op) + ":width",
                  std::string(op) + ": current logits wider than stored logits; comparing the first " +
                      std::to_string(h.size()) + " columns");
    return {h.data().begin(), h.data().end()};
}

}  // namespace detail

/// -log softmax(logits)[label] for one logit row.
inline Tensor ce_loss(const Tensor& logits, std::size_t label) {
    const Tensor row = detail::as_row(logits);
    const LogitWindow w{0, row.cols()};
    return sum(window_cross_entropy(row, std::span(&w, 1), std::span(&label, 1)));
}

/// mean((o - h)^2) + ce(o, label). When o is wider than h (head grew since h was
/// stored) only the first width(h) logits enter the squared term.
inline Tensor der_loss(const Tensor& o, const Tensor& h, std::size_t label) {
    const Tensor row = detail::as_row(o);
    const std::vector<std::vector<double>> stored{detail::checked_stored(row, h, "der_loss")};
    const std::size_t offset = 0;
    const Tensor mse = window_mse(row, std::span(&offset, 1), stored);
    return add(sum(mse), ce_loss(row, label));
}

/// Cross-entropy of softmax(o/T) against softmax(h/T).
inline Tensor distill_loss(const Tensor& o, const Tensor& h, double temperature) {
    if (!(temperature > 0)) throw ParameterError("distill_loss: temperature must be positive");
    const Tensor row = detail::as_row(o);
    const std::vector<std::vector<double>> stored{detail::checked_stored(row, h, "distill_loss")};
    const std::size_t offset = 0;
    return sum(window_distill(row, std::span(&offset, 1), stored, temperature));
}

/// One sample of a combined-loss batch.
struct LossRow {
    LogitWindow window;        // head columns used for CE
    std::size_t target = 0;    // label index inside the window
    bool memory = false;       // drawn from the (augmented) memory
    std::vector<double> stored_logits;  // h, compared against the first |h| columns of the window
    double cos_factor = 1.0;   // COS scaling of the whole contribution; 1 for non-augmented rows
};

/// Which terms enter the combination.
struct LossTerms {
    bool der = true;
    bool distill = true;
    double temperature = 2.0;
};

/// Mean over rows of
///   cos_factor * (alpha*CE + memory*(lambda*(MSE + CE) + pi*distill)),
/// lambda = k*beta, pi = k*gamma (zero at k = 1). `meta` is rows x 3 (alpha, beta, gamma)
/// and may carry a gradient path back to the assessor.
inline Tensor combined_loss(const Tensor& logits, std::span<const LossRow> rows, const Tensor& meta, int task_index,
                            const LossTerms& terms = {}) {
    if (task_index < 1) throw ParameterError("combined_loss: task index must be >= 1");
    const std::size_t n = rows.size();
    if (n == 0) throw ParameterError("combined_loss: empty batch");
    if (logits.rows() != n) throw DimensionError("combined_loss: logits rows do not match batch size");
    if (meta.rows() != n || meta.cols() != 3) throw DimensionError("combined_loss: meta weights must be rows x 3");

    std::vector<LogitWindow> windows(n);
    std::vector<std::size_t> targets(n);
    bool any_memory = false, any_cos = false;
    for (std::size_t r = 0; r < n; ++r) {
        windows[r] = rows[r].window;
        targets[r] = rows[r].target;
        any_memory = any_memory || rows[r].memory;
        any_cos = any_cos || rows[r].cos_factor != 1.0;
    }
    const Tensor ce = window_cross_entropy(logits, windows, targets);
    Tensor per_row = mul(slice(meta, 0, n, 0, 1), ce);

    if (task_index >= 2 && any_memory && (terms.der || terms.distill)) {
        ++detail::memory_term_counter();
        std::vector<double> mask(n);
        std::vector<std::size_t> offsets(n);
        std::vector<std::vector<double>> stored(n);
        for (std::size_t r = 0; r < n; ++r) {
            mask[r] = rows[r].memory ? 1.0 : 0.0;
            offsets[r] = rows[r].window.offset;
            if (rows[r].memory) {
                if (rows[r].stored_logits.empty())
                    throw ContractError("combined_loss: memory row without stored logits");
                if (rows[r].stored_logits.size() > rows[r].window.width)
                    throw DimensionError("combined_loss: stored logits wider than the row's head");
                if (rows[r].stored_logits.size() < rows[r].window.width)
                    detail::warn_once("stored-logit-width",
                                      "stored logits narrower than the current head; memory terms use the first " +
                                          std::to_string(rows[r].stored_logits.size()) + " columns");
                stored[r] = rows[r].stored_logits;
            }
        }
        const Tensor memory_mask({n, 1}, std::move(mask));
        const double k = static_cast<double>(task_index);
        if (terms.der) {
            const Tensor lambda = scale(slice(meta, 0, n, 1, 2), k);
            const Tensor der = add(window_mse(logits, offsets, stored), ce);
            per_row = add(per_row, mul(mul(lambda, memory_mask), der));
        }
        if (terms.distill) {
            const Tensor pi = scale(slice(meta, 0, n, 2, 3), k);
            const Tensor dist = window_distill(logits, offsets, stored, terms.temperature);
            per_row = add(per_row, mul(mul(pi, memory_mask), dist));
        }
    }
    if (any_cos) {
        std::vector<double> factors(n);
        for (std::size_t r = 0; r < n; ++r) factors[r] = rows[r].cos_factor;
        per_row = mul(per_row, Tensor({n, 1}, std::move(factors)));
    }
    return scale(sum(per_row), 1.0 / static_cast<double>(n));
}

/// Constant meta-weight matrix (every row the same weights).
inline Tensor constant_meta(std::size_t rows, const MetaWeights& w) {
    std::vector<double> v(rows * 3);
    for (std::size_t r = 0; r < rows; ++r) {
        v[r * 3] = w.alpha;
        v[r * 3 + 1] = w.beta;
        v[r * 3 + 2] = w.gamma;
    }
    return Tensor({rows, 3}, std::move(v));
}

}  // namespace agla
