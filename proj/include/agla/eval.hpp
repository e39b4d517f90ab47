#pragma once

#include "agla/dataset.hpp"
#include "agla/error.hpp"
#include "agla/nets.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace agla {

/// a[k][j]: accuracy on task j after finishing task k (0-based, j <= k).
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

    std::size_t tasks() const { return tasks_; }

    void set(std::size_t k, std::size_t j, double accuracy) {
        check_cell(k, j);
        if (!(accuracy >= 0.0 && accuracy <= 1.0))
            throw ParameterError("accuracy must lie in [0,1], got " + std::to_string(accuracy));
        cells_[k * tasks_ + j] = accuracy;
    }

    bool defined(std::size_t k, std::size_t j) const {
        return k < tasks_ && j <= k && cells_[k * tasks_ + j].has_value();
    }

    double at(std::size_t k, std::size_t j) const {
        check_cell(k, j);
        const auto& v = cells_[k * tasks_ + j];
        if (!v) throw ProtocolError("accuracy cell (" + std::to_string(k) + "," + std::to_string(j) + ") is undefined");
        return *v;
    }

    bool row_complete(std::size_t k) const {
        for (std::size_t j = 0; j <= k; ++j)
            if (!defined(k, j)) return false;
        return true;
    }

private:
    void check_cell(std::size_t k, std::size_t j) const {
        if (k >= tasks_ || j > k)
            throw std::out_of_range("accuracy cell (" + std::to_string(k) + "," + std::to_string(j) +
                                    ") outside the lower triangle of a " + std::to_string(tasks_) + "-task matrix");
    }

    std::size_t tasks_ = 0;
    std::vector<std::optional<double>> cells_;
};

/// (1/K) sum_j a[K][j] over the final row.
inline double average_accuracy(const AccuracyMatrix& m) {
    if (m.tasks() == 0) throw ProtocolError("average_accuracy: empty matrix");
    const std::size_t last = m.tasks() - 1;
    if (!m.row_complete(last)) throw ProtocolError("average_accuracy: final row incomplete");
    double s = 0;
    for (std::size_t j = 0; j <= last; ++j) s += m.at(last, j);
    return s / static_cast<double>(m.tasks());
}

struct ForgettingResult {
    double value = 0;
    bool degenerate = false;  // fewer than two tasks, or no accuracy history before the final row
};

/// Mean over tasks j < K of (peak accuracy on j over rows j..K) - a[K][j]. Tasks with no
/// recorded history before the final row are skipped.
inline ForgettingResult average_forgetting(const AccuracyMatrix& m) {
    if (m.tasks() < 2) return {0.0, true};
    const std::size_t last = m.tasks() - 1;
    if (!m.row_complete(last)) throw ProtocolError("average_forgetting: final row incomplete");
    double total = 0;
    std::size_t counted = 0;
    for (std::size_t j = 0; j < last; ++j) {
        bool history = false;
        double peak = m.at(last, j);
        for (std::size_t l = j; l < last; ++l)
            if (m.defined(l, j)) {
                history = true;
                peak = std::max(peak, m.at(l, j));
            }
        if (!history) continue;
        total += peak - m.at(last, j);
        ++counted;
    }
    if (counted == 0) return {0.0, true};
    return {total / static_cast<double>(counted), false};
}

/// Column of the largest entry in each row; ties go to the lowest column.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t rows = logits.rows(), cols = logits.cols();
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

/// Fraction of a task's test samples classified correctly. class-IL takes the argmax over
/// every seen class; task-IL the argmax inside the task's own head.
template <class Model>
double evaluate(const Model& model, const Task& task, IlMode mode, std::size_t chunk = 512) {
    if (task.test.empty()) throw ProtocolError("evaluate: task " + std::to_string(task.index) + " has no test samples");
    NoGradGuard guard;
    const std::size_t d = task.test.front().x.size();
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < task.test.size(); begin += chunk) {
        const std::size_t end = std::min(task.test.size(), begin + chunk);
        std::vector<double> xs;
        xs.reserve((end - begin) * d);
        for (std::size_t i = begin; i < end; ++i) xs.insert(xs.end(), task.test[i].x.begin(), task.test[i].x.end());
        const Tensor x({end - begin, d}, std::move(xs));
        const Tensor logits = mode == IlMode::class_il ? model.forward(x, std::nullopt) : model.forward(x, task.index);
        const std::size_t offset = mode == IlMode::class_il ? 0 : task.first_class();
        const std::size_t needed = mode == IlMode::class_il ? task.first_class() + task.classes.size()
                                                             : task.classes.size();
        if (logits.cols() < needed)
            throw ProtocolError("evaluate: model has not seen the classes of task " + std::to_string(task.index));
        const auto pred = argmax_rows(logits);
        for (std::size_t i = begin; i < end; ++i)
            if (pred[i - begin] + offset == task.test[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(task.test.size());
}

}  // namespace agla
