#pragma once

// Desk-scale base learner g_phi(f_theta(x)) and the sequence-aware assessor.

#include "agla/error.hpp"
#include "agla/ndmath.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace agla {

enum class IlMode { task_il, class_il };

inline const char* to_string(IlMode mode) { return mode == IlMode::task_il ? "task-il" : "class-il"; }

inline IlMode parse_il_mode(const std::string& s) {
    if (s == "task-il" || s == "task_il") return IlMode::task_il;
    if (s == "class-il" || s == "class_il") return IlMode::class_il;
    throw ParameterError("unknown incremental-learning mode '" + s + "'");
}

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Dense layer y = x W + b, W stored in x out.
struct Linear {
    Tensor weight;
    Tensor bias;

    Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <class Rng>
std::vector<double> uniform_fan_in(std::size_t count, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(count);
    for (double& x : v) x = dist(rng);
    return v;
}

template <class Rng>
Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    Tensor w({in, out}, uniform_fan_in(in * out, in, rng), true);
    Tensor b({1, out}, uniform_fan_in(out, in, rng), true);
    return {std::move(w), std::move(b)};
}

namespace detail {

inline Linear clone_linear(const Linear& l, bool requires_grad) {
    Tensor w = l.weight.detach();
    Tensor b = l.bias.detach();
    w.set_requires_grad(requires_grad);
    b.set_requires_grad(requires_grad);
    return {std::move(w), std::move(b)};
}

inline void fill_zero(Tensor& t) {
    for (double& v : t.mutable_data()) v = 0.0;
}

inline void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape())
        throw DimensionError("parameter '" + name + "' has shape " + shape_string(dst.shape()) + ", file has " +
                             shape_string(src.shape()));
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

}  // namespace detail

/// Two dense ReLU layers (feature extractor theta) followed by one classifier head
/// (class-IL) or one head per task (task-IL).
class BaseLearner {
public:
    BaseLearner(std::size_t input_dim, IlMode mode, std::uint64_t seed, std::size_t hidden_dim = 128,
                std::size_t feature_dim = 64)
        : mode_(mode), input_dim_(input_dim), feature_dim_(feature_dim), rng_(seed) {
        if (input_dim == 0 || hidden_dim == 0 || feature_dim == 0)
            throw ParameterError("base learner: layer widths must be positive");
        fc1_ = make_linear(input_dim, hidden_dim, rng_);
        fc2_ = make_linear(hidden_dim, feature_dim, rng_);
    }

    BaseLearner(const BaseLearner&) = delete;
    BaseLearner& operator=(const BaseLearner&) = delete;
    BaseLearner(BaseLearner&&) = default;
    BaseLearner& operator=(BaseLearner&&) = default;

    IlMode mode() const { return mode_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t feature_dim() const { return feature_dim_; }
    std::size_t head_count() const { return heads_.size(); }
    std::size_t head_width(std::size_t head) const { return heads_.at(head).weight.cols(); }

    /// Total output width over all heads.
    std::size_t output_width() const {
        std::size_t w = 0;
        for (const Linear& h : heads_) w += h.weight.cols();
        return w;
    }

    /// Column where `head` starts inside all_logits().
    std::size_t head_offset(std::size_t head) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < head && i < heads_.size(); ++i) off += heads_[i].weight.cols();
        return off;
    }

    Tensor features(const Tensor& x) const {
        if (x.cols() != input_dim_)
            throw DimensionError("base learner: input width " + std::to_string(x.cols()) + ", expected " +
                                 std::to_string(input_dim_));
        return relu(fc2_.forward(relu(fc1_.forward(x))));
    }

    Tensor head_logits(const Tensor& feats, std::size_t head) const {
        if (head >= heads_.size())
            throw ProtocolError("base learner: head " + std::to_string(head) + " does not exist");
        return heads_[head].forward(feats);
    }

    /// Logits of every head side by side; for class-IL this is the single head.
    Tensor all_logits(const Tensor& feats) const {
        if (heads_.empty()) throw ProtocolError("base learner: no classifier head yet");
        if (heads_.size() == 1) return heads_[0].forward(feats);
        std::vector<Tensor> parts;
        parts.reserve(heads_.size());
        for (const Linear& h : heads_) parts.push_back(h.forward(feats));
        return concat(parts, 1);
    }

    /// o = g_phi(f_theta(x)). task-IL requires the task id to pick the head; class-IL forbids it.
    Tensor forward(const Tensor& x, std::optional<std::size_t> task_id = std::nullopt) const {
        if (mode_ == IlMode::class_il && task_id)
            throw ModeError("base_forward: task id given in class-IL mode");
        if (mode_ == IlMode::task_il && !task_id) throw ModeError("base_forward: task id required in task-IL mode");
        const Tensor f = features(x);
        return mode_ == IlMode::class_il ? all_logits(f) : head_logits(f, *task_id);
    }

    /// class-IL widens the single head keeping existing columns bit-identical;
    /// task-IL appends a fresh head.
    void expand_head(std::size_t new_classes) {
        if (new_classes == 0) throw ParameterError("expand_head: new_classes must be >= 1");
        Linear fresh = make_linear(feature_dim_, new_classes, rng_);
        if (mode_ == IlMode::task_il || heads_.empty()) {
            heads_.push_back(std::move(fresh));
            return;
        }
        Linear& head = heads_.front();
        const std::size_t old = head.weight.cols(), width = old + new_classes;
        std::vector<double> w(feature_dim_ * width), b(width);
        for (std::size_t r = 0; r < feature_dim_; ++r) {
            for (std::size_t c = 0; c < old; ++c) w[r * width + c] = head.weight.at(r, c);
            for (std::size_t c = 0; c < new_classes; ++c) w[r * width + old + c] = fresh.weight.at(r, c);
        }
        for (std::size_t c = 0; c < old; ++c) b[c] = head.bias[c];
        for (std::size_t c = 0; c < new_classes; ++c) b[old + c] = fresh.bias[c];
        head.weight = Tensor({feature_dim_, width}, std::move(w), true);
        head.bias = Tensor({1, width}, std::move(b), true);
    }

    std::vector<Tensor> feature_parameters() const { return {fc1_.weight, fc1_.bias, fc2_.weight, fc2_.bias}; }

    std::vector<Tensor> classifier_parameters() const {
        std::vector<Tensor> out;
        for (const Linear& h : heads_) {
            out.push_back(h.weight);
            out.push_back(h.bias);
        }
        return out;
    }

    std::vector<Tensor> parameters() const {
        auto out = feature_parameters();
        for (Tensor& t : classifier_parameters()) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor& t : parameters()) n += t.size();
        return n;
    }

    NamedTensors named_parameters() const {
        NamedTensors out{{"fc1.weight", fc1_.weight},
                         {"fc1.bias", fc1_.bias},
                         {"fc2.weight", fc2_.weight},
                         {"fc2.bias", fc2_.bias}};
        for (std::size_t i = 0; i < heads_.size(); ++i) {
            out.emplace_back("head" + std::to_string(i) + ".weight", heads_[i].weight);
            out.emplace_back("head" + std::to_string(i) + ".bias", heads_[i].bias);
        }
        return out;
    }

    /// Restores values saved by named_parameters(). Heads are rebuilt from the stored shapes.
    void load_named(const NamedTensors& named) {
        auto find = [&](const std::string& name) -> const Tensor* {
            for (const auto& [n, t] : named)
                if (n == name) return &t;
            return nullptr;
        };
        for (auto& [name, dst] : named_parameters()) {
            if (name.rfind("head", 0) == 0) continue;
            const Tensor* src = find(name);
            if (!src) throw FormatError("missing parameter '" + name + "'", 0);
            detail::copy_into(dst, *src, name);
        }
        std::vector<Linear> heads;
        for (std::size_t i = 0;; ++i) {
            const Tensor* w = find("head" + std::to_string(i) + ".weight");
            const Tensor* b = find("head" + std::to_string(i) + ".bias");
            if (!w || !b) break;
            if (w->rows() != feature_dim_ || b->cols() != w->cols())
                throw DimensionError("head" + std::to_string(i) + " has incompatible shape");
            Tensor wc = w->detach(), bc = b->detach();
            wc.set_requires_grad(true);
            bc.set_requires_grad(true);
            heads.push_back({std::move(wc), std::move(bc)});
        }
        heads_ = std::move(heads);
    }

    void zero_parameters() {
        for (Tensor& t : parameters()) detail::fill_zero(t);
    }

    /// Deep copy; the copy's tensors require grad only if asked.
    BaseLearner clone(bool requires_grad) const {
        BaseLearner out(mode_, input_dim_, feature_dim_, rng_);
        out.fc1_ = detail::clone_linear(fc1_, requires_grad);
        out.fc2_ = detail::clone_linear(fc2_, requires_grad);
        for (const Linear& h : heads_) out.heads_.push_back(detail::clone_linear(h, requires_grad));
        return out;
    }

private:
    BaseLearner(IlMode mode, std::size_t input_dim, std::size_t feature_dim, std::mt19937_64 rng)
        : mode_(mode), input_dim_(input_dim), feature_dim_(feature_dim), rng_(rng) {}

    IlMode mode_;
    std::size_t input_dim_;
    std::size_t feature_dim_;
    std::mt19937_64 rng_;
    Linear fc1_;
    Linear fc2_;
    std::vector<Linear> heads_;
};

/// Frozen copy of a base learner, used for the previous-task logits h.
class ModelSnapshot {
public:
    explicit ModelSnapshot(const BaseLearner& model)
        : model_(std::make_shared<BaseLearner>(model.clone(false))) {}

    IlMode mode() const { return model_->mode(); }

    Tensor forward(const Tensor& x, std::optional<std::size_t> task_id = std::nullopt) const {
        NoGradGuard guard;
        return model_->forward(x, task_id);
    }

    Tensor features(const Tensor& x) const {
        NoGradGuard guard;
        return model_->features(x);
    }

    std::size_t parameter_count() const { return model_->parameter_count(); }
    std::vector<Tensor> parameters() const { return model_->parameters(); }
    const BaseLearner& model() const { return *model_; }

private:
    std::shared_ptr<const BaseLearner> model_;
};

inline ModelSnapshot snapshot(const BaseLearner& model) { return ModelSnapshot(model); }

/// Per-layer LSTM hidden and cell state, each 1 x hidden.
struct AssessorState {
    std::vector<Tensor> hidden;
    std::vector<Tensor> cell;
};

/// kappa_psi: dense feature layer, stacked LSTM cells threaded through the samples of
/// a batch in order, and a dense 3-unit sigmoid output (alpha, beta, gamma).
class Assessor {
public:
    struct Output {
        Tensor weights;  // rows x 3, columns alpha, beta, gamma
        AssessorState state;
    };

    Assessor(std::size_t input_dim, std::uint64_t seed, std::size_t lstm_layers = 1, std::size_t hidden = 64,
             std::size_t feature_dim = 64)
        : input_dim_(input_dim), hidden_(hidden) {
        if (input_dim == 0 || hidden == 0 || feature_dim == 0 || lstm_layers == 0)
            throw ParameterError("assessor: widths and layer count must be positive");
        std::mt19937_64 rng(seed);
        feature_ = make_linear(input_dim, feature_dim, rng);
        std::size_t in = feature_dim;
        for (std::size_t l = 0; l < lstm_layers; ++l) {
            Lstm cell;
            cell.input = make_linear(in, 4 * hidden, rng);
            cell.recurrent = Tensor({hidden, 4 * hidden}, uniform_fan_in(hidden * 4 * hidden, hidden, rng), true);
            auto b = cell.input.bias.mutable_data();
            for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
            lstm_.push_back(std::move(cell));
            in = hidden;
        }
        out_ = make_linear(hidden, 3, rng);
    }

    Assessor(const Assessor&) = delete;
    Assessor& operator=(const Assessor&) = delete;
    Assessor(Assessor&&) = default;
    Assessor& operator=(Assessor&&) = default;

    std::size_t hidden_width() const { return hidden_; }
    std::size_t layer_count() const { return lstm_.size(); }

    AssessorState initial_state() const {
        AssessorState s;
        for (std::size_t l = 0; l < lstm_.size(); ++l) {
            s.hidden.push_back(Tensor::zeros({1, hidden_}));
            s.cell.push_back(Tensor::zeros({1, hidden_}));
        }
        return s;
    }

    /// Weights for each row of x, processing rows as one sequence starting from `state`.
    Output forward(const Tensor& x, const AssessorState& state) const {
        if (x.cols() != input_dim_)
            throw DimensionError("assessor: input width " + std::to_string(x.cols()) + ", expected " +
                                 std::to_string(input_dim_));
        if (state.hidden.size() != lstm_.size() || state.cell.size() != lstm_.size())
            throw DimensionError("assessor: state has wrong layer count");
        for (std::size_t l = 0; l < lstm_.size(); ++l) {
            if (state.hidden[l].cols() != hidden_ || state.cell[l].cols() != hidden_)
                throw DimensionError("assessor: state width must be " + std::to_string(hidden_));
            if (!all_finite(state.hidden[l]) || !all_finite(state.cell[l]))
                throw NumericError("assessor: non-finite recurrent state");
        }
        const std::size_t steps = x.rows();
        const std::size_t H = hidden_;
        Tensor seq = relu(feature_.forward(x));
        AssessorState next;
        for (std::size_t l = 0; l < lstm_.size(); ++l) {
            const Lstm& cell = lstm_[l];
            const Tensor pre = cell.input.forward(seq);
            Tensor h = state.hidden[l];
            Tensor c = state.cell[l];
            std::vector<Tensor> outputs;
            outputs.reserve(steps);
            for (std::size_t t = 0; t < steps; ++t) {
                const Tensor gates = add(slice(pre, t, t + 1, 0, 4 * H), matmul(h, cell.recurrent));
                const Tensor in_gate = sigmoid(slice(gates, 0, 1, 0, H));
                const Tensor forget_gate = sigmoid(slice(gates, 0, 1, H, 2 * H));
                const Tensor candidate = tanh(slice(gates, 0, 1, 2 * H, 3 * H));
                const Tensor out_gate = sigmoid(slice(gates, 0, 1, 3 * H, 4 * H));
                c = add(mul(forget_gate, c), mul(in_gate, candidate));
                h = mul(out_gate, tanh(c));
                outputs.push_back(h);
            }
            next.hidden.push_back(h);
            next.cell.push_back(c);
            seq = steps == 1 ? outputs.front() : concat(outputs, 0);
        }
        for (std::size_t l = 0; l < lstm_.size(); ++l)
            if (!all_finite(next.hidden[l]) || !all_finite(next.cell[l]))
                throw NumericError("assessor: recurrent state became non-finite");
        return {sigmoid(out_.forward(seq)), std::move(next)};
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out{feature_.weight, feature_.bias};
        for (const Lstm& c : lstm_) {
            out.push_back(c.input.weight);
            out.push_back(c.input.bias);
            out.push_back(c.recurrent);
        }
        out.push_back(out_.weight);
        out.push_back(out_.bias);
        return out;
    }

    NamedTensors named_parameters() const {
        NamedTensors out{{"assessor.fc.weight", feature_.weight}, {"assessor.fc.bias", feature_.bias}};
        for (std::size_t l = 0; l < lstm_.size(); ++l) {
            const std::string p = "assessor.lstm" + std::to_string(l);
            out.emplace_back(p + ".w_ih", lstm_[l].input.weight);
            out.emplace_back(p + ".b", lstm_[l].input.bias);
            out.emplace_back(p + ".w_hh", lstm_[l].recurrent);
        }
        out.emplace_back("assessor.out.weight", out_.weight);
        out.emplace_back("assessor.out.bias", out_.bias);
        return out;
    }

    void load_named(const NamedTensors& named) {
        for (auto& [name, dst] : named_parameters()) {
            const Tensor* src = nullptr;
            for (const auto& [n, t] : named)
                if (n == name) src = &t;
            if (!src) throw FormatError("missing parameter '" + name + "'", 0);
            detail::copy_into(dst, *src, name);
        }
    }

    void zero_parameters() {
        for (Tensor& t : parameters()) detail::fill_zero(t);
    }

private:
    struct Lstm {
        Linear input;  // gate pre-activations i, f, g, o (forget bias starts at +1)
        Tensor recurrent;
    };

    std::size_t input_dim_;
    std::size_t hidden_;
    Linear feature_;
    std::vector<Lstm> lstm_;
    Linear out_;
};

}  // namespace agla
