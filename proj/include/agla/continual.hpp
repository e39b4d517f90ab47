#pragma once

// Task protocol and training engine: memory augmentation, random-transform
// validation sets, alternating assessor / base-learner updates per mini-batch,
// reservoir updates at task boundaries, and the finetune / joint / replay baselines.

#include "agla/cos.hpp"
#include "agla/dataset.hpp"
#include "agla/error.hpp"
#include "agla/eval.hpp"
#include "agla/losses.hpp"
#include "agla/memory.hpp"
#include "agla/nets.hpp"
#include "agla/transforms.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace agla {

enum class Method { agla, finetune, joint, replay_der };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::agla: return "agla";
        case Method::finetune: return "finetune";
        case Method::joint: return "joint";
        case Method::replay_der: return "replay_der";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "agla") return Method::agla;
    if (s == "finetune") return Method::finetune;
    if (s == "joint") return Method::joint;
    if (s == "replay_der") return Method::replay_der;
    throw ParameterError("unknown method '" + s + "'");
}

/// Component switches; each `false` reproduces one ablation configuration.
struct Toggles {
    bool assessor = true;          // A: constants alpha=1, beta=gamma=0.5 instead of the assessor
    bool augment = true;           // B: no memory over-sampling
    bool random_transform = true;  // C: validation set = training set
    bool cos_weights = true;       // D: uniform weights on augmented copies
    bool der_loss = true;          // E: drop the DER++ term
    bool distill_loss = true;      // F: drop the distillation term
};

struct TrainConfig {
    std::size_t epochs = 8;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0002;
    double assessor_lr = 0.0001;
    double assessor_momentum = 0.0;
    std::size_t batch_size = 100;
    std::size_t memory_per_class = 50;
    std::size_t augment_cap = 10;  // over-sampling target is at most augment_cap x stored count
    double tau = 1.0;
    double ridge_scale = 1e-6;
    double temperature = 2.0;
    IlMode mode = IlMode::class_il;
    Method method = Method::agla;
    Toggles toggles;
    MetaWeights fixed_weights{1.0, 0.5, 0.5};
    std::size_t lstm_layers = 1;
    bool reset_assessor = false;           // re-initialise the assessor at each task boundary
    bool refresh_logits = true;            // false: keep logits from insertion time
    std::size_t hidden_dim = 128;
    std::size_t feature_dim = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ParameterError("epochs must be >= 1");
        if (!(lr > 0) || !(assessor_lr > 0)) throw ParameterError("learning rates must be positive");
        if (momentum < 0 || momentum >= 1 || assessor_momentum < 0 || assessor_momentum >= 1)
            throw ParameterError("momentum must lie in [0,1)");
        if (weight_decay < 0) throw ParameterError("weight decay must be >= 0");
        if (batch_size < 1) throw ParameterError("batch size must be >= 1");
        if (!(tau > 0)) throw ParameterError("tau must be positive");
        if (!(temperature > 0)) throw ParameterError("temperature must be positive");
        if (ridge_scale < 0) throw ParameterError("ridge scale must be >= 0");
        if (lstm_layers < 1) throw ParameterError("lstm_layers must be >= 1");
        if (augment_cap < 1) throw ParameterError("augment_cap must be >= 1");
    }
};

/// What a method actually switches on once its fixed choices are applied.
struct ResolvedSetup {
    Toggles toggles;
    std::size_t memory_per_class = 0;
    bool memory_terms = true;
};

inline ResolvedSetup resolve_setup(const TrainConfig& cfg) {
    ResolvedSetup r{cfg.toggles, cfg.memory_per_class, true};
    switch (cfg.method) {
        case Method::agla: break;
        case Method::replay_der:
            r.toggles.assessor = false;
            r.toggles.augment = false;
            r.toggles.random_transform = false;
            r.toggles.cos_weights = false;
            break;
        case Method::finetune:
        case Method::joint:
            r.toggles = Toggles{false, false, false, false, false, false};
            r.memory_per_class = 0;
            r.memory_terms = false;
            break;
    }
    return r;
}

/// One row of the per-epoch trace (task and epoch are 1-based).
struct EpochTrace {
    std::size_t task = 0;
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double mean_alpha = 0;
    double mean_beta = 0;
    double mean_gamma = 0;
};

/// An element of the per-task training (or validation) set.
struct TrainingExample {
    std::vector<double> x;
    std::size_t label = 0;
    std::size_t task = 0;
    bool memory = false;
    bool augmented = false;
    std::vector<double> stored_logits;
    std::size_t origin = 0;
    double cos_weight = 1.0;  // unnormalised likelihood ratio, augmented rows only
};

/// Training and lockstep validation sets of the task being learned.
struct TaskData {
    int k = 1;  // 1-based task index
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> val;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(base ^ splitmix64(stream)) + index);
}

}  // namespace detail

/// Base learner, assessor and memory carried across the tasks of one stream.
class ContinualLearner {
public:
    ContinualLearner(std::size_t input_dim, bool unit_range, TrainConfig cfg)
        : cfg_(std::move(cfg)),
          setup_(resolve_setup(cfg_)),
          model_(input_dim, cfg_.mode, detail::derive_seed(cfg_.seed, 1), cfg_.hidden_dim, cfg_.feature_dim),
          assessor_(std::make_unique<Assessor>(input_dim, detail::derive_seed(cfg_.seed, 2), cfg_.lstm_layers)),
          memory_(setup_.memory_per_class),
          memory_rng_(detail::derive_seed(cfg_.seed, 3)),
          shuffle_rng_(detail::derive_seed(cfg_.seed, 4)),
          assessor_opt_(cfg_.assessor_lr, cfg_.assessor_momentum, 0.0),
          unit_range_(unit_range) {
        cfg_.validate();
        family_ = default_transform_family();
        if (!unit_range)
            family_.erase(std::remove_if(family_.begin(), family_.end(),
                                         [](const TransformSpec& t) { return t.kind == TransformKind::invert; }),
                          family_.end());
    }

    const TrainConfig& config() const { return cfg_; }
    const ResolvedSetup& setup() const { return setup_; }
    const BaseLearner& model() const { return model_; }
    BaseLearner& model() { return model_; }
    const Assessor& assessor() const { return *assessor_; }
    const ReservoirBuffer& memory() const { return memory_; }
    std::size_t tasks_done() const { return tasks_done_; }
    const std::vector<EpochTrace>& traces() const { return traces_; }
    const std::optional<ModelSnapshot>& previous_model() const { return previous_; }

    /// Algorithm body for one task: build the sets, train for `epochs`, update memory.
    void run_task(const Task& task) {
        TaskData data = prepare_task(task);
        for (std::size_t e = 0; e < cfg_.epochs; ++e) train_epoch(data, e);
        finish_task(task);
    }

    /// Grows the head, assembles M_hat and the current task into the training set, and
    /// derives the validation set.
    TaskData prepare_task(const Task& task) {
        if (task.index != tasks_done_)
            throw ProtocolError("run_task: expected task " + std::to_string(tasks_done_) + ", got " +
                                std::to_string(task.index));
        if (task.train.empty()) throw ProtocolError("run_task: task has no training samples");
        if (tasks_done_ > 0 && setup_.memory_terms && !previous_)
            throw ProtocolError("run_task: previous-task snapshot missing");
        TaskData data;
        data.k = static_cast<int>(tasks_done_) + 1;
        model_.expand_head(task.classes.size());
        first_class_.push_back(task.first_class());
        if (cfg_.reset_assessor && tasks_done_ > 0) {
            assessor_ = std::make_unique<Assessor>(model_.input_dim(),
                                                   detail::derive_seed(cfg_.seed, 2, tasks_done_), cfg_.lstm_layers);
            assessor_opt_ = SgdState(cfg_.assessor_lr, cfg_.assessor_momentum, 0.0);
        }
        base_opt_ = SgdState(cfg_.lr, cfg_.momentum, cfg_.weight_decay);

        for (const MemoryEntry& e : replay_set(task)) {
            TrainingExample ex;
            ex.x = e.x;
            if (unit_range_)
                for (double& v : ex.x) v = std::clamp(v, 0.0, 1.0);
            ex.label = e.label;
            ex.task = e.task;
            ex.memory = true;
            ex.augmented = e.transform > 0;
            ex.stored_logits = e.logits;
            ex.origin = e.origin;
            data.train.push_back(std::move(ex));
        }
        for (const Sample& s : task.train) {
            TrainingExample ex;
            ex.x = s.x;
            ex.label = s.label;
            ex.task = s.task;
            ex.origin = s.id;
            data.train.push_back(std::move(ex));
        }
        data.val = setup_.toggles.random_transform
                       ? make_validation_set(data.train, family_, detail::derive_seed(cfg_.seed, 6, tasks_done_))
                       : data.train;
        return data;
    }

    /// One pass over the training set in shuffled mini-batches, alternating the assessor
    /// step on the validation batch with the base step on the matching training batch.
    EpochTrace train_epoch(TaskData& data, std::size_t epoch) {
        if (setup_.toggles.cos_weights) update_cos_weights(data);
        std::vector<std::size_t> order(data.train.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng_);

        EpochTrace trace;
        trace.task = static_cast<std::size_t>(data.k);
        trace.epoch = epoch + 1;
        std::size_t batches = 0, rows = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            trace.val_loss += setup_.toggles.assessor ? meta_step(data, idx) : validation_loss(data, idx);
            const StepResult step = base_step(data, idx);
            trace.train_loss += step.loss;
            trace.mean_alpha += step.weight_sums[0];
            trace.mean_beta += step.weight_sums[1];
            trace.mean_gamma += step.weight_sums[2];
            ++batches;
            rows += idx.size();
        }
        trace.train_loss /= static_cast<double>(batches);
        trace.val_loss /= static_cast<double>(batches);
        trace.mean_alpha /= static_cast<double>(rows);
        trace.mean_beta /= static_cast<double>(rows);
        trace.mean_gamma /= static_cast<double>(rows);
        traces_.push_back(trace);
        return trace;
    }

    /// Reservoir update over the task's samples, snapshot, and logit refresh.
    void finish_task(const Task& task) {
        for (const Sample& s : task.train) reservoir_insert(memory_, s, s.label, memory_rng_);
        previous_.emplace(model_);
        if (cfg_.refresh_logits) {
            refresh_logits(memory_, *previous_);
        } else {
            // only entries inserted just now take the snapshot's output
            memory_.for_each_entry([&](MemoryEntry& e) {
                if (!e.logits.empty()) return;
                const auto task_id = cfg_.mode == IlMode::task_il ? std::optional<std::size_t>(e.task) : std::nullopt;
                const Tensor o = previous_->forward(Tensor({1, e.x.size()}, e.x), task_id);
                e.logits.assign(o.data().begin(), o.data().end());
            });
        }
        ++tasks_done_;
    }

    /// Closes a task without touching memory or the snapshot (pooled training).
    void skip_memory_update() { ++tasks_done_; }

    /// Assessor update: combined loss on a validation batch with the base learner held
    /// fixed, gradient into psi only. Returns the loss before the step.
    double meta_step(const TaskData& data, std::span<const std::size_t> idx) {
        const Batch b = make_batch(data.val, idx);
        Tensor logits;
        {
            NoGradGuard guard;
            logits = model_.all_logits(model_.features(b.x));
        }
        const Tensor meta = assessor_->forward(b.x, assessor_->initial_state()).weights;
        const Tensor loss = combined_loss(logits, b.rows, meta, data.k, loss_terms());
        auto params = assessor_->parameters();
        zero_grads(params);
        backward(loss);
        sgd_step(params, assessor_opt_);
        zero_grads(params);
        return loss.item();
    }

    struct StepResult {
        double loss = 0;
        double weight_sums[3] = {0, 0, 0};
    };

    /// Base-learner update with weights from the (just updated) assessor, gradient into
    /// theta and phi only.
    StepResult base_step(const TaskData& data, std::span<const std::size_t> idx) {
        const Batch b = make_batch(data.train, idx);
        const Tensor meta = current_weights(b.x);
        const Tensor loss = combined_loss(model_.all_logits(model_.features(b.x)), b.rows, meta, data.k, loss_terms());
        auto params = model_.parameters();
        zero_grads(params);
        backward(loss);
        sgd_step(params, base_opt_);
        zero_grads(params);
        StepResult r;
        r.loss = loss.item();
        for (std::size_t i = 0; i < meta.rows(); ++i)
            for (std::size_t c = 0; c < 3; ++c) r.weight_sums[c] += meta.at(i, c);
        return r;
    }

    /// Combined loss on a validation batch without any update.
    double validation_loss(const TaskData& data, std::span<const std::size_t> idx) {
        NoGradGuard guard;
        const Batch b = make_batch(data.val, idx);
        const Tensor meta = current_weights(b.x);
        return combined_loss(model_.all_logits(model_.features(b.x)), b.rows, meta, data.k, loss_terms()).item();
    }

    /// Recomputes the unnormalised COS weight of every augmented copy from the current
    /// feature extractor; origins are grouped over their transformed copies.
    void update_cos_weights(TaskData& data) const {
        std::map<std::size_t, std::vector<std::size_t>> by_origin;
        for (std::size_t i = 0; i < data.train.size(); ++i)
            if (data.train[i].augmented) by_origin[data.train[i].origin].push_back(i);
        if (by_origin.empty()) return;
        const std::size_t d = model_.input_dim(), f = model_.feature_dim();
        std::vector<std::size_t> flat;
        for (const auto& [_, idx] : by_origin) flat.insert(flat.end(), idx.begin(), idx.end());
        std::vector<double> xs;
        xs.reserve(flat.size() * d);
        for (std::size_t i : flat) xs.insert(xs.end(), data.train[i].x.begin(), data.train[i].x.end());
        Tensor feats;
        {
            NoGradGuard guard;
            feats = model_.features(Tensor({flat.size(), d}, std::move(xs)));
        }
        std::vector<Eigen::MatrixXd> groups;
        std::size_t row = 0;
        for (const auto& [_, idx] : by_origin) {
            Eigen::MatrixXd g(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(f));
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < f; ++c)
                    g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = feats.at(row + r, c);
            row += idx.size();
            groups.push_back(std::move(g));
        }
        const CosStats stats = compute_cos_stats_relative(groups, cfg_.tau, cfg_.ridge_scale);
        std::size_t gi = 0;
        for (const auto& [_, idx] : by_origin) {
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const double w = cos_weight(groups[gi].row(static_cast<Eigen::Index>(r)).transpose(), stats.means[gi], stats);
                const double floored = std::max(w, std::numeric_limits<double>::min());
                data.train[idx[r]].cos_weight = floored;
                if (data.val.size() == data.train.size()) data.val[idx[r]].cos_weight = floored;
            }
            ++gi;
        }
    }

private:
    struct Batch {
        Tensor x;
        std::vector<LossRow> rows;
    };

    LossTerms loss_terms() const {
        return {setup_.memory_terms && setup_.toggles.der_loss, setup_.memory_terms && setup_.toggles.distill_loss,
                cfg_.temperature};
    }

    Tensor current_weights(const Tensor& x) const {
        if (!setup_.toggles.assessor) return constant_meta(x.rows(), cfg_.fixed_weights);
        NoGradGuard guard;
        return assessor_->forward(x, assessor_->initial_state()).weights;
    }

    Batch make_batch(const std::vector<TrainingExample>& set, std::span<const std::size_t> idx) const {
        const std::size_t d = model_.input_dim();
        Batch b;
        std::vector<double> xs;
        xs.reserve(idx.size() * d);
        std::vector<double> raw;
        std::vector<std::size_t> augmented_rows;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const TrainingExample& ex = set[idx[r]];
            xs.insert(xs.end(), ex.x.begin(), ex.x.end());
            LossRow row;
            if (cfg_.mode == IlMode::class_il) {
                row.window = {0, model_.output_width()};
                row.target = ex.label;
            } else {
                row.window = {model_.head_offset(ex.task), model_.head_width(ex.task)};
                row.target = ex.label - first_class_.at(ex.task);
            }
            row.memory = ex.memory;
            if (ex.memory) row.stored_logits = ex.stored_logits;
            if (ex.augmented && setup_.toggles.cos_weights) {
                raw.push_back(ex.cos_weight);
                augmented_rows.push_back(r);
            }
            b.rows.push_back(std::move(row));
        }
        if (!raw.empty()) {
            const auto normalized = normalize_weights(raw);
            for (std::size_t i = 0; i < augmented_rows.size(); ++i) b.rows[augmented_rows[i]].cos_factor = normalized[i];
        }
        b.x = Tensor({idx.size(), d}, std::move(xs));
        return b;
    }

    /// M_hat for the coming task: the stored memory, over-sampled toward the current
    /// task's per-class count when augmentation is on.
    std::vector<MemoryEntry> replay_set(const Task& task) {
        if (memory_.empty() || !setup_.memory_terms) return {};
        if (!setup_.toggles.augment) return memory_.all_entries();
        std::size_t max_stored = 0;
        for (std::size_t c : memory_.classes()) max_stored = std::max(max_stored, memory_.entries(c).size());
        const std::size_t per_class_current = task.train.size() / task.classes.size();
        const std::size_t target =
            std::max(max_stored, std::min(per_class_current, cfg_.augment_cap * max_stored));
        return augment_memory(memory_, family_, target, detail::derive_seed(cfg_.seed, 5, tasks_done_));
    }

    TrainConfig cfg_;
    ResolvedSetup setup_;
    BaseLearner model_;
    std::unique_ptr<Assessor> assessor_;
    ReservoirBuffer memory_;
    Rng memory_rng_;
    Rng shuffle_rng_;
    SgdState base_opt_;
    SgdState assessor_opt_;
    TransformFamily family_;
    std::optional<ModelSnapshot> previous_;
    bool unit_range_;
    std::vector<std::size_t> first_class_;
    std::size_t tasks_done_ = 0;
    std::vector<EpochTrace> traces_;
};

struct ExperimentResult {
    AccuracyMatrix accuracy;
    std::vector<EpochTrace> traces;
    double average_accuracy = 0;
    ForgettingResult forgetting;
};

namespace detail {

inline void summarize(ExperimentResult& r) {
    r.average_accuracy = average_accuracy(r.accuracy);
    r.forgetting = average_forgetting(r.accuracy);
}

/// One model trained once on every task's samples pooled; fills only the final row.
inline ExperimentResult run_joint(const TaskStream& stream, TrainConfig cfg) {
    cfg.method = Method::joint;
    ContinualLearner learner(stream.input_dim, stream.unit_range, cfg);
    // every head must exist before training; task-IL gets one head per task
    TaskData data;
    data.k = 1;
    for (const Task& t : stream.tasks) {
        Task shell;
        shell.index = t.index;
        shell.classes = t.classes;
        shell.train = t.train;
        if (t.index == 0) {
            data = learner.prepare_task(shell);
        } else {
            learner.skip_memory_update();
            TaskData more = learner.prepare_task(shell);
            data.train.insert(data.train.end(), more.train.begin(), more.train.end());
            data.val.insert(data.val.end(), more.val.begin(), more.val.end());
        }
    }
    data.k = 1;
    for (std::size_t e = 0; e < cfg.epochs; ++e) learner.train_epoch(data, e);

    ExperimentResult r;
    r.accuracy = AccuracyMatrix(stream.task_count());
    const std::size_t last = stream.task_count() - 1;
    for (const Task& t : stream.tasks) r.accuracy.set(last, t.index, evaluate(learner.model(), t, cfg.mode));
    r.traces = learner.traces();
    summarize(r);
    return r;
}

}  // namespace detail

/// Trains over the stream in order and evaluates every seen task after each one.
inline ExperimentResult run_experiment(const TaskStream& stream, const TrainConfig& cfg) {
    stream.validate();
    cfg.validate();
    if (cfg.method == Method::joint) return detail::run_joint(stream, cfg);
    ContinualLearner learner(stream.input_dim, stream.unit_range, cfg);
    ExperimentResult r;
    r.accuracy = AccuracyMatrix(stream.task_count());
    for (const Task& task : stream.tasks) {
        learner.run_task(task);
        for (std::size_t j = 0; j <= task.index; ++j)
            r.accuracy.set(task.index, j, evaluate(learner.model(), stream.tasks[j], cfg.mode));
    }
    r.traces = learner.traces();
    detail::summarize(r);
    return r;
}

inline ExperimentResult run_baseline(Method kind, const TaskStream& stream, TrainConfig cfg) {
    if (kind == Method::agla) throw ParameterError("run_baseline: agla is not a baseline");
    cfg.method = kind;
    return run_experiment(stream, cfg);
}

/// Ablation configurations A..F followed by the full method.
struct AblationConfig {
    std::string label;
    Toggles toggles;
};

inline std::vector<AblationConfig> ablation_grid() {
    std::vector<AblationConfig> out;
    const char* labels[] = {"A", "B", "C", "D", "E", "F"};
    for (int i = 0; i < 6; ++i) {
        Toggles t;
        bool* fields[] = {&t.assessor, &t.augment, &t.random_transform, &t.cos_weights, &t.der_loss, &t.distill_loss};
        *fields[i] = false;
        out.push_back({labels[i], t});
    }
    out.push_back({"AGLA", Toggles{}});
    return out;
}

}  // namespace agla
