#pragma once

// Experiment configuration (flat JSON keys), dataset construction, and result files.

#include "agla/continual.hpp"
#include "agla/csv.hpp"
#include "agla/datasets.hpp"
#include "agla/error.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace agla {

enum class DatasetKind { synthetic, idx, csv };

inline const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::synthetic: return "synthetic";
        case DatasetKind::idx: return "idx";
        case DatasetKind::csv: return "csv";
    }
    return "?";
}

struct ExperimentConfig {
    TrainConfig train;
    DatasetKind dataset = DatasetKind::synthetic;
    SyntheticSpec synthetic;
    SplitSpec split;
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
    std::string csv_path;
    std::string out = "results";
    std::string label = "run";
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& field) {
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline IlMode parse_mode_name(const std::string& s) {
    if (s == "class-il" || s == "class_il") return IlMode::class_il;
    if (s == "task-il" || s == "task_il") return IlMode::task_il;
    throw ConfigError("unknown mode '" + s + "' (expected task-il or class-il)");
}

inline const char* mode_name(IlMode m) { return m == IlMode::class_il ? "class-il" : "task-il"; }

/// Applies every recognised key of a flat JSON object; unknown keys are an error.
inline void apply_json(ExperimentConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    TrainConfig& t = c.train;
    for (const auto& [key, value] : j.items()) {
        (void)value;
        const char* k = key.c_str();
        if (key == "epochs") detail::take(j, k, t.epochs);
        else if (key == "lr") detail::take(j, k, t.lr);
        else if (key == "momentum") detail::take(j, k, t.momentum);
        else if (key == "weight_decay") detail::take(j, k, t.weight_decay);
        else if (key == "assessor_lr") detail::take(j, k, t.assessor_lr);
        else if (key == "assessor_momentum") detail::take(j, k, t.assessor_momentum);
        else if (key == "batch_size") detail::take(j, k, t.batch_size);
        else if (key == "memory_per_class") detail::take(j, k, t.memory_per_class);
        else if (key == "augment_cap") detail::take(j, k, t.augment_cap);
        else if (key == "tau") detail::take(j, k, t.tau);
        else if (key == "ridge_scale") detail::take(j, k, t.ridge_scale);
        else if (key == "temperature") detail::take(j, k, t.temperature);
        else if (key == "lstm_layers") detail::take(j, k, t.lstm_layers);
        else if (key == "reset_assessor") detail::take(j, k, t.reset_assessor);
        else if (key == "refresh_logits") detail::take(j, k, t.refresh_logits);
        else if (key == "hidden_dim") detail::take(j, k, t.hidden_dim);
        else if (key == "feature_dim") detail::take(j, k, t.feature_dim);
        else if (key == "seed") detail::take(j, k, t.seed);
        else if (key == "fixed_alpha") detail::take(j, k, t.fixed_weights.alpha);
        else if (key == "fixed_beta") detail::take(j, k, t.fixed_weights.beta);
        else if (key == "fixed_gamma") detail::take(j, k, t.fixed_weights.gamma);
        else if (key == "assessor") detail::take(j, k, t.toggles.assessor);
        else if (key == "augment") detail::take(j, k, t.toggles.augment);
        else if (key == "random_transform") detail::take(j, k, t.toggles.random_transform);
        else if (key == "cos_weights") detail::take(j, k, t.toggles.cos_weights);
        else if (key == "der_loss") detail::take(j, k, t.toggles.der_loss);
        else if (key == "distill_loss") detail::take(j, k, t.toggles.distill_loss);
        else if (key == "mode") {
            std::string s;
            detail::take(j, k, s);
            t.mode = parse_mode_name(s);
        } else if (key == "method") {
            std::string s;
            detail::take(j, k, s);
            try {
                t.method = parse_method(s);
            } catch (const ParameterError& e) {
                throw ConfigError(e.what());
            }
        } else if (key == "dataset") {
            std::string s;
            detail::take(j, k, s);
            if (s == "synthetic") c.dataset = DatasetKind::synthetic;
            else if (s == "idx") c.dataset = DatasetKind::idx;
            else if (s == "csv") c.dataset = DatasetKind::csv;
            else throw ConfigError("unknown dataset '" + s + "'");
        }
        else if (key == "tasks") detail::take(j, k, c.synthetic.tasks);
        else if (key == "classes_per_task") {
            detail::take(j, k, c.synthetic.classes_per_task);
            c.split.classes_per_task = c.synthetic.classes_per_task;
        }
        else if (key == "input_dim") detail::take(j, k, c.synthetic.input_dim);
        else if (key == "train_per_class") detail::take(j, k, c.synthetic.train_per_class);
        else if (key == "test_per_class") detail::take(j, k, c.synthetic.test_per_class);
        else if (key == "separation") detail::take(j, k, c.synthetic.separation);
        else if (key == "noise") detail::take(j, k, c.synthetic.noise);
        else if (key == "clamp_unit") detail::take(j, k, c.synthetic.clamp_unit);
        else if (key == "data_seed") detail::take(j, k, c.synthetic.seed);
        else if (key == "test_fraction") detail::take(j, k, c.split.test_fraction);
        else if (key == "max_train_per_class") detail::take(j, k, c.split.max_train_per_class);
        else if (key == "max_test_per_class") detail::take(j, k, c.split.max_test_per_class);
        else if (key == "idx_images") detail::take(j, k, c.idx_images);
        else if (key == "idx_labels") detail::take(j, k, c.idx_labels);
        else if (key == "idx_test_images") detail::take(j, k, c.idx_test_images);
        else if (key == "idx_test_labels") detail::take(j, k, c.idx_test_labels);
        else if (key == "csv_path") detail::take(j, k, c.csv_path);
        else if (key == "out") detail::take(j, k, c.out);
        else if (key == "label") detail::take(j, k, c.label);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    ExperimentConfig c;
    apply_json(c, j);
    return c;
}

/// The resolved configuration as a flat JSON object using the same keys `apply_json` reads.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    nlohmann::json j;
    j["epochs"] = t.epochs;
    j["lr"] = t.lr;
    j["momentum"] = t.momentum;
    j["weight_decay"] = t.weight_decay;
    j["assessor_lr"] = t.assessor_lr;
    j["assessor_momentum"] = t.assessor_momentum;
    j["batch_size"] = t.batch_size;
    j["memory_per_class"] = t.memory_per_class;
    j["augment_cap"] = t.augment_cap;
    j["tau"] = t.tau;
    j["ridge_scale"] = t.ridge_scale;
    j["temperature"] = t.temperature;
    j["lstm_layers"] = t.lstm_layers;
    j["reset_assessor"] = t.reset_assessor;
    j["refresh_logits"] = t.refresh_logits;
    j["hidden_dim"] = t.hidden_dim;
    j["feature_dim"] = t.feature_dim;
    j["seed"] = t.seed;
    j["fixed_alpha"] = t.fixed_weights.alpha;
    j["fixed_beta"] = t.fixed_weights.beta;
    j["fixed_gamma"] = t.fixed_weights.gamma;
    j["assessor"] = t.toggles.assessor;
    j["augment"] = t.toggles.augment;
    j["random_transform"] = t.toggles.random_transform;
    j["cos_weights"] = t.toggles.cos_weights;
    j["der_loss"] = t.toggles.der_loss;
    j["distill_loss"] = t.toggles.distill_loss;
    j["mode"] = mode_name(t.mode);
    j["method"] = to_string(t.method);
    j["dataset"] = to_string(c.dataset);
    j["tasks"] = c.synthetic.tasks;
    j["classes_per_task"] = c.synthetic.classes_per_task;
    j["input_dim"] = c.synthetic.input_dim;
    j["train_per_class"] = c.synthetic.train_per_class;
    j["test_per_class"] = c.synthetic.test_per_class;
    j["separation"] = c.synthetic.separation;
    j["noise"] = c.synthetic.noise;
    j["clamp_unit"] = c.synthetic.clamp_unit;
    j["data_seed"] = c.synthetic.seed;
    j["test_fraction"] = c.split.test_fraction;
    j["max_train_per_class"] = c.split.max_train_per_class;
    j["max_test_per_class"] = c.split.max_test_per_class;
    j["idx_images"] = c.idx_images;
    j["idx_labels"] = c.idx_labels;
    j["idx_test_images"] = c.idx_test_images;
    j["idx_test_labels"] = c.idx_test_labels;
    j["csv_path"] = c.csv_path;
    j["out"] = c.out;
    j["label"] = c.label;
    return j;
}

/// Checks referenced paths and builds the task stream the configuration names.
inline TaskStream load_stream(const ExperimentConfig& c) {
    auto require = [](const std::string& p, const char* key) {
        if (p.empty()) throw ConfigError(std::string("config key '") + key + "' is required for this dataset");
        if (!std::filesystem::exists(p)) throw ConfigError(std::string("path for '") + key + "' does not exist: " + p);
    };
    switch (c.dataset) {
        case DatasetKind::synthetic: return generate_synthetic_stream(c.synthetic);
        case DatasetKind::idx:
            require(c.idx_images, "idx_images");
            require(c.idx_labels, "idx_labels");
            if (!c.idx_test_images.empty() || !c.idx_test_labels.empty()) {
                require(c.idx_test_images, "idx_test_images");
                require(c.idx_test_labels, "idx_test_labels");
                return load_idx_dataset(c.idx_images, c.idx_labels, c.idx_test_images, c.idx_test_labels, c.split);
            }
            return load_idx_dataset(c.idx_images, c.idx_labels, c.split);
        case DatasetKind::csv:
            require(c.csv_path, "csv_path");
            return load_csv_dataset(c.csv_path, c.split);
    }
    throw ConfigError("unknown dataset kind");
}

/// metrics.csv, acc_matrix.csv, traces.csv and config.json in `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& c, const ExperimentResult& r) {
    std::filesystem::create_directories(dir);
    {
        CsvWriter m((dir / "metrics.csv").string(), {"method", "mode", "seed", "avg_accuracy", "avg_forgetting"});
        m.row({to_string(c.train.method), mode_name(c.train.mode), std::to_string(c.train.seed),
               format_double(r.average_accuracy), format_double(r.forgetting.value)});
    }
    {
        CsvWriter a((dir / "acc_matrix.csv").string(), {"k", "j", "accuracy"});
        for (std::size_t k = 0; k < r.accuracy.tasks(); ++k)
            for (std::size_t j = 0; j <= k; ++j)
                if (r.accuracy.defined(k, j))
                    a.row({std::to_string(k + 1), std::to_string(j + 1), format_double(r.accuracy.at(k, j))});
    }
    {
        CsvWriter t((dir / "traces.csv").string(),
                    {"task", "epoch", "train_loss", "val_loss", "mean_alpha", "mean_beta", "mean_gamma"});
        for (const EpochTrace& e : r.traces)
            t.row({std::to_string(e.task), std::to_string(e.epoch), format_double(e.train_loss),
                   format_double(e.val_loss), format_double(e.mean_alpha), format_double(e.mean_beta),
                   format_double(e.mean_gamma)});
    }
    std::ofstream cfg(dir / "config.json");
    if (!cfg) throw ConfigError("cannot write to output directory '" + dir.string() + "'");
    cfg << to_json(c).dump(2) << '\n';
}

/// One aggregated row of a report: every metrics.csv row found under `label`.
struct ReportRow {
    std::string label;
    std::string method;
    std::string mode;
    std::size_t runs = 0;
    double avg_accuracy = 0;
    double avg_forgetting = 0;
};

/// Groups metrics.csv files under `root` by their top-level subdirectory (or the root
/// itself) and averages accuracy and forgetting within each group.
inline std::vector<ReportRow> aggregate_reports(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ConfigError("report directory '" + root.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::map<std::string, ReportRow> groups;
    std::vector<std::string> order;
    for (const fs::path& f : files) {
        const fs::path rel = fs::relative(f.parent_path(), root);
        const std::string label = rel.empty() || rel == "." ? root.filename().string() : rel.begin()->string();
        std::ifstream in(f);
        std::string line;
        std::getline(in, line);
        const auto header = split_csv_line(line);
        const std::vector<std::string> expected{"method", "mode", "seed", "avg_accuracy", "avg_forgetting"};
        if (header != expected) throw FormatError("unexpected metrics header in " + f.string(), 0);
        std::size_t offset = line.size() + 1;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 5) throw FormatError("malformed metrics row in " + f.string(), offset);
            offset += line.size() + 1;
            auto [it, inserted] = groups.try_emplace(label);
            if (inserted) order.push_back(label);
            ReportRow& row = it->second;
            row.label = label;
            row.method = fields[0];
            row.mode = fields[1];
            row.avg_accuracy += parse_double(fields[3]);
            row.avg_forgetting += parse_double(fields[4]);
            ++row.runs;
        }
    }
    const std::vector<std::string> ablation_order{"A", "B", "C", "D", "E", "F", "AGLA"};
    std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        auto pos = [&](const std::string& s) {
            auto it = std::find(ablation_order.begin(), ablation_order.end(), s);
            return it == ablation_order.end() ? ablation_order.size() : std::size_t(it - ablation_order.begin());
        };
        return pos(a) < pos(b);
    });
    std::vector<ReportRow> out;
    for (const std::string& l : order) {
        ReportRow r = groups.at(l);
        r.avg_accuracy /= static_cast<double>(r.runs);
        r.avg_forgetting /= static_cast<double>(r.runs);
        out.push_back(r);
    }
    return out;
}

}  // namespace agla
