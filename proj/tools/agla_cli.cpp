// agla: run continual-learning experiments, ablations, the COS regression Monte-Carlo,
// and summarize result directories.

#include "agla/agla.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, method, mode, label;
    std::optional<std::size_t> epochs;
    bool no_assessor = false, no_augment = false, no_transform = false, no_cos = false, no_der = false,
         no_distill = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "training seed");
    cmd->add_option("--out", o.out, "output root directory");
    cmd->add_option("--label", o.label, "run label (subdirectory of --out)");
    cmd->add_option("--epochs", o.epochs, "epochs per task");
    cmd->add_option("--mode", o.mode, "task-il | class-il");
}

void add_toggles(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--method", o.method, "agla | finetune | joint | replay_der");
    cmd->add_flag("--no-assessor", o.no_assessor, "constant weights instead of the assessor");
    cmd->add_flag("--no-augment", o.no_augment, "no memory over-sampling");
    cmd->add_flag("--no-transform", o.no_transform, "validation set equals the training set");
    cmd->add_flag("--no-cos", o.no_cos, "uniform weights on augmented copies");
    cmd->add_flag("--no-der", o.no_der, "drop the logit-matching term");
    cmd->add_flag("--no-distill", o.no_distill, "drop the distillation term");
}

agla::ExperimentConfig resolve(const Overrides& o) {
    agla::ExperimentConfig c = o.config.empty() ? agla::ExperimentConfig{} : agla::load_config(o.config);
    if (o.seed) c.train.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.label) c.label = *o.label;
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.mode) c.train.mode = agla::parse_mode_name(*o.mode);
    if (o.method) c.train.method = agla::parse_method(*o.method);
    auto& t = c.train.toggles;
    if (o.no_assessor) t.assessor = false;
    if (o.no_augment) t.augment = false;
    if (o.no_transform) t.random_transform = false;
    if (o.no_cos) t.cos_weights = false;
    if (o.no_der) t.der_loss = false;
    if (o.no_distill) t.distill_loss = false;
    c.train.validate();
    return c;
}

void print_rows(const std::vector<agla::ReportRow>& rows) {
    std::cout << std::left << std::setw(12) << "label" << std::setw(12) << "method" << std::setw(10) << "mode"
              << std::setw(6) << "runs" << std::setw(12) << "accuracy" << "forgetting\n";
    for (const auto& r : rows)
        std::cout << std::left << std::setw(12) << r.label << std::setw(12) << r.method << std::setw(10) << r.mode
                  << std::setw(6) << r.runs << std::setw(12) << std::fixed << std::setprecision(4) << r.avg_accuracy
                  << r.avg_forgetting << '\n';
}

void write_summary(const fs::path& path, const std::vector<agla::ReportRow>& rows) {
    agla::CsvWriter csv(path.string(), {"label", "method", "mode", "runs", "avg_accuracy", "avg_forgetting"});
    for (const auto& r : rows)
        csv.row({r.label, r.method, r.mode, std::to_string(r.runs), agla::format_double(r.avg_accuracy),
                 agla::format_double(r.avg_forgetting)});
}

int cmd_run(const Overrides& o) {
    const agla::ExperimentConfig c = resolve(o);
    const agla::TaskStream stream = agla::load_stream(c);
    const auto t0 = std::chrono::steady_clock::now();
    const agla::ExperimentResult r = agla::run_experiment(stream, c.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path dir = fs::path(c.out) / c.label;
    agla::write_run_outputs(dir, c, r);
    std::cout << agla::to_string(c.train.method) << ' ' << agla::mode_name(c.train.mode) << " seed " << c.train.seed
              << ": accuracy " << r.average_accuracy << ", forgetting " << r.forgetting.value
              << (r.forgetting.degenerate ? " (degenerate)" : "") << ", " << secs << " s -> " << dir.string() << '\n';
    return 0;
}

int cmd_ablate(const Overrides& o) {
    agla::ExperimentConfig base = resolve(o);
    base.train.method = agla::Method::agla;
    const agla::TaskStream stream = agla::load_stream(base);
    const fs::path root = fs::path(base.out) / base.label;
    for (const auto& ab : agla::ablation_grid()) {
        agla::ExperimentConfig c = base;
        c.train.toggles = ab.toggles;
        c.label = ab.label;
        const auto r = agla::run_experiment(stream, c.train);
        agla::write_run_outputs(root / ab.label, c, r);
        std::cout << ab.label << ": accuracy " << r.average_accuracy << ", forgetting " << r.forgetting.value << '\n';
    }
    const auto rows = agla::aggregate_reports(root);
    write_summary(root / "ablation_summary.csv", rows);
    print_rows(rows);
    return 0;
}

int cmd_cos(std::size_t seeds, const std::string& augmentation, double tau, std::uint64_t seed, const std::string& out) {
    agla::MseExperimentConfig cfg;
    cfg.seeds = seeds;
    cfg.tau = tau;
    cfg.base_seed = seed;
    if (augmentation == "identity") cfg.augmentation = agla::AugmentationKind::identity;
    else if (augmentation == "gaussian") cfg.augmentation = agla::AugmentationKind::gaussian;
    else if (augmentation == "outlier") cfg.augmentation = agla::AugmentationKind::outlier_mixture;
    else throw agla::ConfigError("unknown augmentation '" + augmentation + "' (identity | gaussian | outlier)");
    const auto report = agla::mse_reduction_experiment(cfg);
    fs::create_directories(out);
    agla::write_mse_csv((fs::path(out) / "cos_mse.csv").string(), report);
    std::cout << "R = " << seeds << ", augmentation " << augmentation << "\n"
              << "mean MSE unweighted " << report.mean_unweighted << "\n"
              << "mean MSE weighted   " << report.mean_weighted << "\n"
              << "mean MSE clean only " << report.mean_clean << "\n"
              << "paired t " << report.t_statistic << ", one-sided p " << report.p_value << '\n';
    return 0;
}

int cmd_report(const std::string& dir) {
    const auto rows = agla::aggregate_reports(dir);
    if (rows.empty()) throw agla::ConfigError("no metrics.csv found under '" + dir + "'");
    write_summary(fs::path(dir) / "summary.csv", rows);
    print_rows(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Assessor-guided continual learning experiments"};
    app.require_subcommand(1);

    Overrides run_o, ablate_o;
    auto* run = app.add_subcommand("run", "train one method on one stream and write results");
    add_common(run, run_o);
    add_toggles(run, run_o);

    auto* ablate = app.add_subcommand("ablate", "configurations A-F and full AGLA on one stream");
    add_common(ablate, ablate_o);

    std::size_t cos_seeds = 500;
    std::string cos_aug = "outlier", cos_out = "results/cos";
    double cos_tau = 1.0;
    std::uint64_t cos_seed = 1;
    auto* cos = app.add_subcommand("cos-experiment", "weighted vs unweighted regression on augmented data");
    cos->add_option("--seeds", cos_seeds, "Monte-Carlo repetitions")->check(CLI::Range(2, 1000000));
    cos->add_option("--augmentation", cos_aug, "identity | gaussian | outlier");
    cos->add_option("--tau", cos_tau, "weight temperature");
    cos->add_option("--seed", cos_seed, "first seed");
    cos->add_option("--out", cos_out, "output directory");

    std::string report_dir = "results";
    auto* report = app.add_subcommand("report", "aggregate metrics.csv files into a summary table");
    report->add_option("dir,--dir", report_dir, "results directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*ablate) return cmd_ablate(ablate_o);
        if (*cos) return cmd_cos(cos_seeds, cos_aug, cos_tau, cos_seed, cos_out);
        if (*report) return cmd_report(report_dir);
    } catch (const agla::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const agla::ParameterError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const agla::DomainError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const agla::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
