#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "calprio/expcli.hpp"

namespace {

int cmd_train(const std::string& config_path) {
    calprio::RunConfig config = calprio::load_config(config_path);
    const calprio::RunResult result = calprio::run_experiment(std::move(config));
    std::printf("run %s complete: test accuracy %.4f, test ECE %.4f\n", result.run_id.c_str(),
                result.test.accuracy, result.test.ece);
    std::printf("artifacts: %s\n", result.run_dir.c_str());
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path) {
    const calprio::RunConfig base = calprio::load_config(config_path);
    const nlohmann::json grid = calprio::load_json_file(grid_path);
    const calprio::SweepResult result = calprio::run_sweep(base, grid);
    int failed = 0;
    for (const auto& cell : result.cells)
        if (!cell.ok) ++failed;
    std::printf("sweep: %zu cells, %d failed\n", result.cells.size(), failed);
    std::printf("summary: %s\n", result.summary_csv.c_str());
    std::printf("table:   %s\n", result.table_csv.c_str());
    return failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& run_dir) {
    const calprio::ReportBundle bundle = calprio::write_report(run_dir);
    for (const std::string& f : bundle.files) std::printf("%s\n", f.c_str());
    return bundle.complete ? 0 : 1;
}

int cmd_pretrain_target(const std::string& config_path) {
    calprio::RunConfig config = calprio::load_config(config_path);
    // Targets train on the full split every epoch; no subset selection.
    config.selection.fraction = 1.0;
    config.selection.guidance.reset();
    const calprio::RunResult result = calprio::run_experiment(std::move(config));
    std::printf("target checkpoint: %s/checkpoint.bin\n", result.run_dir.c_str());
    std::printf("val accuracy %.4f, val ECE %.4f\n", result.epochs.back().val_accuracy,
                result.epochs.back().val_ece);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibration-aware sample prioritization experiments"};
    app.require_subcommand(1);

    std::string train_config, sweep_config, sweep_grid, report_dir, target_config;

    CLI::App* train = app.add_subcommand("train", "Run one training experiment");
    train->add_option("--config", train_config, "Run config JSON")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "Run a hyperparameter sweep");
    sweep->add_option("--config", sweep_config, "Base run config JSON")->required();
    sweep->add_option("--grid", sweep_grid, "Grid JSON (keys: alpha, gamma, fraction, seed)")
        ->required();

    CLI::App* report = app.add_subcommand("report", "Emit plot-ready CSVs for a finished run");
    report->add_option("--run", report_dir, "Run directory")->required();

    CLI::App* pretrain = app.add_subcommand("pretrain-target",
                                            "Train and checkpoint a guidance target (full data)");
    pretrain->add_option("--config", target_config, "Run config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_config);
        if (sweep->parsed()) return cmd_sweep(sweep_config, sweep_grid);
        if (report->parsed()) return cmd_report(report_dir);
        if (pretrain->parsed()) return cmd_pretrain_target(target_config);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
