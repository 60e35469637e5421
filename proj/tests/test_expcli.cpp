#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "calprio/expcli.hpp"

using namespace calprio;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "calprio_tests" / name;
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

RunConfig sweep_base(const fs::path& out) {
    RunConfig c;
    c.output_dir = out.string();
    c.dataset.num_classes = 3;
    c.dataset.num_samples = 40;
    c.dataset.test_samples = 20;
    c.dataset.input_shape = {1, 2, 2};
    c.dataset.seed = 5;
    c.model.kind = "mlp";
    c.model.width = 5;
    c.model.depth = 1;
    c.selection.fraction = 0.5;
    c.selection.warmup_epochs = 1;
    c.training.epochs = 2;
    c.training.batch_size = 16;
    c.training.eval_batch_size = 32;
    c.metrics.ece_bins = 5;
    return c;
}

}  // namespace

TEST_CASE("grid assignments rewrite the intended config fields") {
    const RunConfig base = sweep_base(temp_dir("ga"));
    const RunConfig c = apply_grid_assignment(
        base, {{"alpha", 0.4}, {"gamma", 2.0}, {"fraction", 0.2}, {"seed", 77.0}});
    CHECK(c.calibration.alpha == 0.4);
    CHECK(c.calibration.gamma == 2.0);
    CHECK(c.selection.fraction == 0.2);
    CHECK(c.split.seed == 77);
    CHECK(c.model.seed == 77);
    CHECK(c.training.seed == 77);
    CHECK(c.dataset.seed == 5);  // the pool itself is shared across seeds
    CHECK(base.calibration.alpha == 0.0);

    CHECK_THROWS_AS(apply_grid_assignment(base, {{"width", 8.0}}), ConfigError);
}

TEST_CASE("an empty grid runs the base config once") {
    const fs::path out = temp_dir("sweep_empty");
    const SweepResult res = run_sweep(sweep_base(out), json::object());
    REQUIRE(res.cells.size() == 1);
    CHECK(res.cells[0].ok);
    CHECK(fs::exists(fs::path(res.cells[0].run_dir) / "final.json"));
    CHECK(fs::exists(res.summary_csv));
    CHECK(fs::exists(res.table_csv));
}

TEST_CASE("the sweep expands the Cartesian product of the grid") {
    const fs::path out = temp_dir("sweep_grid");
    RunConfig base = sweep_base(out);
    base.calibration = CalibrationConfig::focal(1.0);
    const json grid = {{"gamma", {1.0, 2.0}}, {"seed", {101, 102}}};

    const SweepResult res = run_sweep(base, grid);
    REQUIRE(res.cells.size() == 4);
    int ok = 0;
    for (const SweepCell& cell : res.cells) ok += cell.ok ? 1 : 0;
    CHECK(ok == 4);

    // every cell gets a distinct run directory
    for (std::size_t i = 0; i < res.cells.size(); ++i)
        for (std::size_t j = i + 1; j < res.cells.size(); ++j)
            CHECK(res.cells[i].run_dir != res.cells[j].run_dir);

    const std::vector<std::string> summary = lines_of(read_file(res.summary_csv));
    REQUIRE(summary.size() == 5);  // header + one row per cell
    CHECK(summary[0].rfind("run_id,", 0) == 0);

    // two gamma groups, each pooling two seeds
    const std::vector<std::string> table = lines_of(read_file(res.table_csv));
    REQUIRE(table.size() == 3);

    CHECK_THROWS_AS(run_sweep(base, json{{"gamma", json::array()}}), ConfigError);
    CHECK_THROWS_AS(run_sweep(base, json{{"nonsense", {1.0}}}), ConfigError);
}

TEST_CASE("a failing cell is recorded and the sweep carries on") {
    const fs::path out = temp_dir("sweep_fail");
    RunConfig base = sweep_base(out);
    base.calibration.method = CalibrationMethod::LabelSmoothing;
    // alpha = 1.0 is outside label smoothing's domain, alpha = 0.1 is fine
    const json grid = {{"alpha", {1.0, 0.1}}};

    const SweepResult res = run_sweep(base, grid);
    REQUIRE(res.cells.size() == 2);
    CHECK_FALSE(res.cells[0].ok);
    CHECK(!res.cells[0].error.empty());
    CHECK(res.cells[1].ok);

    // the summary covers only the run that produced artifacts
    const std::vector<std::string> summary = lines_of(read_file(res.summary_csv));
    CHECK(summary.size() == 2);
}

TEST_CASE("summary and table files are idempotent across rebuilds") {
    const fs::path out = temp_dir("sweep_idem");
    const SweepResult res = run_sweep(sweep_base(out), json{{"seed", {3, 4}}});

    std::vector<std::string> dirs;
    for (const SweepCell& cell : res.cells) dirs.push_back(cell.run_dir);

    const std::string summary_before = read_file(res.summary_csv);
    const std::string table_before = read_file(res.table_csv);
    const auto [summary_path, table_path] = write_sweep_summary(dirs, out.string());
    CHECK(read_file(summary_path) == summary_before);
    CHECK(read_file(table_path) == table_before);
}

TEST_CASE("write_report distills a run directory into plottable tables") {
    const fs::path out = temp_dir("report_run");
    RunConfig cfg = sweep_base(out);
    cfg.run_id = "reported";
    cfg.training.epochs = 3;
    const RunResult run = run_experiment(cfg);

    const ReportBundle bundle = write_report(run.run_dir);
    CHECK(bundle.complete);
    auto bundle_file = [&](const std::string& name) -> std::string {
        for (const std::string& f : bundle.files)
            if (f.size() >= name.size() && f.compare(f.size() - name.size(), name.size(), name) == 0)
                return f;
        FAIL("missing report file: ", name);
        return "";
    };

    const auto class_rows = lines_of(read_file(bundle_file("class_distribution.csv")));
    REQUIRE(class_rows.size() == 4);  // header + 3 epochs
    CHECK(class_rows[0] == "epoch,class_0,class_1,class_2");
    // each row's class counts total the subset recorded for that epoch
    for (std::size_t i = 1; i < class_rows.size(); ++i) {
        std::istringstream in(class_rows[i]);
        std::string field;
        std::getline(in, field, ',');
        const std::size_t epoch = std::stoul(field);
        int total = 0;
        while (std::getline(in, field, ',')) total += std::stoi(field);
        CHECK(total == run.epochs.at(epoch - 1).subset_size);
    }

    // overlap has one row per epoch that had a predecessor
    CHECK(lines_of(read_file(bundle_file("overlap.csv"))).size() == 3);
    CHECK(lines_of(read_file(bundle_file("val_accuracy.csv"))).size() == 4);
    CHECK(fs::exists(bundle_file("reliability.csv")));

    const auto balance_rows = lines_of(read_file(bundle_file("balance.csv")));
    REQUIRE(balance_rows.size() == 4);
    for (std::size_t i = 1; i < balance_rows.size(); ++i) {
        std::istringstream in(balance_rows[i]);
        std::string epoch_field, ratio_field;
        std::getline(in, epoch_field, ',');
        std::getline(in, ratio_field, ',');
        CHECK(std::stod(ratio_field) >= 1.0);
    }
}

TEST_CASE("write_report flags unfinished runs") {
    const fs::path out = temp_dir("report_incomplete");
    RunConfig cfg = sweep_base(out);
    cfg.run_id = "broken";
    GuidanceSpec g;
    g.checkpoint = (out / "missing.bin").string();
    cfg.selection.guidance = g;
    CHECK_THROWS(run_experiment(cfg));

    const ReportBundle bundle = write_report((out / "broken").string());
    CHECK_FALSE(bundle.complete);
    CHECK(bundle.files.empty());  // nothing parseable was left behind
}

TEST_CASE("load_json_file surfaces parse failures with the path") {
    const fs::path dir = temp_dir("jsonio");
    const fs::path p = dir / "x.json";
    {
        std::ofstream outf(p);
        outf << R"({"a": 1})";
    }
    CHECK(load_json_file(p.string()).at("a") == 1);
    CHECK_THROWS_AS(load_json_file((dir / "absent.json").string()), FormatError);
}
