#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "calprio/config.hpp"
#include "calprio/trainer.hpp"

namespace calprio {

nlohmann::json load_json_file(const std::string& path);

// One point of the sweep's Cartesian product. Sweepable keys: alpha, gamma,
// fraction, seed. "seed" sets split, model, and training seeds together (a
// replicate index); the dataset itself stays fixed.
struct SweepCell {
    std::map<std::string, double> assignment;
    std::string run_id;
    std::string run_dir;
    bool ok = false;
    std::string error;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::string summary_csv;
    std::string table_csv;
};

RunConfig apply_grid_assignment(RunConfig base, const std::map<std::string, double>& assignment);

// Runs every grid point sequentially under base.output_dir; failed cells are
// recorded and the sweep continues. An empty grid runs the base config once.
SweepResult run_sweep(const RunConfig& base, const nlohmann::json& grid);

// Rebuilds summary.csv (one row per run) and table.csv (mean/std grouped by
// method, fraction, alpha, gamma) purely from each run's manifest.json and
// final.json. Returns the two paths.
std::pair<std::string, std::string> write_sweep_summary(const std::vector<std::string>& run_dirs,
                                                        const std::string& out_dir);

struct ReportBundle {
    std::vector<std::string> files;
    bool complete = true;
};

// Plot-data bundle under <run_dir>/report/: class_distribution.csv,
// balance.csv, overlap.csv, val_accuracy.csv, reliability.csv. An
// incomplete run yields whatever parses, with a warning on stderr.
ReportBundle write_report(const std::string& run_dir);

}  // namespace calprio
