#include "calprio/expcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>

namespace calprio {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

struct RunSummary {
    std::string run_id;
    std::string status;
    std::string method;
    double fraction = 0.0, alpha = 0.0, gamma = 0.0;
    std::uint64_t split_seed = 0, model_seed = 0, training_seed = 0;
    bool has_metrics = false;
    double test_accuracy = 0.0, test_ece = 0.0;
};

RunSummary read_run_summary(const std::string& run_dir) {
    const json manifest = load_json_file((fs::path(run_dir) / "manifest.json").string());
    RunSummary s;
    s.run_id = manifest.at("run_id").get<std::string>();
    s.status = manifest.at("status").get<std::string>();
    const json& cfg = manifest.at("config");
    s.method = cfg.at("calibration").at("method").get<std::string>();
    s.alpha = cfg.at("calibration").at("alpha").get<double>();
    s.gamma = cfg.at("calibration").at("gamma").get<double>();
    s.fraction = cfg.at("selection").at("fraction").get<double>();
    s.split_seed = cfg.at("split").at("seed").get<std::uint64_t>();
    s.model_seed = cfg.at("model").at("seed").get<std::uint64_t>();
    s.training_seed = cfg.at("training").at("seed").get<std::uint64_t>();
    const fs::path final_path = fs::path(run_dir) / "final.json";
    if (fs::exists(final_path)) {
        const json fin = load_json_file(final_path.string());
        s.test_accuracy = fin.at("test_accuracy").get<double>();
        s.test_ece = fin.at("test_ece").get<double>();
        s.has_metrics = true;
    }
    return s;
}

}  // namespace

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open JSON file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + " is not valid JSON: " + e.what());
    }
    return j;
}

RunConfig apply_grid_assignment(RunConfig base, const std::map<std::string, double>& assignment) {
    base.run_id.clear();  // cell ids derive from the effective config
    for (const auto& [key, value] : assignment) {
        if (key == "alpha") {
            base.calibration.alpha = value;
        } else if (key == "gamma") {
            base.calibration.gamma = value;
        } else if (key == "fraction") {
            base.selection.fraction = value;
        } else if (key == "seed") {
            const auto seed = static_cast<std::uint64_t>(value);
            base.split.seed = seed;
            base.model.seed = seed;
            base.training.seed = seed;
        } else {
            throw ConfigError("grid key \"" + key +
                              "\" is not sweepable (expected alpha, gamma, fraction, or seed)");
        }
    }
    return base;
}

SweepResult run_sweep(const RunConfig& base, const json& grid) {
    if (!grid.is_object()) throw ConfigError("sweep grid must be a JSON object of arrays");
    std::vector<std::string> keys;
    std::vector<std::vector<double>> values;
    for (auto it = grid.begin(); it != grid.end(); ++it) {
        if (it.key() != "alpha" && it.key() != "gamma" && it.key() != "fraction" &&
            it.key() != "seed")
            throw ConfigError("unknown sweep grid key \"" + it.key() +
                              "\"; expected alpha, gamma, fraction, or seed");
        if (!it.value().is_array() || it.value().empty())
            throw ConfigError("grid key \"" + it.key() + "\" must map to a nonempty array");
        keys.push_back(it.key());
        std::vector<double> vs;
        for (const json& v : it.value()) {
            if (!v.is_number()) throw ConfigError("grid key \"" + it.key() + "\" has a non-number");
            vs.push_back(v.get<double>());
        }
        values.push_back(std::move(vs));
    }

    // Cartesian product in odometer order; empty grid = the base run alone.
    std::vector<std::map<std::string, double>> assignments;
    if (keys.empty()) {
        assignments.emplace_back();
    } else {
        std::vector<std::size_t> idx(keys.size(), 0);
        for (bool done = false; !done;) {
            std::map<std::string, double> a;
            for (std::size_t k = 0; k < keys.size(); ++k) a[keys[k]] = values[k][idx[k]];
            assignments.push_back(std::move(a));
            std::size_t k = keys.size();
            while (true) {
                if (k == 0) {
                    done = true;
                    break;
                }
                --k;
                if (++idx[k] < values[k].size()) break;
                idx[k] = 0;
            }
        }
    }

    SweepResult result;
    std::vector<std::string> run_dirs;
    for (const auto& assignment : assignments) {
        SweepCell cell;
        cell.assignment = assignment;
        try {
            RunConfig cfg = apply_grid_assignment(base, assignment);
            const RunResult run = run_experiment(std::move(cfg));
            cell.run_id = run.run_id;
            cell.run_dir = run.run_dir;
            cell.ok = true;
            run_dirs.push_back(run.run_dir);
        } catch (const std::exception& e) {
            cell.error = e.what();
            std::fprintf(stderr, "sweep cell failed: %s\n", e.what());
        }
        result.cells.push_back(std::move(cell));
    }

    auto [summary, table] = write_sweep_summary(run_dirs, base.output_dir);
    result.summary_csv = summary;
    result.table_csv = table;
    return result;
}

std::pair<std::string, std::string> write_sweep_summary(const std::vector<std::string>& run_dirs,
                                                        const std::string& out_dir) {
    std::vector<RunSummary> rows;
    for (const std::string& dir : run_dirs) rows.push_back(read_run_summary(dir));
    std::sort(rows.begin(), rows.end(), [](const RunSummary& a, const RunSummary& b) {
        return std::tie(a.method, a.fraction, a.alpha, a.gamma, a.split_seed, a.run_id) <
               std::tie(b.method, b.fraction, b.alpha, b.gamma, b.split_seed, b.run_id);
    });

    fs::create_directories(out_dir);
    const fs::path summary_path = fs::path(out_dir) / "summary.csv";
    {
        std::ofstream out(summary_path);
        out << "run_id,status,method,fraction,alpha,gamma,split_seed,model_seed,training_seed,"
               "test_accuracy,test_ece\n";
        for (const RunSummary& r : rows) {
            out << r.run_id << ',' << r.status << ',' << r.method << ',' << fmt17(r.fraction)
                << ',' << fmt17(r.alpha) << ',' << fmt17(r.gamma) << ',' << r.split_seed << ','
                << r.model_seed << ',' << r.training_seed << ','
                << (r.has_metrics ? fmt17(r.test_accuracy) : std::string()) << ','
                << (r.has_metrics ? fmt17(r.test_ece) : std::string()) << '\n';
        }
    }

    // Aggregate rows in Tables 1-2 shape: one line per configuration cell,
    // mean and population std over its completed replicates.
    const fs::path table_path = fs::path(out_dir) / "table.csv";
    {
        struct Agg {
            std::vector<double> acc, ece;
        };
        std::map<std::tuple<std::string, double, double, double>, Agg> groups;
        for (const RunSummary& r : rows)
            if (r.status == "complete" && r.has_metrics) {
                Agg& g = groups[{r.method, r.fraction, r.alpha, r.gamma}];
                g.acc.push_back(r.test_accuracy);
                g.ece.push_back(r.test_ece);
            }
        const auto mean_of = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        const auto std_of = [&](const std::vector<double>& v) {
            const double m = mean_of(v);
            double s = 0.0;
            for (double x : v) s += (x - m) * (x - m);
            return std::sqrt(s / static_cast<double>(v.size()));
        };
        std::ofstream out(table_path);
        out << "method,fraction,alpha,gamma,runs,mean_test_accuracy,std_test_accuracy,"
               "mean_test_ece,std_test_ece\n";
        for (const auto& [key, agg] : groups) {
            const auto& [method, fraction, alpha, gamma] = key;
            out << method << ',' << fmt17(fraction) << ',' << fmt17(alpha) << ',' << fmt17(gamma)
                << ',' << agg.acc.size() << ',' << fmt17(mean_of(agg.acc)) << ','
                << fmt17(std_of(agg.acc)) << ',' << fmt17(mean_of(agg.ece)) << ','
                << fmt17(std_of(agg.ece)) << '\n';
        }
    }
    return {summary_path.string(), table_path.string()};
}

ReportBundle write_report(const std::string& run_dir) {
    ReportBundle bundle;
    const fs::path dir(run_dir);
    const json manifest = load_json_file((dir / "manifest.json").string());
    if (manifest.at("status").get<std::string>() != "complete") {
        std::fprintf(stderr, "warning: run %s is incomplete; report bundle may be partial\n",
                     run_dir.c_str());
        bundle.complete = false;
    }
    const fs::path report_dir = dir / "report";
    fs::create_directories(report_dir);

    // Selection records: per-epoch class counts, balance, overlap.
    if (std::ifstream sel(dir / "selections.jsonl"); sel) {
        std::ofstream dist(report_dir / "class_distribution.csv");
        std::ofstream balance(report_dir / "balance.csv");
        std::ofstream overlap(report_dir / "overlap.csv");
        balance << "epoch,balance_ratio\n";
        overlap << "epoch,overlap\n";
        bool wrote_header = false;
        std::string line;
        while (std::getline(sel, line)) {
            if (line.empty()) continue;
            const json rec = json::parse(line);
            const auto hist = rec.at("class_histogram").get<std::vector<long>>();
            if (!wrote_header) {
                dist << "epoch";
                for (std::size_t k = 0; k < hist.size(); ++k) dist << ",class_" << k;
                dist << '\n';
                wrote_header = true;
            }
            const int epoch = rec.at("epoch").get<int>();
            dist << epoch;
            for (long c : hist) dist << ',' << c;
            dist << '\n';
            const long mx = *std::max_element(hist.begin(), hist.end());
            const long mn = *std::min_element(hist.begin(), hist.end());
            balance << epoch << ','
                    << fmt17(static_cast<double>(mx) / static_cast<double>(mn)) << '\n';
            if (!rec.at("overlap_prev").is_null())
                overlap << epoch << ',' << fmt17(rec.at("overlap_prev").get<double>()) << '\n';
        }
        bundle.files.push_back((report_dir / "class_distribution.csv").string());
        bundle.files.push_back((report_dir / "balance.csv").string());
        bundle.files.push_back((report_dir / "overlap.csv").string());
    } else {
        std::fprintf(stderr, "warning: %s/selections.jsonl missing\n", run_dir.c_str());
        bundle.complete = false;
    }

    if (std::ifstream ep(dir / "epochs.csv"); ep) {
        std::ofstream acc(report_dir / "val_accuracy.csv");
        acc << "epoch,val_accuracy\n";
        std::string line;
        std::getline(ep, line);  // header
        while (std::getline(ep, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() >= 4) acc << fields[0] << ',' << fields[3] << '\n';
        }
        bundle.files.push_back((report_dir / "val_accuracy.csv").string());
    } else {
        std::fprintf(stderr, "warning: %s/epochs.csv missing\n", run_dir.c_str());
        bundle.complete = false;
    }

    if (fs::exists(dir / "reliability.csv")) {
        fs::copy_file(dir / "reliability.csv", report_dir / "reliability.csv",
                      fs::copy_options::overwrite_existing);
        bundle.files.push_back((report_dir / "reliability.csv").string());
    } else {
        std::fprintf(stderr, "warning: %s/reliability.csv missing\n", run_dir.c_str());
        bundle.complete = false;
    }
    return bundle;
}

}  // namespace calprio
