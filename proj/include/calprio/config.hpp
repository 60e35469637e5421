#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "calprio/calibration.hpp"
#include "calprio/guidance.hpp"
#include "calprio/model.hpp"
#include "calprio/prioritization.hpp"

namespace calprio {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | cifar10 | cifar100
    // synthetic only
    int num_classes = 10;
    int num_samples = 10000;
    int test_samples = 2000;
    std::array<int, 3> input_shape{1, 8, 8};
    double separation = 3.0;
    std::uint64_t seed = 1;
    // cifar only; empty means the CALPRIO_DATA_DIR environment variable
    std::string data_dir;

    void validate() const;
};

struct SplitSpec {
    double fraction = 0.9;
    std::uint64_t seed = 2;
};

struct ModelSpec {
    std::string kind = "rescnn";
    int width = 8;
    int depth = 2;
    std::uint64_t seed = 3;
};

struct GuidanceSpec {
    std::string checkpoint;  // required when guidance is enabled
    ScorePolicy policy = ScorePolicy::Once;
};

struct SelectionSpec {
    Criterion criterion = Criterion::MaxEntropy;
    double fraction = 0.3;
    int warmup_epochs = 10;
    std::optional<GuidanceSpec> guidance;
};

struct OptimizerSpec {
    double lr = 0.01;
    double min_lr = 0.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    void validate() const;
};

struct TrainingSpec {
    int epochs = 40;
    int batch_size = 128;
    int eval_batch_size = 256;
    std::uint64_t seed = 4;
};

struct MetricsSpec {
    int ece_bins = 15;
};

// Per-subset-fraction hyperparameter overrides: applied to the active
// method's own parameter when the selection fraction matches a key.
struct FractionMap {
    std::map<double, double> values;
    std::optional<double> lookup(double fraction) const;
};

struct RunConfig {
    std::string run_id;  // defaults to a digest of the config
    std::string output_dir = "runs";
    DatasetSpec dataset;
    SplitSpec split;
    ModelSpec model;
    CalibrationConfig calibration;
    FractionMap alpha_by_fraction;  // label smoothing / mixup alpha
    FractionMap gamma_by_fraction;  // focal gamma
    SelectionSpec selection;
    OptimizerSpec optimizer;
    TrainingSpec training;
    MetricsSpec metrics;

    void validate() const;
    // Applies the per-fraction maps to `calibration` for the configured
    // selection fraction. Run before training so the manifest records the
    // effective values.
    void resolve_fraction_overrides();
};

// Strict JSON schema: unknown keys anywhere are rejected with the offending
// path; defaults are materialized so to_json(parse(x)) is complete.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::string& path);

// Resolves dataset.data_dir, falling back to CALPRIO_DATA_DIR.
std::string dataset_directory(const DatasetSpec& spec);

}  // namespace calprio
