#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "calprio/calibration.hpp"
#include "calprio/config.hpp"
#include "calprio/data.hpp"
#include "calprio/metrics.hpp"
#include "calprio/model.hpp"
#include "calprio/prioritization.hpp"

namespace calprio {

struct OptimizerState {
    OptimizerSpec spec;
    std::vector<Tensor> velocity;  // aligned with model.params
};

OptimizerState make_optimizer(const OptimizerSpec& spec, const Model& model);

// eta_min + (eta0 - eta_min) * (1 + cos(pi t / T)) / 2 for t in [0, T].
double cosine_lr(int t, int T, double lr0, double lr_min);

// g = grad + weight_decay * p; v = momentum * v + g; p -= lr * v.
void sgd_step(OptimizerState& state, std::vector<Tensor>& params,
              const std::vector<const Tensor*>& grads, double lr);
void sgd_step(OptimizerState& state, std::vector<Tensor>& params,
              const std::vector<Tensor>& grads, double lr);

struct EpochStats {
    double mean_loss = 0.0;  // per-sample mean over the subset
    int batches = 0;
};

// One pass over `subset_ids` in epoch-seeded shuffled order. A non-finite
// gradient aborts the epoch with the offending parameter named.
EpochStats train_epoch(Model& model, const Dataset& train, const std::vector<int>& subset_ids,
                       const CalibrationConfig& calibration, OptimizerState& opt, double lr,
                       std::mt19937_64& shuffle_rng, std::mt19937_64& mixup_rng, int batch_size);

struct EvalMetrics {
    double accuracy = 0.0;
    double ece = 0.0;
    ReliabilityReport reliability;
};

EvalMetrics evaluate(const Model& model, const Dataset& ds, int ece_bins, int batch_size);

struct EpochReport {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_ece = 0.0;
    int subset_size = 0;
    std::optional<double> overlap;  // vs previous epoch's subset; empty for epoch 1
};

// Wall-clock seconds; kept out of the deterministic artifacts.
struct EpochTiming {
    int epoch = 0;
    double scoring_seconds = 0.0;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
};

struct RunResult {
    std::string run_id;
    std::string run_dir;
    std::vector<EpochReport> epochs;
    std::vector<SelectionRecord> selections;
    std::vector<EpochTiming> timing;
    EvalMetrics test;
    Model model;  // state at the end of training
};

// Executes the full protocol: warm-up on the whole training split, then
// per-epoch scoring (current model, or the frozen target when guidance is
// configured) and subset selection, SGD with cosine annealing, per-epoch
// validation metrics, final test metrics.
//
// Artifacts under <output_dir>/<run_id>/: manifest.json, epochs.csv,
// selections.jsonl, timing.csv, reliability.csv, final.json,
// checkpoint.bin. Deterministic files (epochs.csv, selections.jsonl,
// reliability.csv, final.json, checkpoint.bin) are byte-identical across
// runs with identical configs; timestamps and timing stay in manifest.json
// and timing.csv. On error the manifest is flushed with status
// "incomplete" and the error is rethrown.
RunResult run_experiment(RunConfig config);

// Default run id: digest of the effective config.
std::string derive_run_id(const RunConfig& config);

}  // namespace calprio
