#include "calprio/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "calprio/guidance.hpp"

namespace calprio {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string iso8601_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::pair<Dataset, Dataset> load_pool_and_test(const DatasetSpec& spec) {
    if (spec.kind == "synthetic")
        return make_synthetic_pair(spec.num_classes, spec.num_samples, spec.test_samples,
                                   spec.input_shape, spec.separation, spec.seed);
    const std::string dir = dataset_directory(spec);
    if (spec.kind == "cifar10") return load_cifar10_binary(dir);
    return load_cifar100_binary(dir);
}

// Batched class posteriors for a whole dataset, rows in id order.
Tensor dataset_probs(const Model& model, const Dataset& ds, int batch_size) {
    const int n = static_cast<int>(ds.size());
    const int K = ds.num_classes;
    Tensor probs = Tensor::zeros({n, K});
    std::vector<int> idx;
    for (int lo = 0; lo < n; lo += batch_size) {
        const int hi = std::min(lo + batch_size, n);
        idx.resize(static_cast<std::size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor p = model.predict_proba(ds.batch(idx));
        std::copy(p.data.begin(), p.data.end(),
                  probs.data.begin() + static_cast<std::int64_t>(lo) * K);
    }
    return probs;
}

}  // namespace

OptimizerState make_optimizer(const OptimizerSpec& spec, const Model& model) {
    spec.validate();
    OptimizerState state;
    state.spec = spec;
    state.velocity.reserve(model.params.size());
    for (const Tensor& p : model.params) state.velocity.push_back(Tensor::zeros(p.shape));
    return state;
}

double cosine_lr(int t, int T, double lr0, double lr_min) {
    if (T == 0) throw ContractError("cosine_lr: total epochs T must be > 0");
    if (t < 0 || t > T)
        throw ContractError("cosine_lr: epoch index " + std::to_string(t) + " outside [0," +
                            std::to_string(T) + "]");
    constexpr double pi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(pi * t / T));
}

void sgd_step(OptimizerState& state, std::vector<Tensor>& params,
              const std::vector<const Tensor*>& grads, double lr) {
    if (params.size() != state.velocity.size() || params.size() != grads.size())
        throw ContractError("sgd_step: parameter, velocity, and gradient counts differ");
    const double mu = state.spec.momentum, wd = state.spec.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        Tensor& v = state.velocity[i];
        const Tensor& g = *grads[i];
        if (g.shape != p.shape)
            throw DimensionError("sgd_step: gradient shape mismatch at parameter " +
                                 std::to_string(i));
        for (std::int64_t k = 0; k < p.size(); ++k) {
            const double gk = g.data[k];
            if (!std::isfinite(gk))
                throw NumericsError("non-finite gradient in parameter " + std::to_string(i) +
                                    " at element " + std::to_string(k));
            const double step = gk + wd * p.data[k];
            v.data[k] = mu * v.data[k] + step;
            p.data[k] -= lr * v.data[k];
        }
    }
}

void sgd_step(OptimizerState& state, std::vector<Tensor>& params,
              const std::vector<Tensor>& grads, double lr) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(grads.size());
    for (const Tensor& g : grads) ptrs.push_back(&g);
    sgd_step(state, params, ptrs, lr);
}

EpochStats train_epoch(Model& model, const Dataset& train, const std::vector<int>& subset_ids,
                       const CalibrationConfig& calibration, OptimizerState& opt, double lr,
                       std::mt19937_64& shuffle_rng, std::mt19937_64& mixup_rng, int batch_size) {
    if (subset_ids.empty()) throw ContractError("train_epoch: subset is empty");
    if (batch_size < 1) throw ContractError("train_epoch: batch_size must be >= 1");

    std::vector<int> order = subset_ids;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    double loss_sum = 0.0;
    long samples = 0;
    std::vector<int> batch_ids;
    std::vector<const Tensor*> grads(model.params.size());
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(lo + static_cast<std::size_t>(batch_size), order.size());
        batch_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
        const Tensor inputs = train.batch(batch_ids);
        std::vector<int> labels(batch_ids.size());
        for (std::size_t i = 0; i < batch_ids.size(); ++i)
            labels[i] = train.labels[static_cast<std::size_t>(batch_ids[i])];

        TrainingLoss tl = training_loss(calibration, model, inputs, labels, mixup_rng);
        if (!std::isfinite(tl.loss_value))
            throw NumericsError("non-finite training loss in batch starting at sample index " +
                                std::to_string(lo));
        tl.tape.backward(tl.loss);
        for (std::size_t i = 0; i < model.params.size(); ++i)
            grads[i] = &tl.tape.grad(tl.param_nodes[i]);
        sgd_step(opt, model.params, grads, lr);

        loss_sum += tl.loss_value * static_cast<double>(batch_ids.size());
        samples += static_cast<long>(batch_ids.size());
        stats.batches += 1;
    }
    stats.mean_loss = loss_sum / static_cast<double>(samples);
    return stats;
}

EvalMetrics evaluate(const Model& model, const Dataset& ds, int ece_bins, int batch_size) {
    if (ds.size() == 0) throw ContractError("evaluate: dataset is empty");
    const Tensor probs = dataset_probs(model, ds, batch_size);
    EvalMetrics m;
    m.accuracy = accuracy(probs, ds.labels);
    m.reliability = compute_ece(probs, ds.labels, ece_bins);
    m.ece = m.reliability.ece;
    return m;
}

std::string derive_run_id(const RunConfig& config) {
    RunConfig canon = config;
    canon.run_id.clear();
    canon.output_dir.clear();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run-%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_to_json(canon).dump())));
    return buf;
}

RunResult run_experiment(RunConfig config) {
    config.resolve_fraction_overrides();
    config.validate();
    if (config.run_id.empty()) config.run_id = derive_run_id(config);

    const fs::path run_dir = fs::path(config.output_dir) / config.run_id;
    fs::create_directories(run_dir);

    nlohmann::json manifest;
    manifest["run_id"] = config.run_id;
    manifest["version"] = "0.1.0";
    manifest["started_at"] = iso8601_now();
    manifest["status"] = "incomplete";
    manifest["config"] = config_to_json(config);
    manifest["artifacts"] = {{"epochs_csv", "epochs.csv"},
                             {"selections_jsonl", "selections.jsonl"},
                             {"timing_csv", "timing.csv"},
                             {"reliability_csv", "reliability.csv"},
                             {"final_json", "final.json"},
                             {"checkpoint", "checkpoint.bin"}};
    const auto flush_manifest = [&] {
        std::ofstream out(run_dir / "manifest.json");
        out << manifest.dump(2) << "\n";
    };

    const auto run_start = Clock::now();
    RunResult result;
    result.run_id = config.run_id;
    result.run_dir = run_dir.string();

    try {
        auto [pool, test] = load_pool_and_test(config.dataset);
        auto [train, val] = split_train_val(pool, config.split.fraction, config.split.seed);
        const NormStats stats = compute_norm_stats(train);
        apply_normalization(train, stats);
        apply_normalization(val, stats);
        apply_normalization(test, stats);
        manifest["normalization"] = {{"mean", stats.mean}, {"std", stats.std}};

        ModelConfig mc;
        mc.kind = config.model.kind;
        mc.num_classes = train.num_classes;
        mc.width = config.model.width;
        mc.depth = config.model.depth;
        mc.input_shape = train.input_shape;
        mc.seed = config.model.seed;
        Model model = build_model(mc);
        manifest["parameter_count"] = model.parameter_count();
        flush_manifest();

        std::optional<TargetGuide> guide;
        if (config.selection.guidance) {
            guide = prepare_target(config.selection.guidance->checkpoint, train.num_classes,
                                   static_cast<int>(train.size()),
                                   config.selection.guidance->policy, model.parameter_count());
        }

        OptimizerState opt = make_optimizer(config.optimizer, model);
        SubsetSchedule schedule{config.selection.warmup_epochs, config.selection.fraction,
                                static_cast<int>(train.size())};
        schedule.validate();

        std::ofstream epochs_csv(run_dir / "epochs.csv");
        epochs_csv << "epoch,lr,train_loss,val_accuracy,val_ece,subset_size,overlap\n";
        std::ofstream selections_jsonl(run_dir / "selections.jsonl");
        std::ofstream timing_csv(run_dir / "timing.csv");
        timing_csv << "epoch,scoring_seconds,train_seconds,eval_seconds\n";

        const int T = config.training.epochs;
        std::vector<int> prev_ids;
        for (int epoch = 1; epoch <= T; ++epoch) {
            const double lr =
                cosine_lr(epoch - 1, T, config.optimizer.lr, config.optimizer.min_lr);
            EpochTiming timing;
            timing.epoch = epoch;

            // Scoring with the model as of the previous epoch's end (the
            // state right now), or the frozen target when guided.
            const std::vector<double>* scores = nullptr;
            std::vector<double> own_scores;
            const bool selective = epoch > config.selection.warmup_epochs &&
                                   schedule.budget(epoch) < schedule.pool_size;
            if (selective && config.selection.criterion == Criterion::MaxEntropy) {
                const auto t0 = Clock::now();
                if (guide) {
                    scores = &target_scores(*guide, train, config.training.eval_batch_size);
                } else {
                    own_scores = score_pool(model, train, config.training.eval_batch_size);
                    scores = &own_scores;
                }
                timing.scoring_seconds = seconds_since(t0);
            }
            std::mt19937_64 select_rng = make_rng(config.training.seed,
                                                  0x30000 + static_cast<std::uint64_t>(epoch));
            SelectionRecord rec =
                epoch_subset(schedule, epoch, config.selection.criterion, scores, &select_rng,
                             train.labels, train.num_classes, prev_ids.empty() ? nullptr : &prev_ids);

            std::mt19937_64 shuffle_rng = make_rng(config.training.seed,
                                                   0x10000 + static_cast<std::uint64_t>(epoch));
            std::mt19937_64 mixup_rng = make_rng(config.training.seed,
                                                 0x20000 + static_cast<std::uint64_t>(epoch));
            const auto t1 = Clock::now();
            const EpochStats es =
                train_epoch(model, train, rec.selected, config.calibration, opt, lr, shuffle_rng,
                            mixup_rng, config.training.batch_size);
            timing.train_seconds = seconds_since(t1);

            const auto t2 = Clock::now();
            const EvalMetrics vm =
                evaluate(model, val, config.metrics.ece_bins, config.training.eval_batch_size);
            timing.eval_seconds = seconds_since(t2);

            EpochReport report;
            report.epoch = epoch;
            report.lr = lr;
            report.train_loss = es.mean_loss;
            report.val_accuracy = vm.accuracy;
            report.val_ece = vm.ece;
            report.subset_size = static_cast<int>(rec.selected.size());
            report.overlap = rec.overlap_prev;

            epochs_csv << epoch << ',' << fmt17(lr) << ',' << fmt17(es.mean_loss) << ','
                       << fmt17(vm.accuracy) << ',' << fmt17(vm.ece) << ','
                       << report.subset_size << ','
                       << (report.overlap ? fmt17(*report.overlap) : std::string()) << '\n'
                       << std::flush;
            selections_jsonl << rec.to_jsonl() << '\n' << std::flush;
            timing_csv << epoch << ',' << fmt17(timing.scoring_seconds) << ','
                       << fmt17(timing.train_seconds) << ',' << fmt17(timing.eval_seconds) << '\n'
                       << std::flush;

            prev_ids = rec.selected;
            result.epochs.push_back(report);
            result.selections.push_back(std::move(rec));
            result.timing.push_back(timing);
        }

        result.test = evaluate(model, test, config.metrics.ece_bins,
                               config.training.eval_batch_size);
        {
            std::ofstream rel(run_dir / "reliability.csv");
            rel << result.test.reliability.to_csv();
        }
        {
            nlohmann::json fin;
            fin["epochs"] = T;
            fin["ece_bins"] = config.metrics.ece_bins;
            fin["parameter_count"] = model.parameter_count();
            fin["final_train_loss"] = result.epochs.back().train_loss;
            fin["final_val_accuracy"] = result.epochs.back().val_accuracy;
            fin["final_val_ece"] = result.epochs.back().val_ece;
            fin["test_accuracy"] = result.test.accuracy;
            fin["test_ece"] = result.test.ece;
            std::ofstream out(run_dir / "final.json");
            out << fin.dump(2) << "\n";
        }
        {
            nlohmann::json meta;
            meta["calibration"] = {{"method", method_name(config.calibration.method)},
                                   {"alpha", config.calibration.alpha},
                                   {"gamma", config.calibration.gamma}};
            meta["epochs"] = T;
            meta["val_accuracy"] = result.epochs.back().val_accuracy;
            meta["val_ece"] = result.epochs.back().val_ece;
            meta["test_accuracy"] = result.test.accuracy;
            meta["test_ece"] = result.test.ece;
            save_checkpoint(model, meta, (run_dir / "checkpoint.bin").string());
        }

        result.model = std::move(model);
        manifest["status"] = "complete";
        manifest["finished_at"] = iso8601_now();
        manifest["wall_seconds"] = seconds_since(run_start);
        flush_manifest();
    } catch (const std::exception& e) {
        manifest["status"] = "incomplete";
        manifest["error"] = e.what();
        manifest["finished_at"] = iso8601_now();
        manifest["wall_seconds"] = seconds_since(run_start);
        flush_manifest();
        throw;
    }
    return result;
}

}  // namespace calprio
