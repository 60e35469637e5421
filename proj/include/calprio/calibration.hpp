#pragma once

#include <random>
#include <string>
#include <vector>

#include "calprio/model.hpp"
#include "calprio/tape.hpp"
#include "calprio/tensor.hpp"

namespace calprio {

enum class CalibrationMethod { None, LabelSmoothing, Mixup, Focal };

std::string method_name(CalibrationMethod m);
CalibrationMethod method_from_name(const std::string& name);

// Exactly one method is active; only its own hyperparameter is read.
struct CalibrationConfig {
    CalibrationMethod method = CalibrationMethod::None;
    double alpha = 0.0;  // label smoothing: [0,1); mixup: > 0
    double gamma = 0.0;  // focal: >= 0

    void validate() const;
    static CalibrationConfig none() { return {}; }
    static CalibrationConfig label_smoothing(double a) { return {CalibrationMethod::LabelSmoothing, a, 0.0}; }
    static CalibrationConfig mixup(double a) { return {CalibrationMethod::Mixup, a, 0.0}; }
    static CalibrationConfig focal(double g) { return {CalibrationMethod::Focal, 0.0, g}; }
    bool operator==(const CalibrationConfig&) const = default;
};

// One-hot rows over K classes.
Tensor one_hot(const std::vector<int>& labels, int K);

// y_k(1-alpha) + alpha/K per row; rows stay normalized.
Tensor smooth_labels(const Tensor& onehot, double alpha, int K);

struct MixedBatch {
    Tensor inputs;              // lambda*x_i + (1-lambda)*x_j
    std::vector<int> labels_a;  // y_i
    std::vector<int> labels_b;  // y_j = y[partner[i]]
    std::vector<int> partner;   // pairing permutation of batch indices
    double lambda = 1.0;        // one draw of Beta(alpha, alpha) per batch
    bool degenerate = false;    // batch of size 1: returned unmixed, lambda = 1
};

// Deterministic mixing with an explicit lambda and pairing.
MixedBatch mix_with(const Tensor& inputs, const std::vector<int>& labels, double lambda,
                    std::vector<int> partner);
// lambda ~ Beta(alpha, alpha), partner = uniform random permutation.
MixedBatch mixup_batch(const Tensor& inputs, const std::vector<int>& labels, double alpha,
                       std::mt19937_64& rng);

// Scalar conveniences evaluated off a scratch tape (no gradients kept).
double cross_entropy(const Tensor& probs, const Tensor& targets);
double focal_loss(const Tensor& probs, const Tensor& onehot_targets, double gamma);

struct TrainingLoss {
    Tape tape;
    NodeId loss = -1;
    std::vector<NodeId> param_nodes;  // aligned with model.params
    double loss_value = 0.0;
    double lambda = 1.0;
    bool mixup_degenerate = false;
};

// Records one forward pass of `model` on the (possibly mixed) batch and the
// configured loss. none -> CE on one-hot; label_smoothing -> CE on smoothed
// targets; mixup -> lambda*CE(y_i) + (1-lambda)*CE(y_j) on mixed inputs;
// focal -> focal loss on one-hot.
TrainingLoss training_loss(const CalibrationConfig& config, const Model& model,
                           const Tensor& inputs, const std::vector<int>& labels,
                           std::mt19937_64& rng);

}  // namespace calprio
