#include "calprio/calibration.hpp"

#include <algorithm>
#include <numeric>

#include "calprio/common.hpp"

namespace calprio {

std::string method_name(CalibrationMethod m) {
    switch (m) {
        case CalibrationMethod::None: return "none";
        case CalibrationMethod::LabelSmoothing: return "label_smoothing";
        case CalibrationMethod::Mixup: return "mixup";
        case CalibrationMethod::Focal: return "focal";
    }
    return "none";
}

CalibrationMethod method_from_name(const std::string& name) {
    if (name == "none") return CalibrationMethod::None;
    if (name == "label_smoothing") return CalibrationMethod::LabelSmoothing;
    if (name == "mixup") return CalibrationMethod::Mixup;
    if (name == "focal") return CalibrationMethod::Focal;
    throw ConfigError("unknown calibration method \"" + name +
                      "\" (expected none, label_smoothing, mixup, or focal)");
}

void CalibrationConfig::validate() const {
    switch (method) {
        case CalibrationMethod::None:
            break;
        case CalibrationMethod::LabelSmoothing:
            if (alpha < 0.0 || alpha >= 1.0)
                throw ConfigError("label smoothing alpha must be in [0,1), got " + std::to_string(alpha));
            break;
        case CalibrationMethod::Mixup:
            if (alpha <= 0.0)
                throw ConfigError("mixup alpha must be > 0, got " + std::to_string(alpha));
            break;
        case CalibrationMethod::Focal:
            if (gamma < 0.0)
                throw ConfigError("focal gamma must be >= 0, got " + std::to_string(gamma));
            break;
    }
}

Tensor one_hot(const std::vector<int>& labels, int K) {
    if (K < 2) throw ConfigError("one_hot needs K >= 2, got " + std::to_string(K));
    Tensor t = Tensor::zeros({static_cast<int>(labels.size()), K});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= K)
            throw DataError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(K) + ")");
        t.data[i * static_cast<std::size_t>(K) + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return t;
}

Tensor smooth_labels(const Tensor& onehot, double alpha, int K) {
    if (alpha < 0.0 || alpha >= 1.0)
        throw ConfigError("label smoothing alpha must be in [0,1), got " + std::to_string(alpha));
    if (onehot.rank() != 2 || onehot.dim(1) != K)
        throw DimensionError("smooth_labels expects one-hot rows [BxK] with K=" + std::to_string(K) +
                             ", got " + shape_str(onehot.shape));
    const int B = onehot.dim(0);
    for (int i = 0; i < B; ++i) {
        int ones = 0;
        for (int j = 0; j < K; ++j) {
            const double v = onehot.data[static_cast<std::size_t>(i) * K + j];
            if (v == 1.0) ++ones;
            else if (v != 0.0) throw ContractError("smooth_labels requires one-hot rows");
        }
        if (ones != 1) throw ContractError("smooth_labels requires exactly one 1 per row");
    }
    Tensor out = onehot;
    const double off = alpha / K;
    for (double& v : out.data) v = v * (1.0 - alpha) + off;
    return out;
}

MixedBatch mix_with(const Tensor& inputs, const std::vector<int>& labels, double lambda,
                    std::vector<int> partner) {
    const int B = inputs.dim(0);
    if (static_cast<int>(labels.size()) != B || static_cast<int>(partner.size()) != B)
        throw DimensionError("mix_with: labels/partner length must equal batch size " + std::to_string(B));
    const std::int64_t stride = inputs.size() / B;
    MixedBatch mb;
    mb.inputs = inputs;
    mb.labels_a = labels;
    mb.labels_b.resize(labels.size());
    mb.lambda = lambda;
    for (int i = 0; i < B; ++i) {
        const int j = partner[static_cast<std::size_t>(i)];
        mb.labels_b[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(j)];
        double* xi = mb.inputs.data.data() + static_cast<std::int64_t>(i) * stride;
        const double* xj = inputs.data.data() + static_cast<std::int64_t>(j) * stride;
        for (std::int64_t k = 0; k < stride; ++k)
            xi[k] = lambda * xi[k] + (1.0 - lambda) * xj[k];
    }
    mb.partner = std::move(partner);
    return mb;
}

MixedBatch mixup_batch(const Tensor& inputs, const std::vector<int>& labels, double alpha,
                       std::mt19937_64& rng) {
    if (alpha <= 0.0) throw ConfigError("mixup alpha must be > 0, got " + std::to_string(alpha));
    const int B = inputs.dim(0);
    if (static_cast<int>(labels.size()) != B)
        throw DimensionError("mixup_batch: labels length must equal batch size");
    if (B < 2) {
        MixedBatch mb;
        mb.inputs = inputs;
        mb.labels_a = labels;
        mb.labels_b = labels;
        mb.partner.assign(static_cast<std::size_t>(B), 0);
        mb.lambda = 1.0;
        mb.degenerate = true;
        return mb;
    }
    // Beta(a,a) via two gamma draws.
    std::gamma_distribution<double> gam(alpha, 1.0);
    const double g1 = gam(rng);
    const double g2 = gam(rng);
    double lambda = (g1 + g2 > 0.0) ? g1 / (g1 + g2) : 0.5;
    lambda = std::clamp(lambda, 0.0, 1.0);

    std::vector<int> partner(static_cast<std::size_t>(B));
    std::iota(partner.begin(), partner.end(), 0);
    std::shuffle(partner.begin(), partner.end(), rng);
    return mix_with(inputs, labels, lambda, std::move(partner));
}

double cross_entropy(const Tensor& probs, const Tensor& targets) {
    Tape t;
    return t.value(t.cross_entropy(t.leaf(probs), targets)).item();
}

double focal_loss(const Tensor& probs, const Tensor& onehot_targets, double gamma) {
    Tape t;
    return t.value(t.focal(t.leaf(probs), onehot_targets, gamma)).item();
}

TrainingLoss training_loss(const CalibrationConfig& config, const Model& model,
                           const Tensor& inputs, const std::vector<int>& labels,
                           std::mt19937_64& rng) {
    config.validate();
    const int K = model.config.num_classes;
    TrainingLoss out;

    if (config.method == CalibrationMethod::Mixup) {
        MixedBatch mb = mixup_batch(inputs, labels, config.alpha, rng);
        const NodeId x = out.tape.leaf(mb.inputs);
        const NodeId logits = model.forward_on_tape(out.tape, x, out.param_nodes);
        const NodeId probs = out.tape.softmax(logits);
        const NodeId ce_a = out.tape.cross_entropy(probs, one_hot(mb.labels_a, K));
        const NodeId ce_b = out.tape.cross_entropy(probs, one_hot(mb.labels_b, K));
        out.loss = out.tape.lincomb(ce_a, ce_b, mb.lambda, 1.0 - mb.lambda);
        out.lambda = mb.lambda;
        out.mixup_degenerate = mb.degenerate;
        out.loss_value = out.tape.value(out.loss).item();
        return out;
    }

    const NodeId x = out.tape.leaf(inputs);
    const NodeId logits = model.forward_on_tape(out.tape, x, out.param_nodes);
    const NodeId probs = out.tape.softmax(logits);
    switch (config.method) {
        case CalibrationMethod::None:
            out.loss = out.tape.cross_entropy(probs, one_hot(labels, K));
            break;
        case CalibrationMethod::LabelSmoothing:
            out.loss = out.tape.cross_entropy(probs, smooth_labels(one_hot(labels, K), config.alpha, K));
            break;
        case CalibrationMethod::Focal:
            out.loss = out.tape.focal(probs, one_hot(labels, K), config.gamma);
            break;
        case CalibrationMethod::Mixup:
            break;  // handled above
    }
    out.loss_value = out.tape.value(out.loss).item();
    return out;
}

}  // namespace calprio
