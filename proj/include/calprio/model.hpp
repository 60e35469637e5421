#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calprio/tape.hpp"
#include "calprio/tensor.hpp"

namespace calprio {

// kind "mlp": `depth` hidden relu layers of `width`, input flattened.
// kind "rescnn": 3x3 conv stem to `width` channels, then `depth` residual
// blocks; every second block doubles channels and halves the spatial size
// (stride-2 first conv + 1x1 projection on the skip), global average pool,
// affine head. Stand-ins for the full-size residual networks: the capacity
// ordering between configs is what matters, not the exact layer recipe.
struct ModelConfig {
    std::string kind = "rescnn";
    int num_classes = 10;
    int width = 8;
    int depth = 2;  // hidden layers (mlp) or residual blocks (rescnn)
    std::array<int, 3> input_shape{1, 8, 8};  // C,H,W; mlp flattens
    std::uint64_t seed = 1;

    void validate() const;
    std::int64_t flat_input_dim() const {
        return static_cast<std::int64_t>(input_shape[0]) * input_shape[1] * input_shape[2];
    }
    bool operator==(const ModelConfig&) const = default;
};

// Closed-form parameter count implied by a config.
std::int64_t config_parameter_count(const ModelConfig& config);

struct Model {
    ModelConfig config;
    std::vector<Tensor> params;
    std::vector<std::string> param_names;

    std::int64_t parameter_count() const;

    // Evaluation mode: logits for a batch, no tape recorded.
    Tensor forward(const Tensor& batch) const;
    // softmax(forward(batch)); rows sum to 1.
    Tensor predict_proba(const Tensor& batch) const;

    // Training mode: registers parameters as tape leaves and records the
    // forward pass. param_nodes[i] is the leaf for params[i].
    NodeId forward_on_tape(Tape& tape, NodeId input, std::vector<NodeId>& param_nodes) const;

    std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& flat);
};

// Parameters initialized deterministically from config.seed: scaled-uniform
// fan-in init, zero biases, zero-initialized classifier head (a fresh model
// predicts the uniform distribution). Second conv of each residual block is
// down-scaled by 1/sqrt(2*depth) to keep the skip stream stable without
// batch normalization.
Model build_model(const ModelConfig& config);

struct Checkpoint {
    ModelConfig config;
    std::vector<double> parameters;
    nlohmann::json metadata;  // epochs, calibration used, final val ECE/accuracy, ...
};

// Binary format, little-endian:
//   magic "CALPRCK1" (8 bytes) | u32 version | u32 meta_len | meta JSON
//   | u64 param_count | param_count * f64
// Round trips are byte-exact.
void save_checkpoint(const Model& model, const nlohmann::json& metadata, const std::string& path);
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<int> expected_classes = std::nullopt);
Model model_from_checkpoint(const Checkpoint& ck);

}  // namespace calprio
