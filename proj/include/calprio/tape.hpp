#pragma once

#include <array>
#include <vector>

#include "calprio/tensor.hpp"

namespace calprio {

using NodeId = int;

// Define-by-run tape. Node creation order is the topological order, so one
// reverse pass over the node list visits every node exactly once. A tape is
// built fresh for each forward pass and discarded after backward().
class Tape {
public:
    enum class Op {
        Leaf,
        Affine,        // inputs: x, W, b
        Conv2d,        // inputs: x, kernels; ia = stride, ib = pad
        ChannelBias,   // inputs: x, b
        Relu,
        Add,
        Reshape,
        GlobalAvgPool,
        Softmax,
        CrossEntropy,  // input: probs; aux = target distribution [BxK]
        Focal,         // input: probs; aux = one-hot targets [BxK]; fa = gamma
        LinComb,       // inputs: x, y; out = fa*x + fb*y
    };

    struct Node {
        Op op = Op::Leaf;
        std::array<NodeId, 3> in{-1, -1, -1};
        int n_in = 0;
        Tensor value;
        Tensor grad;        // allocated by backward()
        bool needed = false;
        Tensor aux;         // op-specific constant (targets, cached im2col columns)
        double fa = 0.0, fb = 0.0;
        int ia = 0, ib = 0;
    };

    NodeId leaf(Tensor value);

    NodeId affine(NodeId x, NodeId W, NodeId b);
    NodeId conv2d(NodeId x, NodeId kernels, int stride, int pad);
    NodeId channel_bias(NodeId x, NodeId b);
    NodeId relu(NodeId x);
    NodeId add(NodeId x, NodeId y);
    NodeId reshape(NodeId x, std::vector<int> new_shape);
    NodeId global_avg_pool(NodeId x);
    NodeId softmax(NodeId logits);
    // Mean over the batch of -sum_k target[k] * log(max(prob[k], kProbFloor)).
    NodeId cross_entropy(NodeId probs, Tensor targets);
    // Mean over the batch of -(1-p)^gamma * log(max(p, kProbFloor)) for the
    // true-class probability p taken from the one-hot rows of `targets`.
    NodeId focal(NodeId probs, Tensor onehot_targets, double gamma);
    NodeId lincomb(NodeId x, NodeId y, double a, double b);

    // Accumulates gradients of `loss` (a scalar node) into every node’s grad.
    // Nodes unreachable from the loss keep zero gradients.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    const Tensor& grad(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }
    std::size_t node_count() const { return nodes_.size(); }

    static constexpr double kProbFloor = 1e-12;

private:
    NodeId push(Node n);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
};

}  // namespace calprio
