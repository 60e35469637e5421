#include "calprio/tape.hpp"

#include <cmath>
#include <cstring>

namespace calprio {

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("tape node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::affine(NodeId x, NodeId W, NodeId b) {
    Node n;
    n.op = Op::Affine;
    n.in = {x, W, b};
    n.n_in = 3;
    n.value = affine_forward(node(x).value, node(W).value, node(b).value);
    return push(std::move(n));
}

NodeId Tape::conv2d(NodeId x, NodeId kernels, int stride, int pad) {
    Node n;
    n.op = Op::Conv2d;
    n.in = {x, kernels, -1};
    n.n_in = 2;
    n.ia = stride;
    n.ib = pad;
    n.value = conv2d_forward(node(x).value, node(kernels).value, stride, pad);
    return push(std::move(n));
}

NodeId Tape::channel_bias(NodeId x, NodeId b) {
    Node n;
    n.op = Op::ChannelBias;
    n.in = {x, b, -1};
    n.n_in = 2;
    n.value = channel_bias_forward(node(x).value, node(b).value);
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.in = {x, -1, -1};
    n.n_in = 1;
    n.value = relu_forward(node(x).value);
    return push(std::move(n));
}

NodeId Tape::add(NodeId x, NodeId y) {
    Node n;
    n.op = Op::Add;
    n.in = {x, y, -1};
    n.n_in = 2;
    n.value = add_forward(node(x).value, node(y).value);
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId x, std::vector<int> new_shape) {
    Node n;
    n.op = Op::Reshape;
    n.in = {x, -1, -1};
    n.n_in = 1;
    n.value = reshape_forward(node(x).value, new_shape);
    return push(std::move(n));
}

NodeId Tape::global_avg_pool(NodeId x) {
    Node n;
    n.op = Op::GlobalAvgPool;
    n.in = {x, -1, -1};
    n.n_in = 1;
    n.value = global_avg_pool_forward(node(x).value);
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId logits) {
    Node n;
    n.op = Op::Softmax;
    n.in = {logits, -1, -1};
    n.n_in = 1;
    n.value = softmax_forward(node(logits).value);
    return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId probs, Tensor targets) {
    const Tensor& p = node(probs).value;
    if (p.rank() != 2 || !p.same_shape(targets))
        throw DimensionError("cross_entropy expects probs and targets of matching [BxK] shape, got " +
                             shape_str(p.shape) + " and " + shape_str(targets.shape));
    const int B = p.dim(0), K = p.dim(1);
    double loss = 0.0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < K; ++j) {
            const double t = targets.data[static_cast<std::size_t>(i) * K + j];
            if (t == 0.0) continue;
            const double pc = std::max(p.data[static_cast<std::size_t>(i) * K + j], kProbFloor);
            loss -= t * std::log(pc);
        }
    Node n;
    n.op = Op::CrossEntropy;
    n.in = {probs, -1, -1};
    n.n_in = 1;
    n.aux = std::move(targets);
    n.value = Tensor::scalar(loss / B);
    return push(std::move(n));
}

NodeId Tape::focal(NodeId probs, Tensor onehot_targets, double gamma) {
    const Tensor& p = node(probs).value;
    if (p.rank() != 2 || !p.same_shape(onehot_targets))
        throw DimensionError("focal expects probs and one-hot targets of matching [BxK] shape, got " +
                             shape_str(p.shape) + " and " + shape_str(onehot_targets.shape));
    if (gamma < 0.0) throw ConfigError("focal gamma must be >= 0, got " + std::to_string(gamma));
    const int B = p.dim(0), K = p.dim(1);
    double loss = 0.0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < K; ++j) {
            const double t = onehot_targets.data[static_cast<std::size_t>(i) * K + j];
            if (t == 0.0) continue;
            const double pv = p.data[static_cast<std::size_t>(i) * K + j];
            const double pc = std::max(pv, kProbFloor);
            loss -= t * std::pow(1.0 - pv, gamma) * std::log(pc);
        }
    Node n;
    n.op = Op::Focal;
    n.in = {probs, -1, -1};
    n.n_in = 1;
    n.aux = std::move(onehot_targets);
    n.fa = gamma;
    n.value = Tensor::scalar(loss / B);
    return push(std::move(n));
}

NodeId Tape::lincomb(NodeId x, NodeId y, double a, double b) {
    const Tensor& xv = node(x).value;
    const Tensor& yv = node(y).value;
    if (!xv.same_shape(yv))
        throw DimensionError("lincomb requires matching shapes, got " + shape_str(xv.shape) + " and " +
                             shape_str(yv.shape));
    Tensor out = xv;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * out.data[i] + b * yv.data[i];
    Node n;
    n.op = Op::LinComb;
    n.in = {x, y, -1};
    n.n_in = 2;
    n.fa = a;
    n.fb = b;
    n.value = std::move(out);
    return push(std::move(n));
}

void Tape::backward(NodeId loss) {
    Node& ln = nodes_.at(static_cast<std::size_t>(loss));
    if (ln.value.size() != 1)
        throw ContractError("backward requires a scalar loss node, got shape " + shape_str(ln.value.shape));

    for (Node& n : nodes_) {
        n.grad = Tensor::zeros(n.value.shape);
        n.needed = false;
    }
    ln.grad.data[0] = 1.0;
    ln.needed = true;

    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needed || n.op == Op::Leaf) continue;
        for (int i = 0; i < n.n_in; ++i) nodes_[static_cast<std::size_t>(n.in[i])].needed = true;
        const double* g = n.grad.data.data();

        switch (n.op) {
            case Op::Affine: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                Node& Wn = nodes_[static_cast<std::size_t>(n.in[1])];
                Node& bn = nodes_[static_cast<std::size_t>(n.in[2])];
                const int B = xn.value.dim(0), D = xn.value.dim(1), H = Wn.value.dim(1);
                // dx += g * W^T ; dW += x^T * g ; db += colsum(g)
                matmul_abt_acc(g, Wn.value.data.data(), xn.grad.data.data(), B, H, D);
                matmul_atb_acc(xn.value.data.data(), g, Wn.grad.data.data(), D, B, H);
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < H; ++j)
                        bn.grad.data[static_cast<std::size_t>(j)] += g[static_cast<std::int64_t>(i) * H + j];
                break;
            }
            case Op::Conv2d: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                Node& kn = nodes_[static_cast<std::size_t>(n.in[1])];
                const int B = xn.value.dim(0), C = xn.value.dim(1);
                const int H = xn.value.dim(2), W = xn.value.dim(3);
                const int F = kn.value.dim(0), k = kn.value.dim(2);
                const int OH = n.value.dim(2), OW = n.value.dim(3);
                const int ckk = C * k * k, span = OH * OW;
                std::vector<double> cols(static_cast<std::size_t>(ckk) * span);
                std::vector<double> dcols(static_cast<std::size_t>(ckk) * span);
                for (int bi = 0; bi < B; ++bi) {
                    const double* xs = xn.value.data.data() + static_cast<std::int64_t>(bi) * C * H * W;
                    const double* gs = g + static_cast<std::int64_t>(bi) * F * span;
                    im2col(xs, C, H, W, k, n.ia, n.ib, cols.data(), OH, OW);
                    // dK += g_b * cols^T
                    matmul_abt_acc(gs, cols.data(), kn.grad.data.data(), F, span, ckk);
                    // dcols = K^T * g_b, then scatter back to dx
                    std::memset(dcols.data(), 0, sizeof(double) * dcols.size());
                    matmul_atb_acc(kn.value.data.data(), gs, dcols.data(), ckk, F, span);
                    col2im_acc(dcols.data(), C, H, W, k, n.ia, n.ib,
                               xn.grad.data.data() + static_cast<std::int64_t>(bi) * C * H * W, OH, OW);
                }
                break;
            }
            case Op::ChannelBias: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                Node& bn = nodes_[static_cast<std::size_t>(n.in[1])];
                const int B = xn.value.dim(0), C = xn.value.dim(1);
                const std::int64_t hw = static_cast<std::int64_t>(xn.value.dim(2)) * xn.value.dim(3);
                for (std::size_t i = 0; i < xn.grad.data.size(); ++i) xn.grad.data[i] += g[i];
                for (int bi = 0; bi < B; ++bi)
                    for (int c = 0; c < C; ++c) {
                        const double* gp = g + (static_cast<std::int64_t>(bi) * C + c) * hw;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < hw; ++i) s += gp[i];
                        bn.grad.data[static_cast<std::size_t>(c)] += s;
                    }
                break;
            }
            case Op::Relu: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                for (std::size_t i = 0; i < xn.grad.data.size(); ++i)
                    if (xn.value.data[i] > 0.0) xn.grad.data[i] += g[i];
                break;
            }
            case Op::Add: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                Node& yn = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < xn.grad.data.size(); ++i) xn.grad.data[i] += g[i];
                for (std::size_t i = 0; i < yn.grad.data.size(); ++i) yn.grad.data[i] += g[i];
                break;
            }
            case Op::Reshape: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                for (std::size_t i = 0; i < xn.grad.data.size(); ++i) xn.grad.data[i] += g[i];
                break;
            }
            case Op::GlobalAvgPool: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                const int B = xn.value.dim(0), C = xn.value.dim(1);
                const std::int64_t hw = static_cast<std::int64_t>(xn.value.dim(2)) * xn.value.dim(3);
                const double inv = 1.0 / static_cast<double>(hw);
                for (int bi = 0; bi < B; ++bi)
                    for (int c = 0; c < C; ++c) {
                        const double gv = g[static_cast<std::int64_t>(bi) * C + c] * inv;
                        double* dst = xn.grad.data.data() + (static_cast<std::int64_t>(bi) * C + c) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) dst[i] += gv;
                    }
                break;
            }
            case Op::Softmax: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                const int B = n.value.dim(0), K = n.value.dim(1);
                // dx_i = p_i * (g_i - sum_j g_j p_j)
                for (int i = 0; i < B; ++i) {
                    const double* p = n.value.data.data() + static_cast<std::int64_t>(i) * K;
                    const double* gr = g + static_cast<std::int64_t>(i) * K;
                    double dot = 0.0;
                    for (int j = 0; j < K; ++j) dot += gr[j] * p[j];
                    double* dst = xn.grad.data.data() + static_cast<std::int64_t>(i) * K;
                    for (int j = 0; j < K; ++j) dst[j] += p[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::CrossEntropy: {
                Node& pn = nodes_[static_cast<std::size_t>(n.in[0])];
                const int B = pn.value.dim(0), K = pn.value.dim(1);
                const double scale = g[0] / B;
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < K; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * K + j;
                        const double t = n.aux.data[idx];
                        if (t == 0.0) continue;
                        const double pv = pn.value.data[idx];
                        if (pv > kProbFloor) pn.grad.data[idx] -= scale * t / pv;
                        // below the floor the clamped log is constant, gradient 0
                    }
                break;
            }
            case Op::Focal: {
                Node& pn = nodes_[static_cast<std::size_t>(n.in[0])];
                const int B = pn.value.dim(0), K = pn.value.dim(1);
                const double gamma = n.fa;
                const double scale = g[0] / B;
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < K; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * K + j;
                        if (n.aux.data[idx] == 0.0) continue;
                        const double pv = pn.value.data[idx];
                        const double pc = std::max(pv, kProbFloor);
                        const double onem = 1.0 - pv;
                        // d/dp [-(1-p)^g log pc] = g (1-p)^(g-1) log pc - (1-p)^g / pc
                        double d = 0.0;
                        if (gamma > 0.0 && onem > 0.0)
                            d += gamma * std::pow(onem, gamma - 1.0) * std::log(pc);
                        if (pv > kProbFloor) d -= std::pow(onem, gamma) / pc;
                        pn.grad.data[idx] += scale * d;
                    }
                break;
            }
            case Op::LinComb: {
                Node& xn = nodes_[static_cast<std::size_t>(n.in[0])];
                Node& yn = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < xn.grad.data.size(); ++i) xn.grad.data[i] += n.fa * g[i];
                for (std::size_t i = 0; i < yn.grad.data.size(); ++i) yn.grad.data[i] += n.fb * g[i];
                break;
            }
            case Op::Leaf:
                break;
        }
    }
}

}  // namespace calprio
