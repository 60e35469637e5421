#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "calprio/tape.hpp"
#include "helpers.hpp"

using namespace calprio;
using testutil::FdCheck;
using testutil::random_tensor;

namespace {

// Builds the same graph twice: once for analytic gradients, and once per
// finite-difference probe. `build` receives leaves made from `params` and
// returns the scalar loss node.
double fd_error(const std::vector<Tensor>& params,
                const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build) {
    const auto loss = [&](const std::vector<Tensor>& ps) {
        Tape t;
        std::vector<NodeId> leaves;
        for (const Tensor& p : ps) leaves.push_back(t.leaf(p));
        return t.value(build(t, leaves)).item();
    };
    Tape t;
    std::vector<NodeId> leaves;
    for (const Tensor& p : params) leaves.push_back(t.leaf(p));
    const NodeId l = build(t, leaves);
    t.backward(l);
    std::vector<Tensor> analytic;
    for (NodeId id : leaves) analytic.push_back(t.grad(id));
    return FdCheck{}.max_rel_error(params, loss, analytic);
}

Tensor random_target_rows(int B, int K, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros({B, K});
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int b = 0; b < B; ++b) {
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            const double v = u(rng);
            t.data[static_cast<std::size_t>(b * K + k)] = v;
            sum += v;
        }
        for (int k = 0; k < K; ++k) t.data[static_cast<std::size_t>(b * K + k)] /= sum;
    }
    return t;
}

Tensor onehot_rows(const std::vector<int>& labels, int K) {
    Tensor t = Tensor::zeros({static_cast<int>(labels.size()), K});
    for (std::size_t i = 0; i < labels.size(); ++i)
        t.data[i * static_cast<std::size_t>(K) + static_cast<std::size_t>(labels[i])] = 1.0;
    return t;
}

}  // namespace

TEST_CASE("backward requires a scalar loss node") {
    Tape t;
    const NodeId x = t.leaf(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("softmax + cross-entropy gradient matches (p - t)/B and finite differences") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const int B = 3, K = 4;
        const Tensor logits = random_tensor({B, K}, rng, 0.8);
        const Tensor targets = random_target_rows(B, K, rng);

        Tape t;
        const NodeId z = t.leaf(logits);
        const NodeId p = t.softmax(z);
        const NodeId loss = t.cross_entropy(p, targets);
        t.backward(loss);
        const Tensor& g = t.grad(z);
        const Tensor& probs = t.value(p);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            const double expect = (probs.data[static_cast<std::size_t>(i)] -
                                   targets.data[static_cast<std::size_t>(i)]) / B;
            CHECK(g.data[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-9));
        }

        const double err = fd_error({logits}, [&](Tape& tape, const std::vector<NodeId>& lv) {
            return tape.cross_entropy(tape.softmax(lv[0]), targets);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("affine gradients against finite differences") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 4; ++trial) {
        const int B = 3, D = 4, K = 3;
        const Tensor targets = random_target_rows(B, K, rng);
        const std::vector<Tensor> params = {random_tensor({B, D}, rng, 0.7),
                                            random_tensor({D, K}, rng, 0.7),
                                            random_tensor({K}, rng, 0.7)};
        const double err = fd_error(params, [&](Tape& t, const std::vector<NodeId>& lv) {
            return t.cross_entropy(t.softmax(t.affine(lv[0], lv[1], lv[2])), targets);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("conv2d gradients against finite differences") {
    std::mt19937_64 rng(23);
    struct Case {
        int B, C, H, W, F, k, stride, pad;
    };
    const Case cases[] = {{2, 2, 5, 5, 3, 3, 1, 1}, {1, 3, 6, 6, 2, 3, 2, 1},
                          {2, 1, 4, 4, 2, 3, 1, 0}, {1, 2, 5, 4, 2, 1, 1, 0}};
    for (const Case& c : cases) {
        const int OH = (c.H + 2 * c.pad - c.k) / c.stride + 1;
        const int OW = (c.W + 2 * c.pad - c.k) / c.stride + 1;
        const int flat = c.F * OH * OW;
        const Tensor targets = random_target_rows(c.B, flat, rng);
        const std::vector<Tensor> params = {random_tensor({c.B, c.C, c.H, c.W}, rng, 0.5),
                                            random_tensor({c.F, c.C, c.k, c.k}, rng, 0.5)};
        const double err = fd_error(params, [&](Tape& t, const std::vector<NodeId>& lv) {
            const NodeId conv = t.conv2d(lv[0], lv[1], c.stride, c.pad);
            return t.cross_entropy(t.softmax(t.reshape(conv, {c.B, flat})), targets);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("channel_bias and global_avg_pool gradients against finite differences") {
    std::mt19937_64 rng(24);
    const int B = 2, C = 3, H = 4, W = 4;
    const Tensor targets = random_target_rows(B, C, rng);
    const std::vector<Tensor> params = {random_tensor({B, C, H, W}, rng, 0.6),
                                        random_tensor({C}, rng, 0.6)};
    const double err = fd_error(params, [&](Tape& t, const std::vector<NodeId>& lv) {
        return t.cross_entropy(t.softmax(t.global_avg_pool(t.channel_bias(lv[0], lv[1]))), targets);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("relu gradient away from the kink") {
    std::mt19937_64 rng(25);
    const int B = 2, K = 6;
    Tensor x = random_tensor({B, K}, rng, 1.0);
    // keep every entry at least 0.1 from zero so the subgradient is unambiguous
    for (double& v : x.data) v += (v >= 0.0 ? 0.1 : -0.1);
    const Tensor targets = random_target_rows(B, K, rng);
    const double err = fd_error({x}, [&](Tape& t, const std::vector<NodeId>& lv) {
        return t.cross_entropy(t.softmax(t.relu(lv[0])), targets);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("add fan-in and diamond fan-out gradients") {
    std::mt19937_64 rng(26);
    const int B = 2, K = 4;
    const Tensor targets = random_target_rows(B, K, rng);
    const std::vector<Tensor> params = {random_tensor({B, K}, rng, 0.5),
                                        random_tensor({B, K}, rng, 0.5)};
    const double err = fd_error(params, [&](Tape& t, const std::vector<NodeId>& lv) {
        return t.cross_entropy(t.softmax(t.add(lv[0], lv[1])), targets);
    });
    CHECK(err < 1e-4);

    // x feeds the loss through two paths: add(relu(x), x)
    Tensor x = random_tensor({B, K}, rng, 0.8);
    for (double& v : x.data) v += (v >= 0.0 ? 0.1 : -0.1);
    const double diamond = fd_error({x}, [&](Tape& t, const std::vector<NodeId>& lv) {
        return t.cross_entropy(t.softmax(t.add(t.relu(lv[0]), lv[0])), targets);
    });
    CHECK(diamond < 1e-4);
}

TEST_CASE("focal loss gradients for several gamma values, including gamma in (0,1)") {
    std::mt19937_64 rng(27);
    for (const double gamma : {0.5, 1.0, 2.0, 3.0}) {
        const int B = 3, K = 4;
        const Tensor logits = random_tensor({B, K}, rng, 0.8);
        const Tensor targets = onehot_rows(testutil::random_labels(B, K, rng), K);
        const double err = fd_error({logits}, [&](Tape& t, const std::vector<NodeId>& lv) {
            return t.focal(t.softmax(lv[0]), targets, gamma);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("lincomb combines two losses with fixed coefficients") {
    std::mt19937_64 rng(28);
    const int B = 2, K = 3;
    const Tensor logits = random_tensor({B, K}, rng, 0.7);
    const Tensor ta = random_target_rows(B, K, rng);
    const Tensor tb = random_target_rows(B, K, rng);
    const double lambda = 0.37;
    const double err = fd_error({logits}, [&](Tape& t, const std::vector<NodeId>& lv) {
        const NodeId p = t.softmax(lv[0]);
        return t.lincomb(t.cross_entropy(p, ta), t.cross_entropy(p, tb), lambda, 1.0 - lambda);
    });
    CHECK(err < 1e-4);

    // value identity: lincomb(a,b) = lambda*a + (1-lambda)*b
    Tape t;
    const NodeId p = t.softmax(t.leaf(logits));
    const NodeId la = t.cross_entropy(p, ta);
    const NodeId lb = t.cross_entropy(p, tb);
    const NodeId mix = t.lincomb(la, lb, lambda, 1.0 - lambda);
    CHECK(t.value(mix).item() ==
          doctest::Approx(lambda * t.value(la).item() + (1 - lambda) * t.value(lb).item())
              .epsilon(1e-13));
}

TEST_CASE("leaves unreachable from the loss keep zero gradients") {
    std::mt19937_64 rng(29);
    Tape t;
    const NodeId used = t.leaf(random_tensor({2, 3}, rng));
    const NodeId unused = t.leaf(random_tensor({4}, rng));
    const Tensor targets = random_target_rows(2, 3, rng);
    const NodeId loss = t.cross_entropy(t.softmax(used), targets);
    t.backward(loss);
    for (double g : t.grad(unused).data) CHECK(g == 0.0);
    bool any_nonzero = false;
    for (double g : t.grad(used).data) any_nonzero |= (g != 0.0);
    CHECK(any_nonzero);
}

TEST_CASE("cross-entropy stays finite when the target class probability underflows") {
    // One logit dominates so another class's probability underflows to 0.
    Tensor logits({1, 2}, {800.0, -800.0});
    Tensor target({1, 2}, {0.0, 1.0});  // true class is the underflowed one
    Tape t;
    const NodeId loss = t.cross_entropy(t.softmax(t.leaf(logits)), target);
    const double v = t.value(loss).item();
    CHECK(std::isfinite(v));
    // clamped at the floor: loss = -log(1e-12)
    CHECK(v == doctest::Approx(-std::log(Tape::kProbFloor)).epsilon(1e-9));
    CHECK_NOTHROW(t.backward(loss));
}
