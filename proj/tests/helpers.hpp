#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "calprio/tensor.hpp"

namespace testutil {

inline calprio::Tensor random_tensor(const std::vector<int>& shape, std::mt19937_64& rng,
                                     double scale = 1.0) {
    calprio::Tensor t = calprio::Tensor::zeros(shape);
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : t.data) v = dist(rng);
    return t;
}

// Uniform draw from the open interval (lo, hi).
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Random probability rows: softmax of Gaussian logits, so every entry is
// strictly positive and rows sum to 1.
inline calprio::Tensor random_probs(int B, int K, std::mt19937_64& rng, double spread = 2.0) {
    calprio::Tensor t = calprio::Tensor::zeros({B, K});
    std::normal_distribution<double> dist(0.0, spread);
    for (int b = 0; b < B; ++b) {
        double mx = -1e300;
        for (int k = 0; k < K; ++k) {
            const double v = dist(rng);
            t.data[static_cast<std::size_t>(b * K + k)] = v;
            mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            double& v = t.data[static_cast<std::size_t>(b * K + k)];
            v = std::exp(v - mx);
            sum += v;
        }
        for (int k = 0; k < K; ++k) t.data[static_cast<std::size_t>(b * K + k)] /= sum;
    }
    return t;
}

inline std::vector<int> random_labels(int B, int K, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dist(0, K - 1);
    std::vector<int> labels(static_cast<std::size_t>(B));
    for (int& y : labels) y = dist(rng);
    return labels;
}

// Central-difference check of analytic gradients. `loss` evaluates the
// scalar objective at the given parameter tensors; `grad` returns the
// analytic gradients at the same point. Relative error is guarded below by
// `floor` so near-zero gradient components compare absolutely.
struct FdCheck {
    double h = 1e-5;
    double floor = 1e-4;

    double max_rel_error(const std::vector<calprio::Tensor>& params,
                         const std::function<double(const std::vector<calprio::Tensor>&)>& loss,
                         const std::vector<calprio::Tensor>& analytic) const {
        double worst = 0.0;
        std::vector<calprio::Tensor> work = params;
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t i = 0; i < work[p].data.size(); ++i) {
                const double saved = work[p].data[i];
                work[p].data[i] = saved + h;
                const double up = loss(work);
                work[p].data[i] = saved - h;
                const double down = loss(work);
                work[p].data[i] = saved;
                const double fd = (up - down) / (2.0 * h);
                const double an = analytic[p].data[i];
                const double denom = std::max({std::fabs(fd), std::fabs(an), floor});
                worst = std::max(worst, std::fabs(fd - an) / denom);
            }
        }
        return worst;
    }
};

}  // namespace testutil
