#pragma once

#include <string>
#include <vector>

#include "calprio/tensor.hpp"

namespace calprio {

struct ReliabilityBin {
    double lo = 0.0, hi = 0.0;   // confidence interval (lo, hi]
    long count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

// ECE = sum_m (count_m / N) * |acc_m - conf_m| over M equal-width bins of
// (0,1]; a confidence of exactly 0 lands in bin 1. Empty bins contribute 0.
struct ReliabilityReport {
    int num_bins = 0;
    long total = 0;
    std::vector<ReliabilityBin> bins;
    double ece = 0.0;

    // One row per bin: bin,lo,hi,count,mean_confidence,accuracy
    std::string to_csv() const;
};

// Row-wise -sum_c p log p in nats, with 0*log 0 := 0. Values lie in [0, ln K].
std::vector<double> predictive_entropy(const Tensor& probs);
double row_entropy(const double* p, int K);

// Confidence = max_k prob_k, prediction = argmax (ties to the lowest class).
ReliabilityReport compute_ece(const Tensor& probs, const std::vector<int>& true_labels, int num_bins);

double accuracy(const Tensor& probs, const std::vector<int>& true_labels);

int argmax_row(const double* p, int K);

}  // namespace calprio
