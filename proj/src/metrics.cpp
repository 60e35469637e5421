#include "calprio/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace calprio {

double row_entropy(const double* p, int K) {
    double h = 0.0;
    for (int j = 0; j < K; ++j)
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    return h;
}

std::vector<double> predictive_entropy(const Tensor& probs) {
    if (probs.rank() != 2)
        throw DimensionError("predictive_entropy expects probs[BxK], got " + shape_str(probs.shape));
    const int B = probs.dim(0), K = probs.dim(1);
    std::vector<double> out(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i)
        out[static_cast<std::size_t>(i)] = row_entropy(probs.data.data() + static_cast<std::int64_t>(i) * K, K);
    return out;
}

int argmax_row(const double* p, int K) {
    int best = 0;
    for (int j = 1; j < K; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

ReliabilityReport compute_ece(const Tensor& probs, const std::vector<int>& true_labels, int num_bins) {
    if (probs.rank() != 2) throw DimensionError("compute_ece expects probs[BxK]");
    const int B = probs.dim(0), K = probs.dim(1);
    if (B == 0 || true_labels.empty()) throw ContractError("compute_ece requires a nonempty prediction set");
    if (static_cast<int>(true_labels.size()) != B)
        throw DimensionError("compute_ece: label count " + std::to_string(true_labels.size()) +
                             " does not match " + std::to_string(B) + " prediction rows");
    if (num_bins < 1) throw ContractError("compute_ece requires M >= 1 bins");

    ReliabilityReport rep;
    rep.num_bins = num_bins;
    rep.total = B;
    rep.bins.resize(static_cast<std::size_t>(num_bins));
    std::vector<double> conf_sum(static_cast<std::size_t>(num_bins), 0.0);
    std::vector<long> correct(static_cast<std::size_t>(num_bins), 0);
    for (int m = 0; m < num_bins; ++m) {
        rep.bins[static_cast<std::size_t>(m)].lo = static_cast<double>(m) / num_bins;
        rep.bins[static_cast<std::size_t>(m)].hi = static_cast<double>(m + 1) / num_bins;
    }

    for (int i = 0; i < B; ++i) {
        const double* row = probs.data.data() + static_cast<std::int64_t>(i) * K;
        const int pred = argmax_row(row, K);
        const double conf = row[pred];
        // bin m covers (m/M, (m+1)/M]; confidence 0 goes to bin 1
        int bin = 0;
        while (bin + 1 < num_bins && conf > rep.bins[static_cast<std::size_t>(bin)].hi) ++bin;
        ReliabilityBin& b = rep.bins[static_cast<std::size_t>(bin)];
        b.count += 1;
        conf_sum[static_cast<std::size_t>(bin)] += conf;
        if (pred == true_labels[static_cast<std::size_t>(i)]) correct[static_cast<std::size_t>(bin)] += 1;
    }

    double ece = 0.0;
    for (int m = 0; m < num_bins; ++m) {
        ReliabilityBin& b = rep.bins[static_cast<std::size_t>(m)];
        if (b.count == 0) continue;
        b.mean_confidence = conf_sum[static_cast<std::size_t>(m)] / static_cast<double>(b.count);
        b.accuracy = static_cast<double>(correct[static_cast<std::size_t>(m)]) / static_cast<double>(b.count);
        ece += (static_cast<double>(b.count) / B) * std::fabs(b.accuracy - b.mean_confidence);
    }
    rep.ece = ece;
    return rep;
}

double accuracy(const Tensor& probs, const std::vector<int>& true_labels) {
    if (probs.rank() != 2) throw DimensionError("accuracy expects probs[BxK]");
    const int B = probs.dim(0), K = probs.dim(1);
    if (B == 0) throw ContractError("accuracy requires a nonempty prediction set");
    if (static_cast<int>(true_labels.size()) != B)
        throw DimensionError("accuracy: label count does not match prediction rows");
    long hits = 0;
    for (int i = 0; i < B; ++i)
        if (argmax_row(probs.data.data() + static_cast<std::int64_t>(i) * K, K) ==
            true_labels[static_cast<std::size_t>(i)])
            ++hits;
    return static_cast<double>(hits) / B;
}

std::string ReliabilityReport::to_csv() const {
    std::string out = "bin,lo,hi,count,mean_confidence,accuracy\n";
    char buf[160];
    for (std::size_t m = 0; m < bins.size(); ++m) {
        const ReliabilityBin& b = bins[m];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%ld,%.17g,%.17g\n", m + 1, b.lo, b.hi, b.count,
                      b.mean_confidence, b.accuracy);
        out += buf;
    }
    return out;
}

}  // namespace calprio
