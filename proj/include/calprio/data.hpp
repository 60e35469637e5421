#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calprio/tensor.hpp"

namespace calprio {

// Immutable after load. Sample ids are contiguous 0..N-1 within the split;
// `origin` maps each local row back to its row in the parent pool (identity
// for freshly loaded pools).
struct Dataset {
    int num_classes = 0;
    std::array<int, 3> input_shape{0, 0, 0};  // C,H,W
    std::vector<double> features;             // N x C*H*W, row-major
    std::vector<int> labels;
    std::vector<int> origin;
    std::string split = "pool";
    std::vector<double> channel_mean, channel_std;  // filled once normalized

    std::size_t size() const { return labels.size(); }
    std::int64_t sample_dim() const {
        return static_cast<std::int64_t>(input_shape[0]) * input_shape[1] * input_shape[2];
    }
    // Gather rows into a [B,C,H,W] batch tensor.
    Tensor batch(std::span<const int> indices) const;
    void truncate(std::size_t n);
};

struct NormStats {
    std::vector<double> mean, std;
};

NormStats compute_norm_stats(const Dataset& ds);
void apply_normalization(Dataset& ds, const NormStats& stats);

// Gaussian class clusters: class means ~ separation * N(0, I), samples =
// mean + N(0, I). Classes balanced (label of sample i is i mod K), all
// deterministic from `seed`.
Dataset make_synthetic(int K, int N, const std::array<int, 3>& dims, double class_separation,
                       std::uint64_t seed);
// Pool and test set share the class means drawn from `seed` but use
// independent noise streams.
std::pair<Dataset, Dataset> make_synthetic_pair(int K, int n_pool, int n_test,
                                                const std::array<int, 3>& dims,
                                                double class_separation, std::uint64_t seed);

// CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes (R,G,B planes of
// 32x32, row-major) per record. Reads data_batch_*.bin as the pool and
// test_batch.bin as the test set; pixels scaled to [0,1] (normalization is
// applied later from training-split statistics).
std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir_path);
// CIFAR-100: train.bin/test.bin with 1 coarse + 1 fine label byte per
// record; the fine label is used.
std::pair<Dataset, Dataset> load_cifar100_binary(const std::string& dir_path);

// Seeded shuffle then split: |train| = round(fraction * N).
std::pair<Dataset, Dataset> split_train_val(const Dataset& pool, double fraction, std::uint64_t seed);

}  // namespace calprio
