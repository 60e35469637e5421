#include "calprio/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "calprio/common.hpp"

namespace calprio {

Tensor Dataset::batch(std::span<const int> indices) const {
    const std::int64_t dim = sample_dim();
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), input_shape[0], input_shape[1],
                                input_shape[2]});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int id = indices[i];
        if (id < 0 || static_cast<std::size_t>(id) >= size())
            throw ContractError("batch index " + std::to_string(id) + " outside dataset of size " +
                                std::to_string(size()));
        std::copy_n(features.begin() + static_cast<std::int64_t>(id) * dim, dim,
                    out.data.begin() + static_cast<std::int64_t>(i) * dim);
    }
    return out;
}

void Dataset::truncate(std::size_t n) {
    if (n >= size()) return;
    features.resize(n * static_cast<std::size_t>(sample_dim()));
    labels.resize(n);
    origin.resize(n);
}

NormStats compute_norm_stats(const Dataset& ds) {
    const int C = ds.input_shape[0];
    const std::int64_t hw = static_cast<std::int64_t>(ds.input_shape[1]) * ds.input_shape[2];
    const std::int64_t dim = ds.sample_dim();
    NormStats st;
    st.mean.assign(static_cast<std::size_t>(C), 0.0);
    st.std.assign(static_cast<std::size_t>(C), 0.0);
    const std::int64_t per_channel = static_cast<std::int64_t>(ds.size()) * hw;
    if (per_channel == 0) throw ContractError("cannot compute normalization stats of an empty dataset");

    for (std::size_t i = 0; i < ds.size(); ++i)
        for (int c = 0; c < C; ++c) {
            const double* p = ds.features.data() + static_cast<std::int64_t>(i) * dim + c * hw;
            double s = 0.0;
            for (std::int64_t k = 0; k < hw; ++k) s += p[k];
            st.mean[static_cast<std::size_t>(c)] += s;
        }
    for (int c = 0; c < C; ++c) st.mean[static_cast<std::size_t>(c)] /= static_cast<double>(per_channel);

    for (std::size_t i = 0; i < ds.size(); ++i)
        for (int c = 0; c < C; ++c) {
            const double* p = ds.features.data() + static_cast<std::int64_t>(i) * dim + c * hw;
            const double m = st.mean[static_cast<std::size_t>(c)];
            double s = 0.0;
            for (std::int64_t k = 0; k < hw; ++k) s += (p[k] - m) * (p[k] - m);
            st.std[static_cast<std::size_t>(c)] += s;
        }
    for (int c = 0; c < C; ++c) {
        double v = st.std[static_cast<std::size_t>(c)] / static_cast<double>(per_channel);
        st.std[static_cast<std::size_t>(c)] = std::max(std::sqrt(v), 1e-12);
    }
    return st;
}

void apply_normalization(Dataset& ds, const NormStats& stats) {
    const int C = ds.input_shape[0];
    if (static_cast<int>(stats.mean.size()) != C || static_cast<int>(stats.std.size()) != C)
        throw DimensionError("normalization stats do not match channel count " + std::to_string(C));
    const std::int64_t hw = static_cast<std::int64_t>(ds.input_shape[1]) * ds.input_shape[2];
    const std::int64_t dim = ds.sample_dim();
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (int c = 0; c < C; ++c) {
            double* p = ds.features.data() + static_cast<std::int64_t>(i) * dim + c * hw;
            const double m = stats.mean[static_cast<std::size_t>(c)];
            const double inv = 1.0 / stats.std[static_cast<std::size_t>(c)];
            for (std::int64_t k = 0; k < hw; ++k) p[k] = (p[k] - m) * inv;
        }
    ds.channel_mean = stats.mean;
    ds.channel_std = stats.std;
}

namespace {

Dataset synth_fill(int K, int N, const std::array<int, 3>& dims,
                   const std::vector<double>& means, std::mt19937_64& noise_rng) {
    Dataset ds;
    ds.num_classes = K;
    ds.input_shape = dims;
    const std::int64_t D = ds.sample_dim();
    ds.features.resize(static_cast<std::size_t>(N) * static_cast<std::size_t>(D));
    ds.labels.resize(static_cast<std::size_t>(N));
    ds.origin.resize(static_cast<std::size_t>(N));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < N; ++i) {
        const int c = i % K;
        ds.labels[static_cast<std::size_t>(i)] = c;
        ds.origin[static_cast<std::size_t>(i)] = i;
        double* row = ds.features.data() + static_cast<std::int64_t>(i) * D;
        const double* mu = means.data() + static_cast<std::int64_t>(c) * D;
        for (std::int64_t k = 0; k < D; ++k) row[k] = mu[k] + unit(noise_rng);
    }
    return ds;
}

std::vector<double> synth_means(int K, std::int64_t D, double separation, std::uint64_t seed) {
    std::mt19937_64 rng = make_rng(seed, 0xA0);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> means(static_cast<std::size_t>(K) * static_cast<std::size_t>(D));
    for (double& v : means) v = separation * unit(rng);
    return means;
}

}  // namespace

Dataset make_synthetic(int K, int N, const std::array<int, 3>& dims, double class_separation,
                       std::uint64_t seed) {
    if (K < 2) throw ContractError("make_synthetic needs K >= 2");
    if (N < K) throw ContractError("make_synthetic needs N >= K, got N=" + std::to_string(N) +
                                   " K=" + std::to_string(K));
    const std::vector<double> means =
        synth_means(K, static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2], class_separation, seed);
    std::mt19937_64 noise = make_rng(seed, 0xB0);
    return synth_fill(K, N, dims, means, noise);
}

std::pair<Dataset, Dataset> make_synthetic_pair(int K, int n_pool, int n_test,
                                                const std::array<int, 3>& dims,
                                                double class_separation, std::uint64_t seed) {
    if (K < 2) throw ContractError("make_synthetic needs K >= 2");
    if (n_pool < K || n_test < K)
        throw ContractError("make_synthetic_pair needs pool and test sizes >= K");
    const std::vector<double> means =
        synth_means(K, static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2], class_separation, seed);
    std::mt19937_64 pool_noise = make_rng(seed, 0xB0);
    std::mt19937_64 test_noise = make_rng(seed, 0xC0);
    Dataset pool = synth_fill(K, n_pool, dims, means, pool_noise);
    Dataset test = synth_fill(K, n_test, dims, means, test_noise);
    test.split = "test";
    return {std::move(pool), std::move(test)};
}

namespace {

// Appends the records of one CIFAR binary file. record_len counts the label
// byte(s) plus 3072 pixels; label_offset selects which label byte to use.
void read_cifar_file(const std::string& path, int record_len, int label_offset, int num_classes,
                     Dataset& ds) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open CIFAR batch file: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.empty() || buf.size() % static_cast<std::size_t>(record_len) != 0) {
        const std::size_t offset = buf.size() - buf.size() % static_cast<std::size_t>(record_len);
        throw FormatError(path + ": file length " + std::to_string(buf.size()) +
                          " is not a multiple of the " + std::to_string(record_len) +
                          "-byte record size (truncated record starts at byte offset " +
                          std::to_string(offset) + ")");
    }
    const std::size_t n = buf.size() / static_cast<std::size_t>(record_len);
    const std::size_t base = ds.size();
    ds.features.resize((base + n) * 3072);
    ds.labels.resize(base + n);
    ds.origin.resize(base + n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec =
            reinterpret_cast<const unsigned char*>(buf.data()) + i * static_cast<std::size_t>(record_len);
        const int label = rec[label_offset];
        if (label >= num_classes)
            throw DataError(path + ": record " + std::to_string(i) + " has label byte " +
                            std::to_string(label) + " >= " + std::to_string(num_classes));
        ds.labels[base + i] = label;
        ds.origin[base + i] = static_cast<int>(base + i);
        double* row = ds.features.data() + (base + i) * 3072;
        const unsigned char* px = rec + (record_len - 3072);
        for (int k = 0; k < 3072; ++k) row[k] = static_cast<double>(px[k]) / 255.0;
    }
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir_path) {
    namespace fs = std::filesystem;
    Dataset pool, test;
    pool.num_classes = test.num_classes = 10;
    pool.input_shape = test.input_shape = {3, 32, 32};
    test.split = "test";

    bool any = false;
    for (int i = 1; i <= 5; ++i) {
        const std::string p = (fs::path(dir_path) / ("data_batch_" + std::to_string(i) + ".bin")).string();
        if (!fs::exists(p)) continue;
        read_cifar_file(p, 3073, 0, 10, pool);
        any = true;
    }
    if (!any)
        throw FormatError("no data_batch_*.bin files found under " + dir_path);
    const std::string tp = (fs::path(dir_path) / "test_batch.bin").string();
    if (!fs::exists(tp)) throw DataError("missing test_batch.bin under " + dir_path);
    read_cifar_file(tp, 3073, 0, 10, test);
    return {std::move(pool), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar100_binary(const std::string& dir_path) {
    namespace fs = std::filesystem;
    Dataset pool, test;
    pool.num_classes = test.num_classes = 100;
    pool.input_shape = test.input_shape = {3, 32, 32};
    test.split = "test";
    read_cifar_file((fs::path(dir_path) / "train.bin").string(), 3074, 1, 100, pool);
    read_cifar_file((fs::path(dir_path) / "test.bin").string(), 3074, 1, 100, test);
    return {std::move(pool), std::move(test)};
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& pool, double fraction, std::uint64_t seed) {
    if (pool.size() == 0) throw ContractError("split_train_val requires a nonempty pool");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("train fraction must lie in (0,1), got " + std::to_string(fraction));
    const std::size_t n = pool.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng = make_rng(seed, 0xD0);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_train =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    const std::int64_t dim = pool.sample_dim();

    auto take = [&](std::size_t lo, std::size_t hi, const char* tag) {
        Dataset out;
        out.num_classes = pool.num_classes;
        out.input_shape = pool.input_shape;
        out.split = tag;
        out.features.reserve((hi - lo) * static_cast<std::size_t>(dim));
        out.labels.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            const int src = order[i];
            out.features.insert(out.features.end(),
                                pool.features.begin() + static_cast<std::int64_t>(src) * dim,
                                pool.features.begin() + static_cast<std::int64_t>(src + 1) * dim);
            out.labels.push_back(pool.labels[static_cast<std::size_t>(src)]);
            out.origin.push_back(pool.origin[static_cast<std::size_t>(src)]);
        }
        return out;
    };
    return {take(0, n_train, "train"), take(n_train, n, "val")};
}

}  // namespace calprio
