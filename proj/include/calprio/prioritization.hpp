#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "calprio/data.hpp"
#include "calprio/model.hpp"

namespace calprio {

enum class Criterion { MaxEntropy, Random };

std::string criterion_name(Criterion c);
Criterion criterion_from_name(const std::string& name);

struct SubsetSchedule {
    int warmup_epochs = 10;
    double fraction = 1.0;  // n in (0,1]
    int pool_size = 0;

    void validate() const;
    // Full pool through warm-up, then ceil(fraction * pool_size).
    int budget(int epoch) const;
};

struct SelectionRecord {
    int epoch = 0;
    Criterion criterion = Criterion::MaxEntropy;
    std::vector<int> selected;       // sorted, unique sample ids
    std::vector<long> class_histogram;
    std::optional<double> overlap_prev;  // empty for the first epoch

    std::string to_jsonl() const;
};

// Predictive entropy of the model posterior for every pool sample, in id
// order. Evaluation mode, no tape; batches are evaluated independently so
// the result does not depend on sharding.
std::vector<double> score_pool(const Model& model, const Dataset& pool, int batch_size);

// Ids of the k largest scores; ties broken toward the smaller id; sorted.
std::vector<int> select_topk(const std::vector<double>& scores, int k);

// Uniform sample without replacement from pool_ids; sorted.
std::vector<int> select_random(const std::vector<int>& pool_ids, int k, std::mt19937_64& rng);

// |prev ∩ cur| / |cur|
double overlap_fraction(const std::vector<int>& prev_ids, const std::vector<int>& cur_ids);

std::vector<long> class_histogram(const std::vector<int>& ids, const std::vector<int>& labels, int K);

// Assembles the per-epoch record: the full pool during warm-up, otherwise a
// budget-sized selection by `criterion` (scores required for max-entropy,
// rng for random).
SelectionRecord epoch_subset(const SubsetSchedule& schedule, int epoch, Criterion criterion,
                             const std::vector<double>* scores, std::mt19937_64* rng,
                             const std::vector<int>& labels, int K,
                             const std::vector<int>* prev_ids);

}  // namespace calprio
