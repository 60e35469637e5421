#include "calprio/prioritization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "calprio/metrics.hpp"

namespace calprio {

std::string criterion_name(Criterion c) {
    return c == Criterion::MaxEntropy ? "max_entropy" : "random";
}

Criterion criterion_from_name(const std::string& name) {
    if (name == "max_entropy") return Criterion::MaxEntropy;
    if (name == "random") return Criterion::Random;
    throw ConfigError("unknown selection criterion \"" + name + "\" (expected max_entropy or random)");
}

void SubsetSchedule::validate() const {
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("subset fraction must lie in (0,1], got " + std::to_string(fraction));
    if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
}

int SubsetSchedule::budget(int epoch) const {
    validate();
    if (epoch < 1) throw ContractError("epochs are 1-based, got " + std::to_string(epoch));
    if (epoch <= warmup_epochs) return pool_size;
    // ceil(fraction * pool_size) with FP dust snapped to the intended
    // integer: 0.2 * 45000 evaluates to 9000.0000000000018 and must still
    // yield 9000, while 0.27 * 10 = 2.7 must round up to 3.
    const double raw = fraction * static_cast<double>(pool_size);
    const double nearest = std::round(raw);
    if (std::fabs(raw - nearest) < 1e-9 * std::max(1.0, nearest))
        return static_cast<int>(nearest);
    return static_cast<int>(std::ceil(raw));
}

std::vector<double> score_pool(const Model& model, const Dataset& pool, int batch_size) {
    if (pool.size() == 0) throw ContractError("score_pool requires a nonempty pool");
    if (batch_size < 1) throw ContractError("score_pool batch_size must be >= 1");
    const int n = static_cast<int>(pool.size());
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> idx(static_cast<std::size_t>(batch_size));
    for (int lo = 0; lo < n; lo += batch_size) {
        const int hi = std::min(lo + batch_size, n);
        idx.resize(static_cast<std::size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor probs = model.predict_proba(pool.batch(idx));
        const int K = probs.dim(1);
        for (int i = lo; i < hi; ++i)
            scores[static_cast<std::size_t>(i)] =
                row_entropy(probs.data.data() + static_cast<std::int64_t>(i - lo) * K, K);
    }
    return scores;
}

std::vector<int> select_topk(const std::vector<double>& scores, int k) {
    const int n = static_cast<int>(scores.size());
    if (k < 1 || k > n)
        throw ContractError("select_topk k=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    // descending score, ascending id on ties
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<int> select_random(const std::vector<int>& pool_ids, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(pool_ids.size());
    if (k < 1 || k > n)
        throw ContractError("select_random k=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
    std::vector<int> ids = pool_ids;
    // partial Fisher-Yates: the first k entries become the sample
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

double overlap_fraction(const std::vector<int>& prev_ids, const std::vector<int>& cur_ids) {
    if (cur_ids.empty()) throw ContractError("overlap_fraction: current selection is empty");
    if (prev_ids.empty()) throw ContractError("overlap_fraction: previous selection is empty");
    std::unordered_set<int> prev(prev_ids.begin(), prev_ids.end());
    std::size_t common = 0;
    for (int id : cur_ids)
        if (prev.count(id)) ++common;
    return static_cast<double>(common) / static_cast<double>(cur_ids.size());
}

std::vector<long> class_histogram(const std::vector<int>& ids, const std::vector<int>& labels, int K) {
    std::vector<long> hist(static_cast<std::size_t>(K), 0);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= labels.size())
            throw ContractError("class_histogram: id " + std::to_string(id) + " outside label table");
        const int y = labels[static_cast<std::size_t>(id)];
        if (y < 0 || y >= K)
            throw DataError("class_histogram: label " + std::to_string(y) + " >= K=" + std::to_string(K));
        hist[static_cast<std::size_t>(y)] += 1;
    }
    return hist;
}

SelectionRecord epoch_subset(const SubsetSchedule& schedule, int epoch, Criterion criterion,
                             const std::vector<double>* scores, std::mt19937_64* rng,
                             const std::vector<int>& labels, int K,
                             const std::vector<int>* prev_ids) {
    schedule.validate();
    if (epoch < 1) throw ContractError("epochs are 1-based, got " + std::to_string(epoch));

    SelectionRecord rec;
    rec.epoch = epoch;
    rec.criterion = criterion;
    const int budget = schedule.budget(epoch);
    if (epoch <= schedule.warmup_epochs || budget == schedule.pool_size) {
        // warm-up, or the budget covers the pool: scores are irrelevant
        rec.selected.resize(static_cast<std::size_t>(schedule.pool_size));
        std::iota(rec.selected.begin(), rec.selected.end(), 0);
    } else if (criterion == Criterion::MaxEntropy) {
        if (scores == nullptr)
            throw ContractError("max_entropy selection after warm-up requires pool scores");
        if (static_cast<int>(scores->size()) != schedule.pool_size)
            throw ContractError("score vector length " + std::to_string(scores->size()) +
                                " does not match pool size " + std::to_string(schedule.pool_size));
        rec.selected = select_topk(*scores, budget);
    } else {
        if (rng == nullptr) throw ContractError("random selection requires an rng");
        std::vector<int> pool_ids(static_cast<std::size_t>(schedule.pool_size));
        std::iota(pool_ids.begin(), pool_ids.end(), 0);
        rec.selected = select_random(pool_ids, budget, *rng);
    }
    rec.class_histogram = class_histogram(rec.selected, labels, K);
    if (prev_ids != nullptr && !prev_ids->empty())
        rec.overlap_prev = overlap_fraction(*prev_ids, rec.selected);
    return rec;
}

std::string SelectionRecord::to_jsonl() const {
    std::string out = "{\"epoch\":" + std::to_string(epoch) + ",\"criterion\":\"" +
                      criterion_name(criterion) + "\",\"budget\":" + std::to_string(selected.size());
    out += ",\"overlap_prev\":";
    if (overlap_prev) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", *overlap_prev);
        out += buf;
    } else {
        out += "null";
    }
    out += ",\"class_histogram\":[";
    for (std::size_t i = 0; i < class_histogram.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(class_histogram[i]);
    }
    out += "],\"selected\":[";
    for (std::size_t i = 0; i < selected.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(selected[i]);
    }
    out += "]}";
    return out;
}

}  // namespace calprio
