#include "calprio/guidance.hpp"

#include <cstdio>

#include "calprio/prioritization.hpp"

namespace calprio {

std::string score_policy_name(ScorePolicy p) {
    return p == ScorePolicy::Once ? "once" : "every_epoch";
}

ScorePolicy score_policy_from_name(const std::string& name) {
    if (name == "once") return ScorePolicy::Once;
    if (name == "every_epoch") return ScorePolicy::EveryEpoch;
    throw ConfigError("unknown score policy \"" + name + "\" (expected once or every_epoch)");
}

TargetGuide prepare_target(const std::string& checkpoint_path, int num_classes, int pool_size,
                           ScorePolicy policy, std::optional<std::int64_t> trainee_param_count) {
    if (pool_size < 1) throw ConfigError("target guide pool_size must be >= 1");
    TargetGuide guide;
    Checkpoint ck = load_checkpoint(checkpoint_path, num_classes);
    guide.model = std::make_unique<Model>(model_from_checkpoint(ck));
    guide.policy = policy;
    guide.pool_size = pool_size;
    if (trainee_param_count && guide.model->parameter_count() <= *trainee_param_count) {
        std::fprintf(stderr,
                     "warning: target model has %lld parameters, trainee has %lld; "
                     "guidance assumes a larger target\n",
                     static_cast<long long>(guide.model->parameter_count()),
                     static_cast<long long>(*trainee_param_count));
    }
    return guide;
}

const std::vector<double>& target_scores(TargetGuide& guide, const Dataset& pool, int batch_size) {
    if (static_cast<int>(pool.size()) != guide.pool_size)
        throw ContractError("target guide was prepared for a pool of " +
                            std::to_string(guide.pool_size) + " rows, got " +
                            std::to_string(pool.size()));
    if (guide.policy == ScorePolicy::Once && !guide.cached.empty()) return guide.cached;
    guide.cached = score_pool(*guide.model, pool, batch_size);
    return guide.cached;
}

}  // namespace calprio
