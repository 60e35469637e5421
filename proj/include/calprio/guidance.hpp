#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calprio/data.hpp"
#include "calprio/model.hpp"

namespace calprio {

/// When the target model re-scores the candidate pool.
enum class ScorePolicy { Once, EveryEpoch };

std::string score_policy_name(ScorePolicy p);
ScorePolicy score_policy_from_name(const std::string& name);

/// A frozen pre-trained model that scores the pool in place of the
/// in-training model.  With policy Once the scores are computed on the
/// first request and reused; with EveryEpoch they are recomputed (the
/// model is frozen, so this matters only when the pool itself changes).
struct TargetGuide {
    std::unique_ptr<Model> model;
    ScorePolicy policy = ScorePolicy::Once;
    int pool_size = 0;
    std::vector<double> cached;  // valid when !cached.empty()
};

/// Loads the target checkpoint and validates it against the task.
/// num_classes must match the checkpoint or loading fails.  If the
/// caller passes the in-training model's parameter count and the target
/// is not strictly larger, a warning is emitted on stderr (the guide is
/// still usable; the premise is merely weakened).
TargetGuide prepare_target(const std::string& checkpoint_path, int num_classes, int pool_size,
                           ScorePolicy policy,
                           std::optional<std::int64_t> trainee_param_count = std::nullopt);

/// Entropy scores for the pool under the guide's policy.  The pool must
/// have exactly guide.pool_size rows.
const std::vector<double>& target_scores(TargetGuide& guide, const Dataset& pool, int batch_size);

}  // namespace calprio
