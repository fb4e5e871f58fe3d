#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dreamplan/config.hpp"
#include "dreamplan/nn.hpp"
#include "dreamplan/perception.hpp"
#include "dreamplan/rng.hpp"

namespace dreamplan {

/// Grasp at current keypoint `src`, place at goal keypoint `tgt`.
struct KeypointAction {
  std::size_t src = 0;
  std::size_t tgt = 0;

  friend bool operator==(const KeypointAction&, const KeypointAction&) = default;
};

struct PlannerState {
  Frame obs;
  Frame goal;
  KeypointSet kp_cur;
  KeypointSet kp_goal;

  std::size_t action_count() const { return kp_cur.size() * kp_goal.size(); }
  /// Flattened src-major index.
  std::size_t flat(KeypointAction a) const { return a.src * kp_goal.size() + a.tgt; }
  KeypointAction action_at(std::size_t flat) const { return {flat / kp_goal.size(), flat % kp_goal.size()}; }
  Vec2 grasp_of(KeypointAction a) const { return kp_cur.coords.at(a.src); }
  Vec2 target_of(KeypointAction a) const { return kp_goal.coords.at(a.tgt); }
};

PlannerState make_planner_state(const MassPointBody& body, const MassPointBody& goal, const PerceptionConfig& cfg);

inline constexpr std::size_t kFeatureCount = 16;

/// [src xy, tgt xy, delta xy, |delta|, obs/goal 3x3 mean+max at src, obs/goal 3x3 mean+max at tgt, soft IoU].
Vector featurize(const PlannerState& state, KeypointAction action);
/// One column per action in flattened order.
Matrix featurize_all(const PlannerState& state);

/// Shared-weight pair scorer (features -> hidden... -> 1).
struct PlannerParams {
  MlpSpec spec;
  ParamStore store;

  std::span<const double> scorer() const { return store.values(); }
};

/// Zero-initialized when `rng` is null, Glorot otherwise.
PlannerParams make_planner(const PlannerConfig& cfg, Rng* rng = nullptr);

struct ScorerPass {
  MlpCache cache;
  Vector logits;
};

ScorerPass scorer_forward(const PlannerParams& params, const Matrix& features);
/// Accumulates into `grad` (length = parameter count).
void scorer_backward(const PlannerParams& params, const ScorerPass& pass, const Vector& logit_grad,
                     std::span<double> grad);

/// Logits in flattened src-major order. Throws NumericalError on non-finite output.
Vector policy_logits(const PlannerParams& params, const PlannerState& state);

/// softmax(logits / temperature).
Vector action_distribution(const Vector& logits, double temperature = 1.0);

/// Flattened index of the largest logit; lowest index wins ties.
std::size_t argmax_index(const Vector& values);

/// Inverse-CDF draw over the flattened order.
std::size_t sample_index(const Vector& probabilities, Rng& rng);
KeypointAction sample_action(const PlannerState& state, const Vector& probabilities, Rng& rng);

/// log pi(action | state) at temperature 1.
double log_prob(const PlannerParams& params, const PlannerState& state, KeypointAction action);
/// d log pi(action | state) / d params.
std::vector<double> log_prob_grad(const PlannerParams& params, const PlannerState& state, KeypointAction action);
/// log_softmax over logits.
Vector log_softmax(const Vector& logits);

/// Most displaced current keypoint, moved to the goal keypoint nearest to it.
KeypointAction heuristic_action(const PlannerState& state);

struct PretrainReport {
  std::vector<double> epoch_loss;
  double holdout_agreement = 0.0;
};

/// Imitates heuristic_action with cross-entropy; reports held-out argmax agreement.
PretrainReport pretrain_zero_shot(PlannerParams& params, std::span<const PlannerState> train,
                                  std::span<const PlannerState> holdout, const PlannerConfig& cfg, Rng& rng);

double argmax_agreement(const PlannerParams& params, std::span<const PlannerState> states);

void save_planner(const PlannerParams& params, const std::string& config_hash, const std::filesystem::path& path);
PlannerParams load_planner(const std::filesystem::path& path);

}  // namespace dreamplan
