#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "dreamplan/config.hpp"
#include "dreamplan/planner.hpp"
#include "dreamplan/preference.hpp"

namespace dreamplan {

/// -log sigmoid(d), stable for large |d|.
double neg_log_sigmoid(double d);

/// -(1/J) sum_j log sigmoid(log pi(a*) - log pi(a_j)), plus nll_weight * -log pi(a*).
double orpo_loss(const PlannerParams& params, const PreferenceGroup& group, double nll_weight = 0.0);

struct OrpoLossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

OrpoLossGrad orpo_loss_grad(const PlannerParams& params, const PreferenceGroup& group, double nll_weight = 0.0);
std::vector<double> orpo_grad(const PlannerParams& params, const PreferenceGroup& group, double nll_weight = 0.0);

/// log pi(a*) - max_j log pi(a_j).
double preference_margin(const PlannerParams& params, const PreferenceGroup& group);

/// Fraction of groups whose positive is strictly more likely than every negative.
double preference_accuracy(const PlannerParams& params, std::span<const PreferenceGroup> groups);

struct OrpoEpoch {
  int epoch = 0;
  double mean_loss = 0.0;
  double pref_accuracy = 0.0;
};

struct OrpoReport {
  std::vector<OrpoEpoch> epochs;
};

/// Non-finite loss: params are rolled back to the end of the last finite epoch before this is thrown.
class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Minibatch Adam on the mean group loss, groups shuffled each epoch with `rng`.
OrpoReport train_orpo(PlannerParams& params, std::span<const PreferenceGroup> groups, const OrpoConfig& cfg, Rng& rng,
                      const std::function<void(const OrpoEpoch&)>& on_epoch = {});

/// epoch,mean_loss,pref_accuracy
void write_orpo_log(const OrpoReport& report, const std::filesystem::path& path);

}  // namespace dreamplan
