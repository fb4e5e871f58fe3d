#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dreamplan/planner.hpp"
#include "dreamplan/sim.hpp"
#include "dreamplan/world_model.hpp"

namespace dreamplan {

/// Where a group's state lives: dataset file and record index.
struct StateRef {
  std::string dataset;
  std::size_t record = 0;

  friend bool operator==(const StateRef&, const StateRef&) = default;
};

/// Best-of-K group. candidates[positive_index] is a*; the rest are negatives.
struct PreferenceGroup {
  StateRef ref;
  PlannerState state;  // not serialized; filled from the dataset
  std::vector<KeypointAction> candidates;
  std::vector<double> scores;
  std::size_t positive_index = 0;
  std::uint64_t wm_seed = 0;

  KeypointAction positive() const { return candidates.at(positive_index); }
  std::vector<KeypointAction> negatives() const;
  /// Distinct candidates, at least one negative, positive scores highest (earliest on ties).
  void validate() const;
};

/// Same group content, ignoring the attached state.
bool same_groups(const PreferenceGroup& a, const PreferenceGroup& b);

/// K distinct actions: rejection sampling at temperature 1 for up to 50*K draws, then the most
/// probable unused actions in descending order.
std::vector<KeypointAction> sample_candidates(const PlannerParams& policy, const PlannerState& state, std::size_t k,
                                              Rng& rng);

/// What a predictor sees. `body` is only needed by the simulator oracle.
struct Scene {
  const PlannerState* state = nullptr;
  const MassPointBody* body = nullptr;
};

/// Maps candidate moves to predicted final frames. Counts calls so callers can prove it unused.
class OutcomePredictor {
 public:
  virtual ~OutcomePredictor() = default;

  std::vector<Frame> predict(const Scene& scene, std::span<const GripperMove> moves, std::uint64_t seed);
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual std::vector<Frame> do_predict(const Scene& scene, std::span<const GripperMove> moves,
                                        std::uint64_t seed) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

class WorldModelPredictor final : public OutcomePredictor {
 public:
  WorldModelPredictor(const WorldModelParams& wm, int ddim_steps) : wm_(wm), ddim_steps_(ddim_steps) {}

 protected:
  std::vector<Frame> do_predict(const Scene& scene, std::span<const GripperMove> moves, std::uint64_t seed) override;

 private:
  const WorldModelParams& wm_;
  int ddim_steps_;
};

/// Ground truth: executes each move in the simulator.
class SimulatorPredictor final : public OutcomePredictor {
 public:
  SimulatorPredictor(SimConfig sim, int grid) : sim_(sim), grid_(grid) {}
  const SimConfig& sim() const { return sim_; }

 protected:
  std::vector<Frame> do_predict(const Scene& scene, std::span<const GripperMove> moves, std::uint64_t seed) override;

 private:
  SimConfig sim_;
  int grid_;
};

/// Scores each candidate's predicted final frame by soft IoU with the goal; the best is positive.
PreferenceGroup build_preference_group(const PlannerParams& policy, OutcomePredictor& predictor, const Scene& scene,
                                       std::size_t k, Rng& rng);

/// JSON Lines, one group per line.
void write_preferences(std::span<const PreferenceGroup> groups, const std::filesystem::path& path);
/// `keypoints` bounds src/tgt. Malformed lines raise FormatError with the line number.
std::vector<PreferenceGroup> read_preferences(const std::filesystem::path& path, std::size_t keypoints);

}  // namespace dreamplan
