#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamplan/config.hpp"
#include "dreamplan/orpo.hpp"
#include "dreamplan/planner.hpp"
#include "dreamplan/preference.hpp"
#include "dreamplan/sim.hpp"
#include "dreamplan/world_model.hpp"

namespace dreamplan {

inline constexpr int kSchemaVersion = 1;

using Logger = std::function<void(const std::string&)>;

/// One executed primitive: (o0, g, a, o_1..H).
struct EpisodeRecord {
  std::uint64_t seed = 0;
  TaskId task = TaskId::rope;
  Frame o0;
  Frame goal;
  KeypointSet kp_cur;
  KeypointSet kp_goal;
  KeypointAction action;
  Vec2 grasp;
  Vec2 target;
  std::vector<Frame> frames;  // last one is the settled result
  double final_score = 0.0;

  PlannerState state() const { return {o0, goal, kp_cur, kp_goal}; }
  void validate(int frame_count) const;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct Dataset {
  TaskId task = TaskId::rope;
  int grid = 24;
  int frame_count = 4;
  std::uint64_t master_seed = 0;
  int episodes = 0;
  std::vector<std::uint64_t> skipped_seeds;  // unstable episodes
  std::vector<EpisodeRecord> records;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// H_f frames from a primitive: evenly spaced transport snapshots, then the settled body.
std::vector<Frame> episode_frames(const PrimitiveResult& result, int frame_count, int grid, const SimConfig& sim);

/// Episode i uses seed derive_seed(master, collect, i); the action is drawn from the policy at temperature 1.
Dataset collect_dataset(const PlannerParams& policy, const Config& cfg, TaskId task, int episodes,
                        std::uint64_t master_seed, int threads = 1);

/// JSON Lines: a header line, then one record per line.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

std::vector<WmSample> world_model_samples(const WorldModelParams& wm, std::span<const EpisodeRecord> records);

/// Heuristic-imitation pretraining on states drawn from the pretrain stream. Several tasks give the joint variant.
PlannerParams train_zero_shot(const Config& cfg, std::span<const TaskId> tasks, std::uint64_t master_seed,
                              PretrainReport* report = nullptr);

/// Base then control training on the whole dataset, in the configured scene mode.
WorldModelParams train_world_model(const Config& cfg, std::span<const WmSample> samples, std::uint64_t seed,
                                   const Logger& log = {});

/// One Best-of-K group per dataset record (record order), states attached.
std::vector<PreferenceGroup> build_preferences(const PlannerParams& policy, OutcomePredictor& predictor,
                                               const Dataset& dataset, const std::string& dataset_name,
                                               std::size_t k, std::uint64_t master_seed, int threads = 1);

/// Fills group.state from the referenced records.
void attach_states(std::span<PreferenceGroup> groups, const Dataset& dataset);

struct TrialScore {
  double value = 0.0;
  double pre_iou = 0.0;
  double post_iou = 0.0;
  double latency = 0.0;  // seconds spent choosing the action
};

/// 1 at post IoU >= success_iou, 0.5 when IoU rose by at least progress_margin, else 0.
TrialScore score_trial(const Frame& pre, const Frame& post, const Frame& goal, double success_iou,
                       double progress_margin);

enum class EvalMode { direct, verify };
EvalMode parse_eval_mode(std::string_view name);

struct EvalReport {
  EvalMode mode = EvalMode::direct;
  int k = 0;
  std::vector<TrialScore> trials;
  double mean_score = 0.0;
  std::array<int, 3> histogram{};  // counts of 0, 0.5, 1
  double mean_latency = 0.0;
  double max_latency = 0.0;
  std::size_t wm_calls = 0;

  /// Timing fields vary run to run; leave them out for reproducible artifacts.
  nlohmann::json to_json(bool with_timing) const;
};

/// direct: argmax action. verify: K candidates from `policy`, best predicted outcome wins (needs `predictor`).
EvalReport evaluate(const PlannerParams& policy, OutcomePredictor* predictor, const Config& cfg, TaskId task,
                    EvalMode mode, int k, int trials, std::uint64_t master_seed);

struct AblationRow {
  SceneMode mode = SceneMode::object_only;
  double psnr = 0.0;
  double mse = 0.0;
  std::size_t heldout = 0;
};

/// 90/10 split (seeded), one model per scene mode with identical seeds; final-frame PSNR on the object region.
std::vector<AblationRow> ablate_wm(const Dataset& dataset, const Config& cfg, std::uint64_t seed,
                                   const Logger& log = {});
void write_ablation(std::span<const AblationRow> rows, const std::filesystem::path& path);

struct BenchRow {
  std::string method;
  int k = 0;
  double mean_score = 0.0;
  double mean_latency = 0.0;
};

/// Direct fine-tuned policy, then verify-K over zero-shot proposals for each K.
std::vector<BenchRow> bench_inference(const PlannerParams& finetuned, const PlannerParams& zero_shot,
                                      const WorldModelParams& wm, const Config& cfg, TaskId task, int trials,
                                      std::span<const int> ks, std::uint64_t master_seed);
void write_bench(std::span<const BenchRow> rows, const std::filesystem::path& path);

/// A pipeline stage failed; artifacts written before it are left in place.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct TaskSummary {
  TaskId task = TaskId::rope;
  double zero_shot_score = 0.0;
  double finetuned_score = 0.0;
  double delta = 0.0;
};

struct PipelineSummary {
  double zero_shot_score = 0.0;
  double finetuned_score = 0.0;
  double delta = 0.0;
  std::vector<TaskSummary> tasks;

  nlohmann::json to_json() const;
};

/// collect -> base -> control -> preferences -> ORPO -> evaluate both policies. Writes every artifact under `out`.
PipelineSummary run_pipeline(const Config& cfg, const std::filesystem::path& out, const Logger& log = {});

}  // namespace dreamplan
