#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamplan/config.hpp"
#include "dreamplan/nn.hpp"
#include "dreamplan/perception.hpp"
#include "dreamplan/rng.hpp"

namespace dreamplan {

/// Linear beta schedule. Index 0 is the clean sample (alpha_bar = 1); steps run 1..T.
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bar;

  static DiffusionSchedule linear(int steps, double beta_start, double beta_end);
  double beta_start() const { return betas.at(1); }
  double beta_end() const { return betas.back(); }
};

enum class SceneMode { object_only, full_scene };

SceneMode parse_scene_mode(std::string_view name);
std::string_view scene_mode_name(SceneMode mode);

/// Frozen base denoiser plus a residual control branch fed with rendered action cues.
struct WorldModelParams {
  int grid = 24;
  int frames = 4;
  int cue_frames = 4;
  int time_dim = 16;
  int hidden = 256;
  SceneMode mode = SceneMode::object_only;
  DiffusionSchedule schedule;
  MlpSpec base_spec;
  MlpSpec control_spec;
  ParamStore base;
  ParamStore control;
  bool base_frozen = false;
  // Per-element mean and pooled variance of training targets. They set the fixed linear skip
  // c_t (x_t - sqrt(abar_t) mean) added to the base output; the MLP only learns the residual.
  Vector data_mean;
  double data_var = 1.0;

  std::size_t frame_cells() const { return static_cast<std::size_t>(grid) * grid; }
  std::size_t stack_size() const { return frame_cells() * static_cast<std::size_t>(frames); }
};

/// Base gets Glorot weights; the control branch too, except its output layer starts at zero.
WorldModelParams make_world_model(const WorldModelConfig& cfg, const PerceptionConfig& perception, Rng& rng);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, column-wise.
Matrix forward_diffuse(const Matrix& x0, int t, const Matrix& noise, const DiffusionSchedule& schedule);

/// One training example: target frame stack, first observation, flattened cue frames.
struct WmSample {
  Vector x0;
  Vector cond;
  Vector cue;
};

Vector flatten(std::span<const Frame> frames);
std::vector<Frame> unflatten(const Vector& stack, int grid);

/// Fixed checkerboard that stands in for the table and scene clutter.
Frame scene_background(int grid);
/// object_only: unchanged. full_scene: background + object (clipped), arm trail drawn over it.
Frame synthesize_scene(const Frame& frame, const Frame* cue, SceneMode mode);
std::vector<Frame> synthesize_scene(std::span<const Frame> frames, const ActionCue& cue, SceneMode mode);

WmSample make_wm_sample(const WorldModelParams& wm, const Frame& o0, std::span<const Frame> frames, Vec2 grasp,
                        Vec2 target);

/// Noise prediction for a batch. `timesteps` has one entry per column; `cue` may be null.
Matrix predict_eps(const WorldModelParams& wm, const Matrix& x_t, std::span<const int> timesteps, const Matrix& cond,
                   const Matrix* cue);

enum class Branch { base, control };

/// Mean squared noise error for fixed timesteps and noise; gradient of the chosen branch is
/// accumulated into `grad` when non-empty. `with_cue` selects conditioned prediction.
double denoise_loss(const WorldModelParams& wm, const Matrix& x0, const Matrix& cond, const Matrix& cue,
                    std::span<const int> timesteps, const Matrix& noise, Branch trainable, bool with_cue,
                    std::span<double> grad);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Draws t ~ U{1..T} and standard normal noise, then evaluates denoise_loss on one record.
LossAndGrad diffusion_loss(const WorldModelParams& wm, const WmSample& sample, Branch trainable, Rng& rng);

struct TrainLog {
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Linear skip coefficient sqrt(1 - abar) / (abar * var + 1 - abar): the best linear noise
/// estimate for targets with the stored statistics.
double skip_coefficient(const WorldModelParams& wm, int t);

/// Fits data_mean / data_var on the targets, trains the base denoiser without cues, then marks it frozen.
TrainLog train_base(WorldModelParams& wm, std::span<const WmSample> data, const WorldModelConfig& cfg, Rng& rng,
                    const EpochCallback& on_epoch = {});
/// Trains the control branch with cues. The base must be frozen.
TrainLog train_control(WorldModelParams& wm, std::span<const WmSample> data, const WorldModelConfig& cfg, Rng& rng,
                       const EpochCallback& on_epoch = {});

/// Mean conditioned (or unconditioned) denoising loss on fixed draws from `seed`.
double evaluate_denoise_loss(const WorldModelParams& wm, std::span<const WmSample> data, bool with_cue,
                             std::uint64_t seed);

struct RolloutPrediction {
  std::vector<Frame> frames;
  Frame final;
  std::uint64_t seed = 0;
};

struct GripperMove {
  Vec2 grasp;
  Vec2 target;
};

/// Deterministic DDIM (eta = 0) over a strided subsequence of the schedule. All moves share the
/// same starting noise drawn from `seed`.
std::vector<RolloutPrediction> sample_rollouts(const WorldModelParams& wm, const Frame& o0,
                                               std::span<const GripperMove> moves, std::uint64_t seed,
                                               int ddim_steps = 10);
RolloutPrediction sample_rollout(const WorldModelParams& wm, const Frame& o0, GripperMove move, std::uint64_t seed,
                                 int ddim_steps = 10);

/// Timesteps visited by the sampler, from T down to the smallest stride.
std::vector<int> ddim_timesteps(int total_steps, int ddim_steps);

void save_world_model(const WorldModelParams& wm, const std::string& config_hash, const std::filesystem::path& path);
WorldModelParams load_world_model(const std::filesystem::path& path);

}  // namespace dreamplan
