#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dreamplan {

struct SimConfig {
  double dt = 0.01;
  double stiffness = 80.0;
  double damping = 4.0;
  double point_mass = 1.0;
  double grasp_radius = 0.08;
  int move_steps = 40;
  /// The gripper stays closed at the target until the body is at rest, at most this many steps.
  int hold_max_steps = 2000;
  int frame_stride = 10;
  double settle_speed = 1e-3;
  int settle_max_steps = 2000;
  /// Stiffness multiplier for the toy's body blob.
  double blob_stiffness_scale = 4.0;
  double max_offset = 0.03;
  double max_rotation_deg = 8.0;
  double jitter = 0.004;
};

struct PerceptionConfig {
  int grid = 24;
  int keypoints = 8;
  int cue_frames = 4;
};

struct PlannerConfig {
  std::vector<int> hidden = {32, 32};
  int pretrain_states = 500;
  int pretrain_holdout = 100;
  int pretrain_epochs = 100;
  double pretrain_lr = 1e-3;
  int pretrain_batch = 32;
  /// Train one planner across all tasks instead of one per task.
  bool joint = false;
};

struct WorldModelConfig {
  int diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int hidden = 256;
  int frames = 4;
  int time_dim = 16;
  int ddim_steps = 10;
  int base_epochs = 30;
  int control_epochs = 60;
  double lr = 1e-3;
  int batch = 16;
  std::string mode = "object_only";
};

struct PreferenceConfig {
  int k = 8;
};

struct OrpoConfig {
  double lr = 1e-3;
  int batch = 32;
  int epochs = 200;
  double nll_weight = 0.0;
};

struct HarnessConfig {
  std::string task = "rope";
  int episodes = 2000;
  int trials = 50;
  double success_iou = 0.8;
  double progress_margin = 0.1;
  std::string eval_mode = "direct";
  int verify_k = 4;
  std::vector<int> bench_ks = {4, 8};
  double holdout_fraction = 0.1;
};

struct Config {
  SimConfig sim;
  PerceptionConfig perception;
  PlannerConfig planner;
  WorldModelConfig wm;
  PreferenceConfig preference;
  OrpoConfig orpo;
  HarnessConfig harness;
  std::uint64_t seed = 1;
  int threads = 0;
};

/// Parses a config document; every key must be known. Missing keys keep defaults.
Config config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const Config& cfg);
Config load_config(const std::string& path);

/// Short stable hex digest of the serialized config.
std::string config_hash(const Config& cfg);

/// Resolves threads == 0 to the machine's available parallelism.
int effective_threads(const Config& cfg);

}  // namespace dreamplan
