#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dreamplan/config.hpp"
#include "dreamplan/geometry.hpp"

namespace dreamplan {

struct Spring {
  std::size_t i = 0;
  std::size_t j = 0;
  double rest_length = 0.0;
  double stiffness = 0.0;

  friend bool operator==(const Spring&, const Spring&) = default;
};

/// Deformable object as point masses joined by Hookean springs. Workspace is [0,1]^2.
struct MassPointBody {
  std::vector<Vec2> points;
  std::vector<Vec2> velocities;
  std::vector<Spring> springs;
  double damping = 0.0;
  double point_mass = 1.0;

  std::size_t size() const { return points.size(); }
  double max_speed() const;
  /// Throws InvalidArgument if the topology or parameters are malformed.
  void validate() const;

  friend bool operator==(const MassPointBody&, const MassPointBody&) = default;
};

enum class TaskId { rope, cloth, toy };

std::string_view task_name(TaskId task);
/// Throws InvalidArgument for unknown names.
TaskId parse_task(std::string_view name);

struct InitRandomization {
  double max_offset = 0.0;
  double max_rotation_rad = 0.0;
  double jitter = 0.0;
};

/// A task: which object, how its start is randomized, and how its goal is derived.
struct TaskSpec {
  TaskId task = TaskId::rope;
  InitRandomization randomization;
  /// Material constants and the settling rule applied to the randomized start.
  SimConfig physics;

  static TaskSpec from_config(TaskId task, const SimConfig& cfg);
};

struct TaskInstance {
  MassPointBody body;
  MassPointBody goal;
};

/// Randomized, settled start body and its goal configuration. Same (spec, seed), same bodies.
TaskInstance init_task(const TaskSpec& spec, std::uint64_t seed);

struct Pin {
  std::size_t index = 0;
  Vec2 position;
};

/// Semi-implicit Euler step. Throws NumericalError if any state becomes non-finite.
MassPointBody step(const MassPointBody& body, double dt, std::optional<Pin> pin = std::nullopt);

/// Damped relaxation until every point is slower than cfg.settle_speed, or the step cap.
/// A body that has come to rest keeps its positions and has its velocities zeroed.
MassPointBody settle(const MassPointBody& body, const SimConfig& cfg, int* steps_taken = nullptr);

enum class PrimitiveStatus { ok, no_grasp, unstable };

struct PrimitiveResult {
  PrimitiveStatus status = PrimitiveStatus::ok;
  std::vector<MassPointBody> frames;
  MassPointBody final_body;
  std::optional<std::size_t> grasped_index;
  std::vector<Vec2> gripper_path;
};

/// Pick the mass point nearest `grasp_pos`, carry it in a straight line to `target_pos`, release, settle.
PrimitiveResult execute_primitive(const MassPointBody& body, Vec2 grasp_pos, Vec2 target_pos,
                                  const SimConfig& cfg);

}  // namespace dreamplan
