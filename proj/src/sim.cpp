#include "dreamplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "dreamplan/errors.hpp"
#include "dreamplan/rng.hpp"

namespace dreamplan {

double MassPointBody::max_speed() const {
  double best = 0.0;
  for (const Vec2& v : velocities) best = std::max(best, norm(v));
  return best;
}

void MassPointBody::validate() const {
  if (velocities.size() != points.size()) throw InvalidArgument("velocity count differs from point count");
  if (!(point_mass > 0.0)) throw InvalidArgument("point mass must be positive");
  if (!(damping >= 0.0)) throw InvalidArgument("damping must be non-negative");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const Spring& s : springs) {
    if (s.i >= points.size() || s.j >= points.size()) throw InvalidArgument("spring endpoint out of range");
    if (s.i == s.j) throw InvalidArgument("spring connects a point to itself");
    auto key = std::minmax(s.i, s.j);
    if (!seen.insert(key).second) throw InvalidArgument("duplicate spring");
  }
}

std::string_view task_name(TaskId task) {
  switch (task) {
    case TaskId::rope:
      return "rope";
    case TaskId::cloth:
      return "cloth";
    case TaskId::toy:
      return "toy";
  }
  return "?";
}

TaskId parse_task(std::string_view name) {
  if (name == "rope") return TaskId::rope;
  if (name == "cloth") return TaskId::cloth;
  if (name == "toy") return TaskId::toy;
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

TaskSpec TaskSpec::from_config(TaskId task, const SimConfig& cfg) {
  TaskSpec spec;
  spec.task = task;
  spec.randomization.max_offset = cfg.max_offset;
  spec.randomization.max_rotation_rad = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  spec.randomization.jitter = cfg.jitter;
  spec.physics = cfg;
  return spec;
}

namespace {

constexpr double kRopeSpacing = 0.05;
constexpr int kRopePoints = 12;
constexpr int kClothSide = 5;
constexpr double kClothSpacing = 0.08;
constexpr double kBlobSpacing = 0.06;
constexpr double kArmSpacing = 0.06;

void add_spring(MassPointBody& body, std::size_t i, std::size_t j, double stiffness) {
  body.springs.push_back({i, j, distance(body.points[i], body.points[j]), stiffness});
}

// Rest shapes are laid out in a local frame centered on the origin.

MassPointBody rope_shape(const TaskSpec& spec) {
  // Left part lies along the goal line; the right part is bunched back into a bow.
  MassPointBody body;
  const double half = 0.5 * kRopeSpacing * (kRopePoints - 1);
  Vec2 p{-half, 0.0};
  body.points.push_back(p);
  const double bend_start = 4;
  for (int k = 1; k < kRopePoints; ++k) {
    double heading = 0.0;
    if (k > bend_start) heading = -(k - bend_start) * 0.42;
    p += kRopeSpacing * Vec2{std::cos(heading), std::sin(heading)};
    body.points.push_back(p);
  }
  for (int k = 0; k + 1 < kRopePoints; ++k) add_spring(body, k, k + 1, spec.physics.stiffness);
  return body;
}

MassPointBody rope_goal() {
  MassPointBody body;
  const double half = 0.5 * kRopeSpacing * (kRopePoints - 1);
  for (int k = 0; k < kRopePoints; ++k) body.points.push_back({0.5 - half + k * kRopeSpacing, 0.5});
  return body;
}

std::size_t grid_index(int row, int col) { return static_cast<std::size_t>(row * kClothSide + col); }

MassPointBody cloth_shape(const TaskSpec& spec) {
  MassPointBody body;
  const double half = 0.5 * kClothSpacing * (kClothSide - 1);
  for (int r = 0; r < kClothSide; ++r)
    for (int c = 0; c < kClothSide; ++c) body.points.push_back({-half + c * kClothSpacing, -half + r * kClothSpacing});
  // structural
  for (int r = 0; r < kClothSide; ++r)
    for (int c = 0; c < kClothSide; ++c) {
      if (c + 1 < kClothSide) add_spring(body, grid_index(r, c), grid_index(r, c + 1), spec.physics.stiffness);
      if (r + 1 < kClothSide) add_spring(body, grid_index(r, c), grid_index(r + 1, c), spec.physics.stiffness);
    }
  // shear
  for (int r = 0; r + 1 < kClothSide; ++r)
    for (int c = 0; c + 1 < kClothSide; ++c) {
      add_spring(body, grid_index(r, c), grid_index(r + 1, c + 1), spec.physics.stiffness);
      add_spring(body, grid_index(r, c + 1), grid_index(r + 1, c), spec.physics.stiffness);
    }
  return body;
}

/// Left half folded onto the right half: column c < mid lands on the mirror of column (side-1-c).
std::vector<Vec2> cloth_goal_local(const MassPointBody& shape) {
  std::vector<Vec2> out = shape.points;
  for (int r = 0; r < kClothSide; ++r)
    for (int c = 0; c < kClothSide / 2; ++c) out[grid_index(r, c)] = shape.points[grid_index(r, kClothSide - 1 - c)];
  return out;
}

constexpr std::size_t kToyRoot = 5;  // middle of the blob's right column

MassPointBody toy_shape(const TaskSpec& spec) {
  MassPointBody body;
  const Vec2 center{-0.08, 0.0};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) body.points.push_back(center + Vec2{(c - 1) * kBlobSpacing, (r - 1) * kBlobSpacing});
  const double blob_k = spec.physics.stiffness * spec.physics.blob_stiffness_scale;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const auto at = [](int rr, int cc) { return static_cast<std::size_t>(rr * 3 + cc); };
      if (c + 1 < 3) add_spring(body, at(r, c), at(r, c + 1), blob_k);
      if (r + 1 < 3) add_spring(body, at(r, c), at(r + 1, c), blob_k);
      if (r + 1 < 3 && c + 1 < 3) {
        add_spring(body, at(r, c), at(r + 1, c + 1), blob_k);
        add_spring(body, at(r, c + 1), at(r + 1, c), blob_k);
      }
    }
  Vec2 p = body.points[kToyRoot];
  std::size_t prev = kToyRoot;
  for (int k = 0; k < 4; ++k) {
    p += Vec2{kArmSpacing, 0.0};
    body.points.push_back(p);
    add_spring(body, prev, body.points.size() - 1, spec.physics.stiffness);
    prev = body.points.size() - 1;
  }
  return body;
}

/// Blob unchanged; appendage rotated a quarter turn about its root.
std::vector<Vec2> toy_goal_local(const MassPointBody& shape) {
  std::vector<Vec2> out = shape.points;
  const Vec2 root = shape.points[kToyRoot];
  for (std::size_t k = 9; k < out.size(); ++k) out[k] = root + rotate(shape.points[k] - root, -std::numbers::pi / 2);
  return out;
}

Vec2 place(Vec2 local, double angle, Vec2 center) { return center + rotate(local, angle); }

void finish_body(MassPointBody& body, const TaskSpec& spec) {
  body.velocities.assign(body.points.size(), Vec2{});
  body.damping = spec.physics.damping;
  body.point_mass = spec.physics.point_mass;
}

}  // namespace

TaskInstance init_task(const TaskSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::kInit, static_cast<std::uint64_t>(spec.task)));
  const auto& rnd = spec.randomization;
  const Vec2 offset{rng.uniform(-rnd.max_offset, rnd.max_offset), rng.uniform(-rnd.max_offset, rnd.max_offset)};
  const double angle = rng.uniform(-rnd.max_rotation_rad, rnd.max_rotation_rad);
  const Vec2 center = Vec2{0.5, 0.5} + offset;

  MassPointBody shape;
  std::vector<Vec2> goal_local;
  switch (spec.task) {
    case TaskId::rope:
      shape = rope_shape(spec);
      break;
    case TaskId::cloth:
      shape = cloth_shape(spec);
      goal_local = cloth_goal_local(shape);
      break;
    case TaskId::toy:
      shape = toy_shape(spec);
      goal_local = toy_goal_local(shape);
      break;
  }

  TaskInstance out;
  out.body = shape;
  for (Vec2& p : out.body.points) {
    p = place(p, angle, center);
    p += Vec2{rng.uniform(-rnd.jitter, rnd.jitter), rng.uniform(-rnd.jitter, rnd.jitter)};
  }
  finish_body(out.body, spec);

  if (spec.task == TaskId::rope) {
    out.goal = rope_goal();
    out.goal.springs = shape.springs;
  } else {
    out.goal.springs = shape.springs;
    for (const Vec2& p : goal_local) out.goal.points.push_back(place(p, angle, center));
  }
  finish_body(out.goal, spec);
  out.body.validate();
  out.goal.validate();
  out.body = settle(out.body, spec.physics);
  return out;
}

MassPointBody step(const MassPointBody& body, double dt, std::optional<Pin> pin) {
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (pin && pin->index >= body.size()) throw InvalidArgument("pin index out of range");

  const std::size_t n = body.size();
  std::vector<Vec2> force(n);
  for (const Spring& s : body.springs) {
    const Vec2 d = body.points[s.j] - body.points[s.i];
    const double len = norm(d);
    if (len == 0.0) continue;
    const Vec2 f = (s.stiffness * (len - s.rest_length) / len) * d;
    force[s.i] += f;
    force[s.j] -= f;
  }

  MassPointBody out = body;
  const double inv_mass = 1.0 / body.point_mass;
  for (std::size_t k = 0; k < n; ++k) {
    out.velocities[k] = body.velocities[k] + (dt * inv_mass) * (force[k] - body.damping * body.velocities[k]);
    out.points[k] = body.points[k] + dt * out.velocities[k];
  }
  if (pin) {
    out.velocities[pin->index] = (1.0 / dt) * (pin->position - body.points[pin->index]);
    out.points[pin->index] = pin->position;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!is_finite(out.points[k]) || !is_finite(out.velocities[k]))
      throw NumericalError("non-finite state after simulation step");
  }
  return out;
}

MassPointBody settle(const MassPointBody& body, const SimConfig& cfg, int* steps_taken) {
  MassPointBody current = body;
  int steps = 0;
  while (steps < cfg.settle_max_steps) {
    MassPointBody next = step(current, cfg.dt);
    ++steps;
    if (next.max_speed() < cfg.settle_speed) {
      // Static friction holds once the trial step leaves every point below the threshold.
      std::fill(current.velocities.begin(), current.velocities.end(), Vec2{});
      if (steps_taken) *steps_taken = steps;
      return current;
    }
    current = std::move(next);
  }
  if (steps_taken) *steps_taken = steps;
  return current;
}

PrimitiveResult execute_primitive(const MassPointBody& body, Vec2 grasp_pos, Vec2 target_pos, const SimConfig& cfg) {
  PrimitiveResult result;
  result.final_body = body;

  std::optional<std::size_t> nearest;
  double best = cfg.grasp_radius * cfg.grasp_radius;
  for (std::size_t k = 0; k < body.size(); ++k) {
    const double d2 = squared_distance(body.points[k], grasp_pos);
    if (d2 <= best && (!nearest || d2 < squared_distance(body.points[*nearest], grasp_pos))) nearest = k;
  }
  if (!nearest) {
    result.status = PrimitiveStatus::no_grasp;
    result.frames.push_back(body);
    return result;
  }
  result.grasped_index = nearest;

  try {
    MassPointBody current = body;
    int counter = 0;
    auto record = [&]() {
      if (++counter % cfg.frame_stride == 0) result.frames.push_back(current);
    };
    for (int k = 1; k <= cfg.move_steps; ++k) {
      const Vec2 gripper = lerp(grasp_pos, target_pos, static_cast<double>(k) / cfg.move_steps);
      result.gripper_path.push_back(gripper);
      current = step(current, cfg.dt, Pin{*nearest, gripper});
      record();
    }
    // Opening on a still-moving body lets stretched springs snap back, so wait for it to come to rest.
    for (int k = 0; k < cfg.hold_max_steps && current.max_speed() >= cfg.settle_speed; ++k) {
      result.gripper_path.push_back(target_pos);
      current = step(current, cfg.dt, Pin{*nearest, target_pos});
      record();
    }
    // Released: relax in stride-sized chunks so intermediate frames are recorded.
    int settle_steps = 0;
    SimConfig chunk = cfg;
    chunk.settle_max_steps = cfg.frame_stride;
    while (settle_steps < cfg.settle_max_steps) {
      int taken = 0;
      chunk.settle_max_steps = std::min(cfg.frame_stride, cfg.settle_max_steps - settle_steps);
      MassPointBody next = settle(current, chunk, &taken);
      settle_steps += taken;
      const bool at_rest = taken < chunk.settle_max_steps || next.max_speed() == 0.0;
      current = std::move(next);
      if (at_rest) break;
      result.frames.push_back(current);
    }
    result.final_body = current;
    result.frames.push_back(current);
  } catch (const NumericalError&) {
    result.status = PrimitiveStatus::unstable;
    result.final_body = body;
    if (result.frames.empty()) result.frames.push_back(body);
  }
  return result;
}

}  // namespace dreamplan
