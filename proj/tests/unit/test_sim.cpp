#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "dreamplan/errors.hpp"
#include "dreamplan/perception.hpp"
#include "dreamplan/rng.hpp"
#include "dreamplan/sim.hpp"

using namespace dreamplan;

namespace {

TaskInstance make(TaskId task, std::uint64_t seed) { return init_task(TaskSpec::from_config(task, SimConfig{}), seed); }

bool inside_unit_square(const MassPointBody& b) {
  for (const Vec2& p : b.points)
    if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) return false;
  return true;
}

MassPointBody two_points(double separation, double rest) {
  MassPointBody b;
  b.points = {{0.5 - separation / 2, 0.5}, {0.5 + separation / 2, 0.5}};
  b.velocities = {{0, 0}, {0, 0}};
  b.springs = {{0, 1, rest, 80.0}};
  b.damping = 4.0;
  b.point_mass = 1.0;
  return b;
}

}  // namespace

TEST_SUITE("sim") {
  TEST_CASE("init_task is a pure function of (spec, seed)") {
    for (TaskId t : {TaskId::rope, TaskId::cloth, TaskId::toy}) {
      const TaskInstance a = make(t, 7);
      const TaskInstance b = make(t, 7);
      CHECK(a.body == b.body);
      CHECK(a.goal == b.goal);
      CHECK_FALSE(make(t, 8).body == a.body);
    }
  }

  TEST_CASE("rope topology") {
    const TaskInstance ti = make(TaskId::rope, 3);
    CHECK(ti.body.size() == 12);
    CHECK(ti.body.springs.size() == 11);
    for (const Spring& s : ti.body.springs) CHECK(std::abs(static_cast<long>(s.i) - static_cast<long>(s.j)) == 1);
  }

  TEST_CASE("cloth topology: 4-neighbour structural and diagonal shear springs") {
    const TaskInstance ti = make(TaskId::cloth, 3);
    REQUIRE(ti.body.size() == 25);
    // Enumerate the 5x5 lattice independently of the generator.
    int expect_structural = 0;
    int expect_shear = 0;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        if (c + 1 < 5) ++expect_structural;
        if (r + 1 < 5) ++expect_structural;
        if (r + 1 < 5 && c + 1 < 5) expect_shear += 2;
      }
    int structural = 0;
    int shear = 0;
    for (const Spring& s : ti.body.springs) {
      const int dr = std::abs(static_cast<int>(s.i / 5) - static_cast<int>(s.j / 5));
      const int dc = std::abs(static_cast<int>(s.i % 5) - static_cast<int>(s.j % 5));
      if (dr + dc == 1) ++structural;
      else if (dr == 1 && dc == 1) ++shear;
    }
    CHECK(expect_structural == 40);
    CHECK(expect_shear == 32);
    CHECK(structural == expect_structural);
    CHECK(shear == expect_shear);
    CHECK(ti.body.springs.size() == 72);
  }

  TEST_CASE("toy is a 3x3 blob plus a 4-point arm") {
    const TaskInstance ti = make(TaskId::toy, 3);
    CHECK(ti.body.size() == 13);
    CHECK_NOTHROW(ti.body.validate());
  }

  TEST_CASE("bodies and goals stay inside the workspace") {
    for (TaskId t : {TaskId::rope, TaskId::cloth, TaskId::toy})
      for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const TaskInstance ti = make(t, seed);
        REQUIRE(inside_unit_square(ti.body));
        REQUIRE(inside_unit_square(ti.goal));
      }
  }

  TEST_CASE("unknown task name") { CHECK_THROWS_AS(parse_task("sock"), InvalidArgument); }

  TEST_CASE("step: equilibrium is a fixed point") {
    MassPointBody b = two_points(0.5, 0.5);
    CHECK(step(b, 0.01) == b);
  }

  TEST_CASE("step: stretched spring pulls the ends together") {
    const MassPointBody b = two_points(0.2, 0.1);
    const MassPointBody n = step(b, 0.01);
    CHECK(n.points[0].x > b.points[0].x);
    CHECK(n.points[1].x < b.points[1].x);
    // One semi-implicit Euler step by hand: f = k (|d| - L) = 80 * 0.1 = 8 along +x on point 0.
    const double v = 0.01 * 8.0;
    CHECK(n.velocities[0].x == doctest::Approx(v).epsilon(1e-12));
    CHECK(n.points[0].x == doctest::Approx(b.points[0].x + 0.01 * v).epsilon(1e-12));
  }

  TEST_CASE("step: pin is exact and carries the finite-difference velocity") {
    const MassPointBody b = two_points(0.2, 0.1);
    const Vec2 p{0.33, 0.61};
    const MassPointBody n = step(b, 0.01, Pin{0, p});
    CHECK(n.points[0] == p);
    CHECK(n.velocities[0].x == doctest::Approx((p.x - b.points[0].x) / 0.01));
    CHECK(n.velocities[0].y == doctest::Approx((p.y - b.points[0].y) / 0.01));
  }

  TEST_CASE("step: argument checks and instability") {
    const MassPointBody b = two_points(0.2, 0.1);
    CHECK_THROWS_AS(step(b, 0.0), InvalidArgument);
    CHECK_THROWS_AS(step(b, 0.01, Pin{5, {0, 0}}), InvalidArgument);
    MassPointBody bad = b;
    bad.springs[0].stiffness = 1e308;
    CHECK_THROWS_AS(step(step(bad, 0.01), 0.01), NumericalError);
  }

  TEST_CASE("settle: a body at rest returns after one step, unchanged") {
    const TaskInstance ti = make(TaskId::rope, 1);
    int steps = 0;
    const MassPointBody s = settle(ti.body, SimConfig{}, &steps);
    CHECK(steps == 1);
    CHECK(s == ti.body);
  }

  TEST_CASE("settle: perturbed rope comes to rest or uses the whole budget") {
    MassPointBody b = make(TaskId::rope, 2).body;
    b.points[5] = b.points[5] + Vec2{0.05, -0.03};
    b.velocities[3] = {0.4, 0.2};
    int steps = 0;
    const SimConfig cfg;
    const MassPointBody s = settle(b, cfg, &steps);
    CHECK((s.max_speed() < 1e-3 || steps == cfg.settle_max_steps));
    CHECK(steps <= cfg.settle_max_steps);
  }

  TEST_CASE("settle is idempotent") {
    Rng rng(99);
    const SimConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      MassPointBody b = make(static_cast<TaskId>(trial % 3), static_cast<std::uint64_t>(trial)).body;
      for (std::size_t k = 0; k < b.size(); ++k) {
        b.points[k] = b.points[k] + Vec2{rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)};
        b.velocities[k] = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
      }
      const MassPointBody once = settle(b, cfg);
      const MassPointBody twice = settle(once, cfg);
      for (std::size_t k = 0; k < b.size(); ++k) {
        CHECK(distance(once.points[k], twice.points[k]) < 1e-9);
        CHECK(norm(once.velocities[k] - twice.velocities[k]) < 1e-9);
      }
    }
  }

  TEST_CASE("primitive: zero-length move is nearly an identity") {
    const TaskInstance ti = make(TaskId::cloth, 4);
    const Vec2 p = ti.body.points[12];
    const PrimitiveResult r = execute_primitive(ti.body, p, p, SimConfig{});
    REQUIRE(r.status == PrimitiveStatus::ok);
    CHECK(soft_iou(rasterize(r.final_body, 24), rasterize(ti.body, 24)) >= 0.99);
  }

  TEST_CASE("primitive: nothing in reach is a flagged no-op") {
    const TaskInstance ti = make(TaskId::rope, 4);
    const PrimitiveResult r = execute_primitive(ti.body, {0.05, 0.95}, {0.5, 0.5}, SimConfig{});
    CHECK(r.status == PrimitiveStatus::no_grasp);
    CHECK_FALSE(r.grasped_index.has_value());
    CHECK(r.final_body == ti.body);
    CHECK_FALSE(r.frames.empty());
  }

  TEST_CASE("primitive: dragged rope end lands near the target") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const TaskInstance ti = make(TaskId::rope, seed);
      const Vec2 grasp = ti.body.points[0];
      const Vec2 target = grasp + Vec2{0.0, 0.2};
      const PrimitiveResult r = execute_primitive(ti.body, grasp, target, SimConfig{});
      REQUIRE(r.status == PrimitiveStatus::ok);
      REQUIRE(r.grasped_index.has_value());
      CHECK(*r.grasped_index == 0);
      CHECK(distance(r.final_body.points[0], target) < 0.05);
    }
  }

  TEST_CASE("primitive: pinned point follows the gripper during transport") {
    const TaskInstance ti = make(TaskId::toy, 5);
    const SimConfig cfg;
    const Vec2 grasp = ti.body.points[12];
    const PrimitiveResult r = execute_primitive(ti.body, grasp, grasp + Vec2{0.1, 0.1}, cfg);
    REQUIRE(r.status == PrimitiveStatus::ok);
    // Frames 0..3 are recorded every stride during the move.
    for (int f = 0; f < cfg.move_steps / cfg.frame_stride; ++f) {
      const std::size_t path_index = static_cast<std::size_t>((f + 1) * cfg.frame_stride - 1);
      CHECK(r.frames[static_cast<std::size_t>(f)].points[12] == r.gripper_path[path_index]);
    }
    CHECK(r.frames.back() == r.final_body);
  }

  TEST_CASE("stability and topology over 1000 random primitives per task") {
    const SimConfig cfg;
    for (TaskId t : {TaskId::rope, TaskId::cloth, TaskId::toy}) {
      Rng rng(static_cast<std::uint64_t>(t) + 100);
      int unstable = 0;
      for (int trial = 0; trial < 1000; ++trial) {
        const TaskInstance ti = make(t, rng.next_u64());
        const Vec2 grasp = ti.body.points[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(ti.body.size()) - 1))];
        const Vec2 target{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        const PrimitiveResult r = execute_primitive(ti.body, grasp, target, cfg);
        if (r.status == PrimitiveStatus::unstable) ++unstable;
        REQUIRE(r.final_body.size() == ti.body.size());
        REQUIRE(r.final_body.springs.size() == ti.body.springs.size());
        for (const Vec2& p : r.final_body.points) REQUIRE(is_finite(p));
      }
      CHECK(unstable == 0);
    }
  }
}
