#include <cmath>

#include "doctest.h"
#include "dreamplan/errors.hpp"
#include "dreamplan/gradcheck.hpp"
#include "dreamplan/harness.hpp"
#include "dreamplan/world_model.hpp"

using namespace dreamplan;

namespace {

Config small_config() {
  Config cfg;
  cfg.perception.grid = 12;
  cfg.wm.hidden = 32;
  cfg.wm.time_dim = 8;
  cfg.wm.base_epochs = 10;
  cfg.wm.control_epochs = 10;
  cfg.wm.batch = 16;
  return cfg;
}

struct Trained {
  Config cfg;
  Dataset data;
  std::vector<WmSample> samples;
  WorldModelParams wm;
  WorldModelParams before_base;
  WorldModelParams before_control;
  TrainLog base_log;
  TrainLog control_log;
};

// Shared across cases; training twice would double the suite time.
const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    r.cfg = small_config();
    const PlannerParams policy = make_planner(r.cfg.planner);
    r.data = collect_dataset(policy, r.cfg, TaskId::rope, 120, 3);
    Rng init(1);
    r.wm = make_world_model(r.cfg.wm, r.cfg.perception, init);
    r.samples = world_model_samples(r.wm, r.data.records);
    r.before_base = r.wm;
    Rng rng(2);
    r.base_log = train_base(r.wm, r.samples, r.cfg.wm, rng);
    r.before_control = r.wm;
    r.control_log = train_control(r.wm, r.samples, r.cfg.wm, rng);
    return r;
  }();
  return t;
}

}  // namespace

TEST_SUITE("world_model") {
  TEST_CASE("schedule") {
    const DiffusionSchedule s = DiffusionSchedule::linear(50, 1e-4, 0.02);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.beta_start() == doctest::Approx(1e-4));
    CHECK(s.beta_end() == doctest::Approx(0.02));
    double prod = 1.0;
    for (int t = 1; t <= 50; ++t) {
      prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 49.0);
      REQUIRE(s.alpha_bar[static_cast<std::size_t>(t)] == doctest::Approx(prod).epsilon(1e-12));
    }
  }

  TEST_CASE("forward process") {
    const DiffusionSchedule s = DiffusionSchedule::linear(50, 1e-4, 0.02);
    Rng rng(4);
    Matrix x0(20, 1), noise(20, 1);
    for (Eigen::Index k = 0; k < 20; ++k) {
      x0(k) = rng.uniform();
      noise(k) = rng.normal();
    }
    CHECK((forward_diffuse(x0, 1, noise, s) - x0).norm() <= 0.02 * noise.norm());
    const Matrix zero = Matrix::Zero(20, 1);
    CHECK(forward_diffuse(x0, 30, zero, s) == std::sqrt(s.alpha_bar[30]) * x0);
  }

  TEST_CASE("forward process variance is 1 - alpha_bar") {
    const DiffusionSchedule s = DiffusionSchedule::linear(50, 1e-4, 0.02);
    Rng rng(8);
    const Matrix x0 = Matrix::Constant(1, 10000, 0.7);
    Matrix noise(1, 10000);
    for (Eigen::Index k = 0; k < noise.size(); ++k) noise(k) = rng.normal();
    for (int t : {1, 25, 50}) {
      const Matrix xt = forward_diffuse(x0, t, noise, s);
      const double mean = xt.mean();
      const double var = (xt.array() - mean).square().sum() / static_cast<double>(xt.size() - 1);
      const double expect = 1.0 - s.alpha_bar[static_cast<std::size_t>(t)];
      CHECK(std::abs(var - expect) <= 0.05 * expect);
    }
  }

  TEST_CASE("scene synthesis") {
    Frame f(12);
    f.at(3, 3) = 0.9;
    CHECK(synthesize_scene(f, nullptr, SceneMode::object_only) == f);
    const Frame empty = synthesize_scene(Frame(12), nullptr, SceneMode::full_scene);
    for (double c : empty.cells) CHECK((c == 0.15 || c == 0.30));
    CHECK(synthesize_scene(f, nullptr, SceneMode::full_scene) == synthesize_scene(f, nullptr, SceneMode::full_scene));
    CHECK(synthesize_scene(f, nullptr, SceneMode::full_scene).at(3, 3) == 1.0);
    CHECK(parse_scene_mode("full-scene") == SceneMode::full_scene);
    CHECK(parse_scene_mode("object_only") == SceneMode::object_only);
  }

  TEST_CASE("zero-initialized control branch is a no-op") {
    const Config cfg = small_config();
    Rng rng(5);
    const WorldModelParams wm = make_world_model(cfg.wm, cfg.perception, rng);
    Matrix x(static_cast<Eigen::Index>(wm.stack_size()), 3), cond(static_cast<Eigen::Index>(wm.frame_cells()), 3),
        cue(static_cast<Eigen::Index>(wm.frame_cells() * 4), 3);
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = rng.normal();
    for (Eigen::Index k = 0; k < cond.size(); ++k) cond(k) = rng.uniform();
    for (Eigen::Index k = 0; k < cue.size(); ++k) cue(k) = rng.uniform();
    const std::vector<int> ts{1, 20, 50};
    CHECK(predict_eps(wm, x, ts, cond, &cue) == predict_eps(wm, x, ts, cond, nullptr));
    CHECK(predict_eps(wm, x, ts, cond, &cue) == predict_eps(wm, x, ts, cond, &cue));
  }

  TEST_CASE("denoising loss") {
    const Config cfg = small_config();
    Rng rng(6);
    WorldModelParams wm = make_world_model(cfg.wm, cfg.perception, rng);
    // Zero every output so the prediction is exactly zero; data_var -> inf kills the skip.
    for (double& v : wm.base.values()) v = 0.0;
    wm.data_var = 1e300;
    const Eigen::Index n = static_cast<Eigen::Index>(wm.stack_size());
    double total = 0.0;
    const int draws = 200;
    for (int d = 0; d < draws; ++d) {
      Matrix x0 = Matrix::Random(n, 1), cond = Matrix::Zero(static_cast<Eigen::Index>(wm.frame_cells()), 1);
      Matrix noise(n, 1);
      for (Eigen::Index k = 0; k < n; ++k) noise(k) = rng.normal();
      const std::vector<int> ts{rng.uniform_int(1, 50)};
      const double l = denoise_loss(wm, x0, cond, Matrix(), ts, noise, Branch::base, false, {});
      REQUIRE(l >= 0.0);
      total += l;
    }
    CHECK(std::abs(total / draws - 1.0) < 0.05);
  }

  TEST_CASE("denoising loss is zero for an exact predictor") {
    const Config cfg = small_config();
    Rng rng(7);
    WorldModelParams wm = make_world_model(cfg.wm, cfg.perception, rng);
    for (double& v : wm.base.values()) v = 0.0;
    wm.data_var = 1e300;
    const Eigen::Index n = static_cast<Eigen::Index>(wm.stack_size());
    const Matrix x0 = Matrix::Random(n, 2), cond = Matrix::Zero(static_cast<Eigen::Index>(wm.frame_cells()), 2);
    const std::vector<int> ts{3, 9};
    CHECK(denoise_loss(wm, x0, cond, Matrix(), ts, Matrix::Zero(n, 2), Branch::base, false, {}) == 0.0);
  }

  TEST_CASE("diffusion gradients") { CHECK(gradcheck_diffusion(4, 12).passed()); }

  TEST_CASE("base training: loss falls, control untouched, frozen afterwards") {
    const Trained& t = trained();
    REQUIRE(t.base_log.epoch_loss.size() == 10);
    CHECK(t.base_log.epoch_loss.back() < t.base_log.epoch_loss.front());
    CHECK(t.before_control.control == t.before_base.control);
    CHECK_FALSE(t.before_control.base == t.before_base.base);
    CHECK(t.before_control.base_frozen);
  }

  TEST_CASE("control training: base bit-identical, cue helps") {
    const Trained& t = trained();
    CHECK(t.wm.base == t.before_control.base);
    CHECK_FALSE(t.wm.control == t.before_control.control);
    CHECK(evaluate_denoise_loss(t.wm, t.samples, true, 99) < evaluate_denoise_loss(t.wm, t.samples, false, 99));
  }

  TEST_CASE("control training needs a frozen base") {
    const Config cfg = small_config();
    Rng rng(1);
    WorldModelParams wm = make_world_model(cfg.wm, cfg.perception, rng);
    CHECK_THROWS(train_control(wm, trained().samples, cfg.wm, rng));
  }

  TEST_CASE("training is deterministic") {
    const Trained& t = trained();
    WorldModelParams again = t.before_base;
    Rng rng(2);
    train_base(again, t.samples, t.cfg.wm, rng);
    CHECK(again.base == t.before_control.base);
  }

  TEST_CASE("rollouts") {
    const Trained& t = trained();
    const EpisodeRecord& r = t.data.records.front();
    const GripperMove a{r.grasp, r.target};
    const GripperMove b{r.kp_cur.coords[3], r.kp_goal.coords[6]};
    const RolloutPrediction p1 = sample_rollout(t.wm, r.o0, a, 42);
    const RolloutPrediction p2 = sample_rollout(t.wm, r.o0, a, 42);
    CHECK(p1.final == p2.final);
    CHECK(p1.frames.size() == 4);
    const RolloutPrediction p3 = sample_rollout(t.wm, r.o0, b, 42);
    double diff = 0.0;
    for (std::size_t k = 0; k < p1.final.cells.size(); ++k)
      diff = std::max(diff, std::abs(p1.final.cells[k] - p3.final.cells[k]));
    CHECK(diff > 1e-6);
    for (const Frame& f : p1.frames)
      for (double c : f.cells) REQUIRE((c >= 0.0 && c <= 1.0));
    const std::vector<GripperMove> moves{a, b};
    const auto batch = sample_rollouts(t.wm, r.o0, moves, 42);
    // Batched and single products round differently; agreement is to roundoff.
    for (std::size_t k = 0; k < p1.final.cells.size(); ++k) {
      REQUIRE(std::abs(batch[0].final.cells[k] - p1.final.cells[k]) < 1e-9);
      REQUIRE(std::abs(batch[1].final.cells[k] - p3.final.cells[k]) < 1e-9);
    }
    CHECK(sample_rollouts(t.wm, r.o0, moves, 42)[1].final == batch[1].final);
  }

  TEST_CASE("ddim timesteps") {
    CHECK(ddim_timesteps(50, 10) == std::vector<int>{50, 45, 40, 35, 30, 25, 20, 15, 10, 5});
  }

  TEST_CASE("world model checkpoint round trip") {
    const Trained& t = trained();
    const auto path = std::filesystem::temp_directory_path() / "dreamplan_test_wm.ckpt";
    save_world_model(t.wm, "h", path);
    const WorldModelParams w = load_world_model(path);
    CHECK(w.base == t.wm.base);
    CHECK(w.control == t.wm.control);
    CHECK(w.data_mean == t.wm.data_mean);
    CHECK(w.data_var == t.wm.data_var);
    CHECK(w.grid == 12);
    CHECK(w.hidden == 32);
    const EpisodeRecord& r = t.data.records.front();
    CHECK(sample_rollout(w, r.o0, {r.grasp, r.target}, 5).final == sample_rollout(t.wm, r.o0, {r.grasp, r.target}, 5).final);
  }
}
