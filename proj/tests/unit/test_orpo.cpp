#include <cmath>

#include "doctest.h"
#include "dreamplan/errors.hpp"
#include "dreamplan/gradcheck.hpp"
#include "dreamplan/orpo.hpp"

using namespace dreamplan;

namespace {

PlannerState task_state(TaskId task, std::uint64_t seed) {
  const TaskInstance ti = init_task(TaskSpec::from_config(task, SimConfig{}), seed);
  return make_planner_state(ti.body, ti.goal, PerceptionConfig{});
}

PreferenceGroup random_group(Rng& rng, std::size_t k) {
  PreferenceGroup g;
  g.state = task_state(static_cast<TaskId>(rng.uniform_int(0, 2)), rng.next_u64());
  g.candidates = sample_candidates(make_planner(PlannerConfig{}), g.state, k, rng);
  for (std::size_t c = 0; c < k; ++c) g.scores.push_back(rng.uniform());
  g.positive_index = static_cast<std::size_t>(std::max_element(g.scores.begin(), g.scores.end()) - g.scores.begin());
  return g;
}

// Labels follow a fixed rule the scorer can represent: shorter moves win.
PreferenceGroup short_move_group(Rng& rng, std::size_t k) {
  PreferenceGroup g = random_group(rng, k);
  for (std::size_t c = 0; c < k; ++c)
    g.scores[c] = -distance(g.state.grasp_of(g.candidates[c]), g.state.target_of(g.candidates[c]));
  g.positive_index = static_cast<std::size_t>(std::max_element(g.scores.begin(), g.scores.end()) - g.scores.begin());
  return g;
}

// log(1 + e^-m), written out independently.
double reference_loss(double margin) { return std::log1p(std::exp(-margin)); }

}  // namespace

TEST_SUITE("orpo") {
  TEST_CASE("uniform policy gives ln 2") {
    Rng rng(1);
    const PreferenceGroup g = random_group(rng, 6);
    const double l = orpo_loss(make_planner(PlannerConfig{}), g);
    CHECK(std::abs(l - std::log(2.0)) < 1e-12);
  }

  TEST_CASE("margin values") {
    CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(neg_log_sigmoid(5.0) - 0.006715348489117967) < 1e-12);
    CHECK(std::abs(neg_log_sigmoid(5.0) - reference_loss(5.0)) < 1e-15);
    CHECK(std::abs(neg_log_sigmoid(-5.0) - (5.0 + std::log1p(std::exp(-5.0)))) < 1e-12);
    CHECK(neg_log_sigmoid(-5.0) == doctest::Approx(5.006715).epsilon(1e-7));
    CHECK(neg_log_sigmoid(800.0) >= 0.0);
    CHECK(neg_log_sigmoid(800.0) < 1e-300);
    CHECK(neg_log_sigmoid(-800.0) == doctest::Approx(800.0));
  }

  TEST_CASE("gradient against finite differences, never zero") {
    CHECK(gradcheck_orpo(5, 2).passed());
    Rng rng(5);
    Rng init(6);
    const PlannerParams p = make_planner(PlannerConfig{}, &init);
    for (int n = 0; n < 10; ++n) {
      const PreferenceGroup g = random_group(rng, 4);
      const std::vector<double> grad = orpo_grad(p, g);
      double norm = 0.0;
      for (double v : grad) norm += v * v;
      CHECK(norm > 0.0);
    }
  }

  TEST_CASE("loss and gradient agree with the separate calls") {
    Rng rng(9);
    Rng init(10);
    const PlannerParams p = make_planner(PlannerConfig{}, &init);
    const PreferenceGroup g = random_group(rng, 5);
    const OrpoLossGrad lg = orpo_loss_grad(p, g, 0.3);
    CHECK(lg.loss == orpo_loss(p, g, 0.3));
    CHECK(lg.grad == orpo_grad(p, g, 0.3));
  }

  TEST_CASE("one Adam step widens the margin") {
    // One negative: the first Adam step moves every weight against the margin gradient's sign.
    // With several negatives the averaged loss need not favour the best one.
    Rng rng(3);
    Rng init(4);
    for (int n = 0; n < 10; ++n) {
      PlannerParams p = make_planner(PlannerConfig{}, &init);
      const PreferenceGroup g = random_group(rng, 2);
      const double before = preference_margin(p, g);
      AdamState st(p.store.size());
      adam_step(p.store.values(), orpo_grad(p, g), st, AdamOptions{1e-3});
      CHECK(preference_margin(p, g) > before);
    }
  }

  TEST_CASE("training: loss falls, accuracy, determinism") {
    Rng data(21);
    std::vector<PreferenceGroup> groups;
    for (int n = 0; n < 16; ++n) groups.push_back(short_move_group(data, 4));
    OrpoConfig cfg;
    cfg.epochs = 200;
    Rng i1(1), i2(1);
    PlannerParams p1 = make_planner(PlannerConfig{}, &i1);
    PlannerParams p2 = make_planner(PlannerConfig{}, &i2);
    Rng r1(2), r2(2);
    int calls = 0;
    const OrpoReport rep = train_orpo(p1, groups, cfg, r1, [&](const OrpoEpoch&) { ++calls; });
    train_orpo(p2, groups, cfg, r2);
    REQUIRE(rep.epochs.size() == 200);
    CHECK(calls == 200);
    CHECK(rep.epochs.back().mean_loss < rep.epochs.front().mean_loss);
    CHECK(rep.epochs.back().pref_accuracy >= 0.8);
    CHECK(preference_accuracy(p1, groups) == rep.epochs.back().pref_accuracy);
    CHECK(p1.store == p2.store);
  }
}
