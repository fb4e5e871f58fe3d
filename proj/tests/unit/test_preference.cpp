#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "dreamplan/errors.hpp"
#include "dreamplan/preference.hpp"

using namespace dreamplan;

namespace {

PlannerState task_state(TaskId task, std::uint64_t seed, MassPointBody* body = nullptr) {
  const TaskInstance ti = init_task(TaskSpec::from_config(task, SimConfig{}), seed);
  if (body) *body = ti.body;
  return make_planner_state(ti.body, ti.goal, PerceptionConfig{});
}

// Scores come from a fixed table, so the group logic can be checked without a model.
class TablePredictor final : public OutcomePredictor {
 public:
  explicit TablePredictor(std::vector<double> fill) : fill_(std::move(fill)) {}

 protected:
  std::vector<Frame> do_predict(const Scene& scene, std::span<const GripperMove> moves, std::uint64_t) override {
    std::vector<Frame> out;
    for (std::size_t k = 0; k < moves.size(); ++k) {
      Frame f = scene.state->goal;
      for (double& c : f.cells) c *= fill_[k % fill_.size()];
      out.push_back(f);
    }
    return out;
  }

 private:
  std::vector<double> fill_;
};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dreamplan_test_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_SUITE("preference") {
  TEST_CASE("candidates: K = 64 is the whole action space") {
    const PlannerState s = task_state(TaskId::rope, 1);
    Rng rng(1);
    auto c = sample_candidates(make_planner(PlannerConfig{}), s, 64, rng);
    REQUIRE(c.size() == 64);
    std::vector<std::size_t> flat;
    for (auto a : c) flat.push_back(s.flat(a));
    std::sort(flat.begin(), flat.end());
    for (std::size_t k = 0; k < 64; ++k) CHECK(flat[k] == k);
  }

  TEST_CASE("candidates: seeded and distinct") {
    const PlannerState s = task_state(TaskId::cloth, 2);
    Rng a(7), b(7);
    const PlannerParams p = make_planner(PlannerConfig{});
    CHECK(sample_candidates(p, s, 8, a) == sample_candidates(p, s, 8, b));
  }

  TEST_CASE("candidates: peaked policy always includes its argmax") {
    const PlannerState s = task_state(TaskId::toy, 3);
    Rng init(3);
    PlannerParams p = make_planner(PlannerConfig{}, &init);
    // Scale the output layer until one action carries almost all of the mass.
    const std::string out = "scorer.l" + std::to_string(p.spec.layers() - 1) + ".w";
    while (action_distribution(policy_logits(p, s)).maxCoeff() <= 0.99)
      for (double& v : p.store.view(out)) v *= 2.0;
    const std::size_t best = argmax_index(policy_logits(p, s));
    REQUIRE(action_distribution(policy_logits(p, s))[static_cast<Eigen::Index>(best)] > 0.99);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const auto c = sample_candidates(p, s, 4, rng);
      CHECK(std::find(c.begin(), c.end(), s.action_at(best)) != c.end());
    }
  }

  TEST_CASE("group: argmax of scores, ties to the earliest") {
    MassPointBody body;
    const PlannerState s = task_state(TaskId::rope, 4, &body);
    const PlannerParams p = make_planner(PlannerConfig{});
    TablePredictor pred({0.3, 0.7});
    Rng rng(1);
    const PreferenceGroup g = build_preference_group(p, pred, {&s, &body}, 2, rng);
    CHECK(g.positive_index == 1);
    CHECK(g.negatives().size() == 1);
    CHECK(g.scores[0] == doctest::Approx(0.3));
    CHECK(g.scores[1] == doctest::Approx(0.7));
    CHECK(pred.calls() == 1);

    TablePredictor tie({0.5, 0.5, 0.2});
    Rng rng2(1);
    CHECK(build_preference_group(p, tie, {&s, &body}, 3, rng2).positive_index == 0);
    CHECK_THROWS(build_preference_group(p, tie, {&s, &body}, 1, rng2));
  }

  TEST_CASE("group: monotone transforms keep the split") {
    const std::vector<double> raw{0.2, 0.9, 0.4, 0.6};
    std::vector<double> squashed;
    for (double v : raw) squashed.push_back(v * v * v);
    MassPointBody body;
    const PlannerState s = task_state(TaskId::cloth, 5, &body);
    const PlannerParams p = make_planner(PlannerConfig{});
    TablePredictor a(raw), b(squashed);
    Rng r1(3), r2(3);
    const PreferenceGroup ga = build_preference_group(p, a, {&s, &body}, 4, r1);
    const PreferenceGroup gb = build_preference_group(p, b, {&s, &body}, 4, r2);
    CHECK(ga.positive() == gb.positive());
    CHECK(ga.negatives() == gb.negatives());
  }

  TEST_CASE("oracle groups: positive has the best true outcome") {
    const SimConfig sim;
    SimulatorPredictor oracle(sim, 24);
    Rng init(8);
    const PlannerParams p = make_planner(PlannerConfig{}, &init);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      MassPointBody body;
      const PlannerState s = task_state(static_cast<TaskId>(seed % 3), seed, &body);
      Rng rng(seed);
      const PreferenceGroup g = build_preference_group(p, oracle, {&s, &body}, 8, rng);
      // Independent rerun of every candidate through the simulator.
      std::vector<double> truth;
      for (const KeypointAction& a : g.candidates) {
        const PrimitiveResult r = execute_primitive(body, s.grasp_of(a), s.target_of(a), sim);
        truth.push_back(soft_iou(rasterize(r.final_body, 24), s.goal));
      }
      for (double t : truth) CHECK(truth[g.positive_index] >= t);
    }
  }

  TEST_CASE("file round trip") {
    Rng rng(12);
    std::vector<PreferenceGroup> groups;
    for (int n = 0; n < 100; ++n) {
      PreferenceGroup g;
      g.ref = {"dataset_rope.jsonl", static_cast<std::size_t>(n)};
      std::vector<std::size_t> flat(64);
      std::iota(flat.begin(), flat.end(), 0);
      std::shuffle(flat.begin(), flat.end(), rng.engine());
      const int k = rng.uniform_int(2, 8);
      for (int c = 0; c < k; ++c) {
        g.candidates.push_back({flat[static_cast<std::size_t>(c)] / 8, flat[static_cast<std::size_t>(c)] % 8});
        g.scores.push_back(rng.uniform());
      }
      g.positive_index = static_cast<std::size_t>(std::max_element(g.scores.begin(), g.scores.end()) - g.scores.begin());
      g.wm_seed = rng.next_u64();
      groups.push_back(g);
    }
    const auto path = temp_path("prefs.jsonl");
    write_preferences(groups, path);
    const auto back = read_preferences(path, 8);
    REQUIRE(back.size() == groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) CHECK(same_groups(back[k], groups[k]));
  }

  TEST_CASE("file errors carry line numbers") {
    const auto path = temp_path("prefs_bad.jsonl");
    write_text(path, "");
    CHECK(read_preferences(path, 8).empty());

    const std::string good =
        R"({"state_ref":{"dataset":"d","record":0},"candidates":[{"src":0,"tgt":1,"score":0.2},{"src":2,"tgt":3,"score":0.9}],"positive_index":1,"wm_seed":5})";
    auto expect_line = [&](const std::string& body, std::size_t line) {
      write_text(path, body);
      try {
        read_preferences(path, 8);
        FAIL("expected FormatError");
      } catch (const FormatError& e) {
        CHECK(e.line() == line);
      }
    };
    expect_line(good + "\n" + good.substr(0, 40) + "\n", 2);
    expect_line(good + "\n" + good + "\n" + R"({"state_ref":{"dataset":"d","record":0},"positive_index":0,"wm_seed":1})" + "\n", 3);
    std::string out_of_range = good;
    out_of_range.replace(out_of_range.find("\"tgt\":3"), 7, "\"tgt\":9");
    expect_line(out_of_range + "\n", 1);
    std::string wrong_positive = good;
    wrong_positive.replace(wrong_positive.find("\"positive_index\":1"), 18, "\"positive_index\":0");
    expect_line(wrong_positive + "\n", 1);
  }
}
