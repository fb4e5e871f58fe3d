#include "dreamplan/preference.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

namespace dreamplan {

std::vector<KeypointAction> PreferenceGroup::negatives() const {
  std::vector<KeypointAction> out;
  for (std::size_t k = 0; k < candidates.size(); ++k)
    if (k != positive_index) out.push_back(candidates[k]);
  return out;
}

void PreferenceGroup::validate() const {
  if (candidates.size() < 2) throw InvalidArgument("preference group needs at least one negative");
  if (scores.size() != candidates.size()) throw InvalidArgument("one score per candidate required");
  if (positive_index >= candidates.size()) throw InvalidArgument("positive index out of range");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const KeypointAction& a : candidates)
    if (!seen.insert({a.src, a.tgt}).second) throw InvalidArgument("duplicate candidate in preference group");
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k] > scores[positive_index]) throw InvalidArgument("a negative outscores the positive");
    if (k < positive_index && scores[k] == scores[positive_index])
      throw InvalidArgument("tied positive must be the earliest candidate");
  }
}

bool same_groups(const PreferenceGroup& a, const PreferenceGroup& b) {
  return a.ref == b.ref && a.candidates == b.candidates && a.scores == b.scores &&
         a.positive_index == b.positive_index && a.wm_seed == b.wm_seed;
}

std::vector<KeypointAction> sample_candidates(const PlannerParams& policy, const PlannerState& state, std::size_t k,
                                              Rng& rng) {
  const std::size_t n = state.action_count();
  if (k == 0 || k > n) throw InvalidArgument("candidate count must be in [1, action count]");
  const Vector probs = action_distribution(policy_logits(policy, state), 1.0);

  std::vector<char> used(n, 0);
  std::vector<KeypointAction> out;
  const std::size_t cap = 50 * k;
  for (std::size_t draw = 0; draw < cap && out.size() < k; ++draw) {
    const std::size_t idx = sample_index(probs, rng);
    if (used[idx]) continue;
    used[idx] = 1;
    out.push_back(state.action_at(idx));
  }
  if (out.size() < k) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[static_cast<Eigen::Index>(a)] >
                                                                probs[static_cast<Eigen::Index>(b)]; });
    for (std::size_t idx : order) {
      if (out.size() == k) break;
      if (!used[idx]) {
        used[idx] = 1;
        out.push_back(state.action_at(idx));
      }
    }
  }
  return out;
}

std::vector<Frame> OutcomePredictor::predict(const Scene& scene, std::span<const GripperMove> moves,
                                             std::uint64_t seed) {
  if (!scene.state) throw InvalidArgument("predictor needs a planner state");
  ++calls_;
  return do_predict(scene, moves, seed);
}

std::vector<Frame> WorldModelPredictor::do_predict(const Scene& scene, std::span<const GripperMove> moves,
                                                   std::uint64_t seed) {
  std::vector<Frame> out;
  for (RolloutPrediction& p : sample_rollouts(wm_, scene.state->obs, moves, seed, ddim_steps_))
    out.push_back(std::move(p.final));
  return out;
}

std::vector<Frame> SimulatorPredictor::do_predict(const Scene& scene, std::span<const GripperMove> moves,
                                                  std::uint64_t) {
  if (!scene.body) throw InvalidArgument("simulator predictor needs the body");
  std::vector<Frame> out;
  for (const GripperMove& m : moves) {
    const PrimitiveResult r = execute_primitive(*scene.body, m.grasp, m.target, sim_);
    if (r.status == PrimitiveStatus::unstable) throw NumericalError("oracle rollout went unstable");
    out.push_back(rasterize(r.final_body, grid_));
  }
  return out;
}

PreferenceGroup build_preference_group(const PlannerParams& policy, OutcomePredictor& predictor, const Scene& scene,
                                       std::size_t k, Rng& rng) {
  if (k < 2) throw InvalidArgument("Best-of-K needs K >= 2");
  const PlannerState& state = *scene.state;
  PreferenceGroup g;
  g.wm_seed = rng.next_u64();
  g.candidates = sample_candidates(policy, state, k, rng);
  std::vector<GripperMove> moves;
  for (const KeypointAction& a : g.candidates) moves.push_back({state.grasp_of(a), state.target_of(a)});
  const std::vector<Frame> finals = predictor.predict(scene, moves, g.wm_seed);
  for (const Frame& f : finals) g.scores.push_back(soft_iou(f, state.goal));
  g.positive_index = static_cast<std::size_t>(std::max_element(g.scores.begin(), g.scores.end()) - g.scores.begin());
  g.state = state;
  return g;
}

void write_preferences(std::span<const PreferenceGroup> groups, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const PreferenceGroup& g : groups) {
    nlohmann::json cands = nlohmann::json::array();
    for (std::size_t k = 0; k < g.candidates.size(); ++k)
      cands.push_back({{"src", g.candidates[k].src}, {"tgt", g.candidates[k].tgt}, {"score", g.scores.at(k)}});
    const nlohmann::json line = {{"state_ref", {{"dataset", g.ref.dataset}, {"record", g.ref.record}}},
                                 {"candidates", cands},
                                 {"positive_index", g.positive_index},
                                 {"wm_seed", g.wm_seed}};
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PreferenceGroup> read_preferences(const std::filesystem::path& path, std::size_t keypoints) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<PreferenceGroup> groups;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    PreferenceGroup g;
    try {
      const nlohmann::json j = nlohmann::json::parse(text);
      const auto& ref = j.at("state_ref");
      g.ref.dataset = ref.at("dataset").get<std::string>();
      g.ref.record = ref.at("record").get<std::size_t>();
      for (const auto& c : j.at("candidates")) {
        const KeypointAction a{c.at("src").get<std::size_t>(), c.at("tgt").get<std::size_t>()};
        if (a.src >= keypoints || a.tgt >= keypoints) throw FormatError(line_no, "candidate index out of range");
        g.candidates.push_back(a);
        g.scores.push_back(c.at("score").get<double>());
      }
      g.positive_index = j.at("positive_index").get<std::size_t>();
      g.wm_seed = j.at("wm_seed").get<std::uint64_t>();
      g.validate();
    } catch (const FormatError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(line_no, e.what());
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace dreamplan
