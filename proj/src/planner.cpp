#include "dreamplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dreamplan {

PlannerState make_planner_state(const MassPointBody& body, const MassPointBody& goal, const PerceptionConfig& cfg) {
  PlannerState s;
  s.obs = rasterize(body, cfg.grid);
  s.goal = rasterize(goal, cfg.grid);
  s.kp_cur = extract_keypoints(body, static_cast<std::size_t>(cfg.keypoints));
  s.kp_goal = extract_keypoints(goal, static_cast<std::size_t>(cfg.keypoints));
  return s;
}

namespace {

struct WindowStats {
  double mean = 0.0;
  double max = 0.0;
};

WindowStats window_stats(const Frame& f, Vec2 p) {
  const auto [row, col] = cell_of(p, f.size);
  WindowStats w;
  int count = 0;
  for (int r = row - 1; r <= row + 1; ++r)
    for (int c = col - 1; c <= col + 1; ++c) {
      if (r < 0 || c < 0 || r >= f.size || c >= f.size) continue;
      w.mean += f.at(r, c);
      w.max = std::max(w.max, f.at(r, c));
      ++count;
    }
  w.mean /= count;
  return w;
}

void check_action(const PlannerState& state, KeypointAction a) {
  if (a.src >= state.kp_cur.size() || a.tgt >= state.kp_goal.size())
    throw InvalidArgument("keypoint action index out of range");
}

void fill_features(const PlannerState& state, KeypointAction a, double iou, double* out) {
  const Vec2 s = state.kp_cur.coords[a.src];
  const Vec2 t = state.kp_goal.coords[a.tgt];
  const Vec2 d = t - s;
  const WindowStats os = window_stats(state.obs, s);
  const WindowStats gs = window_stats(state.goal, s);
  const WindowStats ot = window_stats(state.obs, t);
  const WindowStats gt = window_stats(state.goal, t);
  const double v[kFeatureCount] = {s.x,     s.y,    t.x,     t.y,    d.x,     d.y,    norm(d), os.mean,
                                   os.max,  gs.mean, gs.max, ot.mean, ot.max, gt.mean, gt.max, iou};
  std::copy(std::begin(v), std::end(v), out);
}

}  // namespace

Vector featurize(const PlannerState& state, KeypointAction action) {
  check_action(state, action);
  Vector f(kFeatureCount);
  fill_features(state, action, soft_iou(state.obs, state.goal), f.data());
  return f;
}

Matrix featurize_all(const PlannerState& state) {
  const std::size_t n = state.action_count();
  Matrix m(kFeatureCount, static_cast<Eigen::Index>(n));
  const double iou = soft_iou(state.obs, state.goal);
  for (std::size_t k = 0; k < n; ++k) fill_features(state, state.action_at(k), iou, m.col(static_cast<Eigen::Index>(k)).data());
  return m;
}

PlannerParams make_planner(const PlannerConfig& cfg, Rng* rng) {
  PlannerParams p;
  p.spec.widths.push_back(kFeatureCount);
  for (int h : cfg.hidden) p.spec.widths.push_back(static_cast<std::size_t>(h));
  p.spec.widths.push_back(1);
  add_mlp_params(p.store, "scorer", p.spec);
  if (rng) init_mlp(p.store.values(), p.spec, *rng);
  return p;
}

ScorerPass scorer_forward(const PlannerParams& params, const Matrix& features) {
  ScorerPass pass;
  pass.cache = mlp_forward(params.spec, params.scorer(), features);
  pass.logits = pass.cache.output().row(0).transpose();
  return pass;
}

void scorer_backward(const PlannerParams& params, const ScorerPass& pass, const Vector& logit_grad,
                     std::span<double> grad) {
  mlp_backward(params.spec, params.scorer(), pass.cache, logit_grad.transpose(), grad, false);
}

Vector policy_logits(const PlannerParams& params, const PlannerState& state) {
  Vector logits = scorer_forward(params, featurize_all(state)).logits;
  if (!logits.allFinite()) throw NumericalError("policy produced non-finite logits");
  return logits;
}

Vector action_distribution(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  const Vector scaled = logits / temperature;
  const double top = scaled.maxCoeff();
  Vector p = (scaled.array() - top).exp().matrix();
  return p / p.sum();
}

Vector log_softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return (logits.array() - lse).matrix();
}

std::size_t argmax_index(const Vector& values) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < values.size(); ++k)
    if (values[k] > values[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(k);
  return best;
}

std::size_t sample_index(const Vector& probabilities, Rng& rng) {
  const double u = rng.uniform() * probabilities.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probabilities.size(); ++k) {
    acc += probabilities[k];
    if (u < acc) return static_cast<std::size_t>(k);
  }
  // Rounding left u at the very top: take the last action with positive mass.
  for (Eigen::Index k = probabilities.size(); k-- > 0;)
    if (probabilities[k] > 0.0) return static_cast<std::size_t>(k);
  return 0;
}

KeypointAction sample_action(const PlannerState& state, const Vector& probabilities, Rng& rng) {
  return state.action_at(sample_index(probabilities, rng));
}

double log_prob(const PlannerParams& params, const PlannerState& state, KeypointAction action) {
  check_action(state, action);
  return log_softmax(policy_logits(params, state))[static_cast<Eigen::Index>(state.flat(action))];
}

std::vector<double> log_prob_grad(const PlannerParams& params, const PlannerState& state, KeypointAction action) {
  check_action(state, action);
  const ScorerPass pass = scorer_forward(params, featurize_all(state));
  Vector dlogits = -action_distribution(pass.logits, 1.0);
  dlogits[static_cast<Eigen::Index>(state.flat(action))] += 1.0;
  std::vector<double> grad(params.store.size(), 0.0);
  scorer_backward(params, pass, dlogits, grad);
  return grad;
}

KeypointAction heuristic_action(const PlannerState& state) {
  const auto& cur = state.kp_cur.coords;
  const auto& goal = state.kp_goal.coords;
  if (cur.empty() || goal.empty()) throw InvalidArgument("heuristic needs keypoints");
  KeypointAction a;
  double most = -1.0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const Vec2& g : goal) nearest = std::min(nearest, squared_distance(cur[i], g));
    if (nearest > most) {
      most = nearest;
      a.src = i;
    }
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < goal.size(); ++j) {
    const double d = squared_distance(goal[j], cur[a.src]);
    if (d < closest) {
      closest = d;
      a.tgt = j;
    }
  }
  return a;
}

double argmax_agreement(const PlannerParams& params, std::span<const PlannerState> states) {
  if (states.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PlannerState& s : states)
    if (argmax_index(policy_logits(params, s)) == s.flat(heuristic_action(s))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(states.size());
}

PretrainReport pretrain_zero_shot(PlannerParams& params, std::span<const PlannerState> train,
                                  std::span<const PlannerState> holdout, const PlannerConfig& cfg, Rng& rng) {
  if (train.empty()) throw InvalidArgument("pretraining needs at least one state");
  std::vector<Matrix> features;
  std::vector<std::size_t> labels;
  features.reserve(train.size());
  for (const PlannerState& s : train) {
    features.push_back(featurize_all(s));
    labels.push_back(s.flat(heuristic_action(s)));
  }
  const auto actions = features.front().cols();

  PretrainReport report;
  AdamState adam(params.store.size());
  const AdamOptions opt{.lr = cfg.pretrain_lr};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(params.store.size());
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.pretrain_batch));

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const auto count = static_cast<Eigen::Index>(stop - start);
      Matrix stacked(static_cast<Eigen::Index>(kFeatureCount), count * actions);
      for (Eigen::Index b = 0; b < count; ++b) stacked.middleCols(b * actions, actions) = features[order[start + b]];
      const ScorerPass pass = scorer_forward(params, stacked);
      Vector dlogits(pass.logits.size());
      for (Eigen::Index b = 0; b < count; ++b) {
        const Vector logits = pass.logits.segment(b * actions, actions);
        const Vector logp = log_softmax(logits);
        const auto label = static_cast<Eigen::Index>(labels[order[start + b]]);
        loss_sum -= logp[label];
        Vector g = logp.array().exp().matrix();
        g[label] -= 1.0;
        dlogits.segment(b * actions, actions) = g / static_cast<double>(count);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      scorer_backward(params, pass, dlogits, grad);
      adam_step(params.store.values(), grad, adam, opt);
    }
    const double mean = loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(mean)) throw NumericalError("pretraining loss diverged");
    report.epoch_loss.push_back(mean);
  }
  report.holdout_agreement = argmax_agreement(params, holdout);
  return report;
}

void save_planner(const PlannerParams& params, const std::string& config_hash, const std::filesystem::path& path) {
  Checkpoint ckpt{"planner", params.store, config_hash, nlohmann::json::object()};
  ckpt.meta["widths"] = params.spec.widths;
  save_checkpoint(ckpt, path);
}

PlannerParams load_planner(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "planner")
    throw CheckpointError(CheckpointError::Reason::inconsistent_header, path.string() + " holds a '" + ckpt.kind +
                                                                            "' checkpoint, not a planner");
  PlannerParams p;
  p.spec.widths = ckpt.meta.at("widths").get<std::vector<std::size_t>>();
  ParamStore expected;
  add_mlp_params(expected, "scorer", p.spec);
  if (expected.layout() != ckpt.store.layout())
    throw CheckpointError(CheckpointError::Reason::inconsistent_header, path.string() + ": layout does not match widths");
  p.store = std::move(ckpt.store);
  return p;
}

}  // namespace dreamplan
