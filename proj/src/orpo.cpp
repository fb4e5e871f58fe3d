#include "dreamplan/orpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace dreamplan {

double neg_log_sigmoid(double d) {
  return d >= 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

namespace {

// Loss and d(loss)/d(logits) for one group given its logits.
double group_terms(const PreferenceGroup& group, const Vector& logits, double nll_weight, Vector* dlogits) {
  group.validate();
  const PlannerState& s = group.state;
  if (static_cast<std::size_t>(logits.size()) != s.action_count())
    throw ShapeError("preference group state does not match the policy");
  const Vector logp = log_softmax(logits);
  const auto pos = static_cast<Eigen::Index>(s.flat(group.positive()));
  const double lp_pos = logp[pos];
  const auto negs = group.negatives();
  const double inv = 1.0 / static_cast<double>(negs.size());

  double loss = nll_weight * -lp_pos;
  Vector coef = Vector::Zero(logits.size());  // d(loss)/d(logp)
  coef[pos] -= nll_weight;
  for (const KeypointAction& a : negs) {
    const auto j = static_cast<Eigen::Index>(s.flat(a));
    const double d = lp_pos - logp[j];
    loss += inv * neg_log_sigmoid(d);
    const double g = -inv / (1.0 + std::exp(d));  // d/dd of -log sigmoid(d), scaled
    coef[pos] += g;
    coef[j] -= g;
  }
  if (!std::isfinite(loss)) throw NumericalError("ORPO loss is not finite");
  if (dlogits) {
    const Vector p = logp.array().exp().matrix();
    *dlogits = coef - coef.sum() * p;
  }
  return loss;
}

}  // namespace

double orpo_loss(const PlannerParams& params, const PreferenceGroup& group, double nll_weight) {
  return group_terms(group, policy_logits(params, group.state), nll_weight, nullptr);
}

OrpoLossGrad orpo_loss_grad(const PlannerParams& params, const PreferenceGroup& group, double nll_weight) {
  const ScorerPass pass = scorer_forward(params, featurize_all(group.state));
  Vector dlogits;
  OrpoLossGrad out;
  out.loss = group_terms(group, pass.logits, nll_weight, &dlogits);
  out.grad.assign(params.store.size(), 0.0);
  scorer_backward(params, pass, dlogits, out.grad);
  return out;
}

std::vector<double> orpo_grad(const PlannerParams& params, const PreferenceGroup& group, double nll_weight) {
  return orpo_loss_grad(params, group, nll_weight).grad;
}

double preference_margin(const PlannerParams& params, const PreferenceGroup& group) {
  const Vector logp = log_softmax(policy_logits(params, group.state));
  const PlannerState& s = group.state;
  double best_neg = -std::numeric_limits<double>::infinity();
  for (const KeypointAction& a : group.negatives())
    best_neg = std::max(best_neg, logp[static_cast<Eigen::Index>(s.flat(a))]);
  return logp[static_cast<Eigen::Index>(s.flat(group.positive()))] - best_neg;
}

double preference_accuracy(const PlannerParams& params, std::span<const PreferenceGroup> groups) {
  if (groups.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PreferenceGroup& g : groups)
    if (preference_margin(params, g) > 0.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(groups.size());
}

OrpoReport train_orpo(PlannerParams& params, std::span<const PreferenceGroup> groups, const OrpoConfig& cfg, Rng& rng,
                      const std::function<void(const OrpoEpoch&)>& on_epoch) {
  if (groups.empty()) throw InvalidArgument("no preference groups to train on");
  std::vector<Matrix> features;
  features.reserve(groups.size());
  for (const PreferenceGroup& g : groups) {
    g.validate();
    features.push_back(featurize_all(g.state));
  }

  AdamState adam(params.store.size());
  const AdamOptions opt{.lr = cfg.lr};
  std::vector<double> grad(params.store.size());
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch));
  std::vector<double> last_good(params.store.values().begin(), params.store.values().end());

  OrpoReport report;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        Eigen::Index cols = 0;
        for (std::size_t b = start; b < stop; ++b) cols += features[order[b]].cols();
        Matrix stacked(static_cast<Eigen::Index>(kFeatureCount), cols);
        Eigen::Index at = 0;
        for (std::size_t b = start; b < stop; ++b) {
          const Matrix& f = features[order[b]];
          stacked.middleCols(at, f.cols()) = f;
          at += f.cols();
        }
        const ScorerPass pass = scorer_forward(params, stacked);
        Vector dlogits(pass.logits.size());
        const double scale = 1.0 / static_cast<double>(stop - start);
        at = 0;
        for (std::size_t b = start; b < stop; ++b) {
          const Eigen::Index n = features[order[b]].cols();
          Vector d;
          total += group_terms(groups[order[b]], pass.logits.segment(at, n), cfg.nll_weight, &d);
          dlogits.segment(at, n) = scale * d;
          at += n;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        scorer_backward(params, pass, dlogits, grad);
        adam_step(params.store.values(), grad, adam, opt);
      }
    } catch (const NumericalError& e) {
      std::copy(last_good.begin(), last_good.end(), params.store.values().begin());
      throw TrainingDiverged("ORPO diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const OrpoEpoch row{epoch, total / static_cast<double>(groups.size()), preference_accuracy(params, groups)};
    report.epochs.push_back(row);
    std::copy(params.store.values().begin(), params.store.values().end(), last_good.begin());
    if (on_epoch) on_epoch(row);
  }
  return report;
}

void write_orpo_log(const OrpoReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,pref_accuracy\n";
  char buf[96];
  for (const OrpoEpoch& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.mean_loss, e.pref_accuracy);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dreamplan
