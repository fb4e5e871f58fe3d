#include "dreamplan/gradcheck.hpp"

#include <algorithm>
#include <numeric>

#include "dreamplan/orpo.hpp"
#include "dreamplan/planner.hpp"
#include "dreamplan/sim.hpp"
#include "dreamplan/world_model.hpp"

namespace dreamplan {

double max_fd_error(std::span<double> params, std::span<const double> analytic, std::span<const std::size_t> coords,
                    const std::function<double()>& loss, double h) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

namespace {

std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  std::iota(c.begin(), c.end(), 0);
  return c;
}

// A bounded random subset keeps the big world-model check fast.
std::vector<std::size_t> some_coords(std::size_t n, std::size_t count, Rng& rng) {
  if (n <= count) return all_coords(n);
  std::vector<std::size_t> c;
  for (std::size_t k = 0; k < count; ++k) c.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1)));
  return c;
}

PlannerState random_state(Rng& rng) {
  const auto task = static_cast<TaskId>(rng.uniform_int(0, 2));
  const TaskInstance ti = init_task(TaskSpec::from_config(task, SimConfig{}), rng.next_u64());
  return make_planner_state(ti.body, ti.goal, PerceptionConfig{});
}

PlannerParams random_planner(Rng& rng) {
  PlannerParams p = make_planner(PlannerConfig{}, &rng);
  // Glorot leaves the biases at zero; shake everything so no term is trivially flat.
  for (double& v : p.store.values()) v += 0.1 * rng.normal();
  return p;
}

}  // namespace

GradcheckSuite gradcheck_mlp(int instances, std::uint64_t seed) {
  GradcheckSuite suite{"mlp", 0, 0, 0.0};
  Rng rng(seed);
  for (int n = 0; n < instances; ++n) {
    MlpSpec spec;
    const int layers = rng.uniform_int(2, 4);
    for (int k = 0; k <= layers; ++k) spec.widths.push_back(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    std::vector<double> params(spec.param_count());
    for (double& v : params) v = rng.normal();
    Matrix input(static_cast<Eigen::Index>(spec.input()), rng.uniform_int(1, 4));
    for (Eigen::Index k = 0; k < input.size(); ++k) input.data()[k] = rng.normal();
    Matrix weights(static_cast<Eigen::Index>(spec.output()), input.cols());
    for (Eigen::Index k = 0; k < weights.size(); ++k) weights.data()[k] = rng.normal();

    auto loss = [&] { return mlp_forward(spec, params, input).output().cwiseProduct(weights).sum(); };
    std::vector<double> grad(params.size(), 0.0);
    const MlpCache cache = mlp_forward(spec, params, input);
    mlp_backward(spec, params, cache, weights, grad, false);
    const auto coords = all_coords(params.size());
    suite.max_rel_error = std::max(suite.max_rel_error, max_fd_error(params, grad, coords, loss));
    suite.coordinates += coords.size();
    ++suite.instances;
  }
  return suite;
}

GradcheckSuite gradcheck_log_prob(int instances, std::uint64_t seed) {
  GradcheckSuite suite{"planner_log_prob", 0, 0, 0.0};
  Rng rng(seed);
  for (int n = 0; n < instances; ++n) {
    PlannerParams params = random_planner(rng);
    const PlannerState state = random_state(rng);
    const KeypointAction action = state.action_at(static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(state.action_count()) - 1)));
    const std::vector<double> grad = log_prob_grad(params, state, action);
    const auto coords = all_coords(grad.size());
    auto loss = [&] { return log_prob(params, state, action); };
    suite.max_rel_error = std::max(suite.max_rel_error, max_fd_error(params.store.values(), grad, coords, loss));
    suite.coordinates += coords.size();
    ++suite.instances;
  }
  return suite;
}

GradcheckSuite gradcheck_diffusion(int instances, std::uint64_t seed) {
  GradcheckSuite suite{"diffusion_loss", 0, 0, 0.0};
  Rng rng(seed);
  for (int n = 0; n < instances; ++n) {
    WorldModelConfig wcfg;
    wcfg.diffusion_steps = 10;
    wcfg.frames = 2;
    wcfg.hidden = 6;
    wcfg.time_dim = 4;
    PerceptionConfig pcfg;
    pcfg.grid = 3;
    pcfg.cue_frames = 2;
    WorldModelParams wm = make_world_model(wcfg, pcfg, rng);
    init_mlp(wm.control.values(), wm.control_spec, rng);  // a zero output layer would hide half the chain
    for (Eigen::Index k = 0; k < wm.data_mean.size(); ++k) wm.data_mean[k] = rng.uniform();
    wm.data_var = rng.uniform(0.05, 1.0);

    const int batch = rng.uniform_int(1, 3);
    auto random_matrix = [&](std::size_t rows, bool unit) {
      Matrix m(static_cast<Eigen::Index>(rows), batch);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = unit ? rng.uniform() : rng.normal();
      return m;
    };
    const Matrix x0 = random_matrix(wm.stack_size(), true);
    const Matrix cond = random_matrix(wm.frame_cells(), true);
    const Matrix cue = random_matrix(wm.frame_cells() * wm.cue_frames, true);
    const Matrix noise = random_matrix(wm.stack_size(), false);
    std::vector<int> ts;
    for (int b = 0; b < batch; ++b) ts.push_back(rng.uniform_int(1, wm.schedule.steps));

    for (Branch branch : {Branch::base, Branch::control}) {
      ParamStore& store = branch == Branch::base ? wm.base : wm.control;
      const bool with_cue = branch == Branch::control || rng.uniform() < 0.5;
      std::vector<double> grad(store.size(), 0.0);
      denoise_loss(wm, x0, cond, cue, ts, noise, branch, with_cue, grad);
      auto loss = [&] { return denoise_loss(wm, x0, cond, cue, ts, noise, branch, with_cue, {}); };
      const auto coords = some_coords(store.size(), 200, rng);
      suite.max_rel_error = std::max(suite.max_rel_error, max_fd_error(store.values(), grad, coords, loss));
      suite.coordinates += coords.size();
    }
    ++suite.instances;
  }
  return suite;
}

GradcheckSuite gradcheck_orpo(int instances, std::uint64_t seed) {
  GradcheckSuite suite{"orpo_loss", 0, 0, 0.0};
  Rng rng(seed);
  for (int n = 0; n < instances; ++n) {
    PlannerParams params = random_planner(rng);
    PreferenceGroup group;
    group.state = random_state(rng);
    const auto k = static_cast<std::size_t>(rng.uniform_int(2, 8));
    group.candidates = sample_candidates(make_planner(PlannerConfig{}), group.state, k, rng);
    for (std::size_t c = 0; c < k; ++c) group.scores.push_back(rng.uniform());
    group.positive_index =
        static_cast<std::size_t>(std::max_element(group.scores.begin(), group.scores.end()) - group.scores.begin());
    const double nll = rng.uniform() < 0.5 ? 0.0 : rng.uniform();

    const std::vector<double> grad = orpo_grad(params, group, nll);
    const auto coords = all_coords(grad.size());
    auto loss = [&] { return orpo_loss(params, group, nll); };
    suite.max_rel_error = std::max(suite.max_rel_error, max_fd_error(params.store.values(), grad, coords, loss));
    suite.coordinates += coords.size();
    ++suite.instances;
  }
  return suite;
}

std::vector<GradcheckSuite> run_gradchecks(std::uint64_t seed, int instances) {
  return {gradcheck_mlp(instances, derive_seed(seed, 11, 0)), gradcheck_log_prob(instances, derive_seed(seed, 11, 1)),
          gradcheck_diffusion(instances, derive_seed(seed, 11, 2)), gradcheck_orpo(instances, derive_seed(seed, 11, 3))};
}

}  // namespace dreamplan
