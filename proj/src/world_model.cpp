#include "dreamplan/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dreamplan {

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("diffusion needs at least one step");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw InvalidArgument("betas must satisfy 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.betas.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alphas.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps > 1 ? static_cast<double>(t - 1) / (steps - 1) : 0.0;
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[t] = 1.0 - s.betas[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alphas[t];
  }
  return s;
}

SceneMode parse_scene_mode(std::string_view name) {
  if (name == "object_only" || name == "object-only") return SceneMode::object_only;
  if (name == "full_scene" || name == "full-scene") return SceneMode::full_scene;
  throw InvalidArgument("unknown scene mode '" + std::string(name) + "'");
}

std::string_view scene_mode_name(SceneMode mode) {
  return mode == SceneMode::object_only ? "object_only" : "full_scene";
}

namespace {

MlpSpec base_spec_for(const WorldModelParams& wm) {
  const std::size_t in = wm.stack_size() + wm.frame_cells() + static_cast<std::size_t>(wm.time_dim);
  const auto h = static_cast<std::size_t>(wm.hidden);
  return MlpSpec{{in, h, h, wm.stack_size()}};
}

MlpSpec control_spec_for(const WorldModelParams& wm) {
  const std::size_t in = wm.stack_size() + wm.frame_cells() * static_cast<std::size_t>(wm.cue_frames) +
                         static_cast<std::size_t>(wm.time_dim);
  const auto h = static_cast<std::size_t>(wm.hidden);
  return MlpSpec{{in, h, h, wm.stack_size()}};
}

void build_layouts(WorldModelParams& wm) {
  wm.base_spec = base_spec_for(wm);
  wm.control_spec = control_spec_for(wm);
  wm.base = ParamStore{};
  wm.control = ParamStore{};
  add_mlp_params(wm.base, "base", wm.base_spec);
  add_mlp_params(wm.control, "control", wm.control_spec);
}

Matrix time_rows(const WorldModelParams& wm, std::span<const int> timesteps) {
  Matrix m(wm.time_dim, static_cast<Eigen::Index>(timesteps.size()));
  for (std::size_t k = 0; k < timesteps.size(); ++k)
    m.col(static_cast<Eigen::Index>(k)) = time_embed(timesteps[k], wm.schedule.steps, wm.time_dim);
  return m;
}

// c_t (x_t - sqrt(abar_t) mean), column by column.
Matrix base_skip(const WorldModelParams& wm, const Matrix& x_t, std::span<const int> timesteps) {
  Matrix out(x_t.rows(), x_t.cols());
  for (Eigen::Index c = 0; c < x_t.cols(); ++c) {
    const int t = timesteps[static_cast<std::size_t>(c)];
    const double ab = wm.schedule.alpha_bar[static_cast<std::size_t>(t)];
    out.col(c) = skip_coefficient(wm, t) * (x_t.col(c) - std::sqrt(ab) * wm.data_mean);
  }
  return out;
}

Matrix stack_rows(const Matrix& a, const Matrix& b, const Matrix& c) {
  Matrix out(a.rows() + b.rows() + c.rows(), a.cols());
  out << a, b, c;
  return out;
}

void check_batch(const WorldModelParams& wm, const Matrix& x, const Matrix& cond, const Matrix* cue,
                 std::size_t timesteps) {
  const auto cols = x.cols();
  if (static_cast<std::size_t>(x.rows()) != wm.stack_size()) throw ShapeError("world model: bad frame stack size");
  if (static_cast<std::size_t>(cond.rows()) != wm.frame_cells() || cond.cols() != cols)
    throw ShapeError("world model: bad condition frame shape");
  if (cue && (static_cast<std::size_t>(cue->rows()) != wm.frame_cells() * wm.cue_frames || cue->cols() != cols))
    throw ShapeError("world model: bad cue shape");
  if (timesteps != static_cast<std::size_t>(cols)) throw ShapeError("world model: one timestep per column required");
}

}  // namespace

WorldModelParams make_world_model(const WorldModelConfig& cfg, const PerceptionConfig& perception, Rng& rng) {
  WorldModelParams wm;
  wm.grid = perception.grid;
  wm.frames = cfg.frames;
  wm.cue_frames = perception.cue_frames;
  wm.time_dim = cfg.time_dim;
  wm.hidden = cfg.hidden;
  wm.mode = parse_scene_mode(cfg.mode);
  wm.schedule = DiffusionSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
  build_layouts(wm);
  wm.data_mean = Vector::Zero(static_cast<Eigen::Index>(wm.stack_size()));
  init_mlp(wm.base.values(), wm.base_spec, rng);
  init_mlp(wm.control.values(), wm.control_spec, rng, /*zero_output_layer=*/true);
  return wm;
}

double skip_coefficient(const WorldModelParams& wm, int t) {
  const double ab = wm.schedule.alpha_bar.at(static_cast<std::size_t>(t));
  return std::sqrt(1.0 - ab) / (ab * wm.data_var + 1.0 - ab);
}

Matrix forward_diffuse(const Matrix& x0, int t, const Matrix& noise, const DiffusionSchedule& schedule) {
  if (t < 1 || t > schedule.steps) throw InvalidArgument("diffusion timestep out of range");
  if (x0.rows() != noise.rows() || x0.cols() != noise.cols()) throw ShapeError("forward_diffuse: noise shape mismatch");
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

Vector flatten(std::span<const Frame> frames) {
  if (frames.empty()) return Vector();
  const auto cells = static_cast<Eigen::Index>(frames.front().cells.size());
  Vector v(cells * static_cast<Eigen::Index>(frames.size()));
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (static_cast<Eigen::Index>(frames[f].cells.size()) != cells) throw ShapeError("flatten: mixed frame sizes");
    v.segment(static_cast<Eigen::Index>(f) * cells, cells) = Eigen::Map<const Vector>(frames[f].cells.data(), cells);
  }
  return v;
}

std::vector<Frame> unflatten(const Vector& stack, int grid) {
  const Eigen::Index cells = static_cast<Eigen::Index>(grid) * grid;
  if (stack.size() % cells != 0) throw ShapeError("unflatten: stack is not a whole number of frames");
  std::vector<Frame> out;
  for (Eigen::Index f = 0; f < stack.size() / cells; ++f) {
    Frame fr(grid);
    Eigen::Map<Vector>(fr.cells.data(), cells) = stack.segment(f * cells, cells);
    out.push_back(std::move(fr));
  }
  return out;
}

Frame scene_background(int grid) {
  Frame bg(grid);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) bg.at(r, c) = (r + c) % 2 == 0 ? 0.15 : 0.30;
  return bg;
}

Frame synthesize_scene(const Frame& frame, const Frame* cue, SceneMode mode) {
  if (mode == SceneMode::object_only) return frame;
  constexpr double kArm = 0.6;
  Frame out = scene_background(frame.size);
  for (std::size_t k = 0; k < out.cells.size(); ++k) out.cells[k] = std::min(1.0, out.cells[k] + frame.cells[k]);
  if (cue) {
    if (cue->size != frame.size) throw ShapeError("synthesize_scene: cue size mismatch");
    for (std::size_t k = 0; k < out.cells.size(); ++k)
      if (cue->cells[k] > 0.0) out.cells[k] = kArm;
  }
  return out;
}

std::vector<Frame> synthesize_scene(std::span<const Frame> frames, const ActionCue& cue, SceneMode mode) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    // Frame k of the stack pairs with the cue frame at the same fraction of the motion.
    const std::size_t c = cue.frames.empty()
                              ? 0
                              : std::min(cue.frames.size() - 1, (k + 1) * cue.frames.size() / frames.size() - 1);
    out.push_back(synthesize_scene(frames[k], cue.frames.empty() ? nullptr : &cue.frames[c], mode));
  }
  return out;
}

WmSample make_wm_sample(const WorldModelParams& wm, const Frame& o0, std::span<const Frame> frames, Vec2 grasp,
                        Vec2 target) {
  if (static_cast<int>(frames.size()) != wm.frames) throw ShapeError("make_wm_sample: wrong frame count");
  const ActionCue cue = render_action_cue(grasp, target, wm.cue_frames, wm.grid);
  WmSample s;
  s.x0 = flatten(synthesize_scene(frames, cue, wm.mode));
  s.cond = flatten(std::span<const Frame>(&o0, 1));
  if (wm.mode == SceneMode::full_scene) {
    const Frame scene = synthesize_scene(o0, nullptr, wm.mode);
    s.cond = flatten(std::span<const Frame>(&scene, 1));
  }
  s.cue = flatten(cue.frames);
  return s;
}

Matrix predict_eps(const WorldModelParams& wm, const Matrix& x_t, std::span<const int> timesteps, const Matrix& cond,
                   const Matrix* cue) {
  check_batch(wm, x_t, cond, cue, timesteps.size());
  const Matrix temb = time_rows(wm, timesteps);
  Matrix eps = mlp_forward(wm.base_spec, wm.base.values(), stack_rows(x_t, cond, temb)).output();
  eps += base_skip(wm, x_t, timesteps);
  if (cue) eps += mlp_forward(wm.control_spec, wm.control.values(), stack_rows(x_t, *cue, temb)).output();
  if (!eps.allFinite()) throw NumericalError("world model produced non-finite noise prediction");
  return eps;
}

double denoise_loss(const WorldModelParams& wm, const Matrix& x0, const Matrix& cond, const Matrix& cue,
                    std::span<const int> timesteps, const Matrix& noise, Branch trainable, bool with_cue,
                    std::span<double> grad) {
  check_batch(wm, x0, cond, with_cue ? &cue : nullptr, timesteps.size());
  if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) throw ShapeError("denoise_loss: noise shape mismatch");
  if (trainable == Branch::control && !with_cue) throw InvalidArgument("control branch needs a cue");

  Matrix x_t(x0.rows(), x0.cols());
  for (Eigen::Index c = 0; c < x0.cols(); ++c) {
    const int t = timesteps[static_cast<std::size_t>(c)];
    if (t < 1 || t > wm.schedule.steps) throw InvalidArgument("diffusion timestep out of range");
    const double ab = wm.schedule.alpha_bar[static_cast<std::size_t>(t)];
    x_t.col(c) = std::sqrt(ab) * x0.col(c) + std::sqrt(1.0 - ab) * noise.col(c);
  }
  const Matrix temb = time_rows(wm, timesteps);
  const MlpCache base = mlp_forward(wm.base_spec, wm.base.values(), stack_rows(x_t, cond, temb));
  Matrix eps_hat = base.output() + base_skip(wm, x_t, timesteps);
  std::optional<MlpCache> control;
  if (with_cue) {
    control = mlp_forward(wm.control_spec, wm.control.values(), stack_rows(x_t, cue, temb));
    eps_hat += control->output();
  }
  const Matrix resid = eps_hat - noise;
  const double scale = 1.0 / static_cast<double>(resid.size());
  const double loss = resid.squaredNorm() * scale;
  if (!std::isfinite(loss)) throw NumericalError("denoising loss is not finite");

  if (!grad.empty()) {
    const Matrix dout = (2.0 * scale) * resid;
    if (trainable == Branch::base) {
      if (grad.size() != wm.base.size()) throw ShapeError("denoise_loss: base gradient size mismatch");
      mlp_backward(wm.base_spec, wm.base.values(), base, dout, grad, false);
    } else {
      if (grad.size() != wm.control.size()) throw ShapeError("denoise_loss: control gradient size mismatch");
      mlp_backward(wm.control_spec, wm.control.values(), *control, dout, grad, false);
    }
  }
  return loss;
}

namespace {

struct Batch {
  Matrix x0;
  Matrix cond;
  Matrix cue;
  std::vector<int> timesteps;
  Matrix noise;
};

Batch draw_batch(const WorldModelParams& wm, std::span<const WmSample> data, std::span<const std::size_t> rows,
                 Rng& rng) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Batch b;
  b.x0.resize(static_cast<Eigen::Index>(wm.stack_size()), n);
  b.cond.resize(static_cast<Eigen::Index>(wm.frame_cells()), n);
  b.cue.resize(static_cast<Eigen::Index>(wm.frame_cells() * wm.cue_frames), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const WmSample& s = data[rows[static_cast<std::size_t>(k)]];
    b.x0.col(k) = s.x0;
    b.cond.col(k) = s.cond;
    b.cue.col(k) = s.cue;
  }
  for (Eigen::Index k = 0; k < n; ++k) b.timesteps.push_back(rng.uniform_int(1, wm.schedule.steps));
  b.noise.resize(b.x0.rows(), n);
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index r = 0; r < b.noise.rows(); ++r) b.noise(r, c) = rng.normal();
  return b;
}

TrainLog train_branch(WorldModelParams& wm, std::span<const WmSample> data, const WorldModelConfig& cfg, Rng& rng,
                      Branch branch, int epochs, const EpochCallback& on_epoch) {
  if (data.empty()) throw InvalidArgument("world model training needs data");
  ParamStore& store = branch == Branch::base ? wm.base : wm.control;
  const bool with_cue = branch == Branch::control;
  AdamState adam(store.size());
  const AdamOptions opt{.lr = cfg.lr};
  std::vector<double> grad(store.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch));

  TrainLog log;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const Batch b = draw_batch(wm, data, std::span<const std::size_t>(order).subspan(start, stop - start), rng);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = denoise_loss(wm, b.x0, b.cond, b.cue, b.timesteps, b.noise, branch, with_cue, grad);
      total += loss * static_cast<double>(stop - start);
      adam_step(store.values(), grad, adam, opt);
    }
    const double mean = total / static_cast<double>(data.size());
    log.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  return log;
}

}  // namespace

LossAndGrad diffusion_loss(const WorldModelParams& wm, const WmSample& sample, Branch trainable, Rng& rng) {
  const std::size_t idx = 0;
  const Batch b = draw_batch(wm, std::span<const WmSample>(&sample, 1), std::span<const std::size_t>(&idx, 1), rng);
  LossAndGrad out;
  out.grad.assign(trainable == Branch::base ? wm.base.size() : wm.control.size(), 0.0);
  out.loss = denoise_loss(wm, b.x0, b.cond, b.cue, b.timesteps, b.noise, trainable, trainable == Branch::control,
                          out.grad);
  return out;
}

TrainLog train_base(WorldModelParams& wm, std::span<const WmSample> data, const WorldModelConfig& cfg, Rng& rng,
                    const EpochCallback& on_epoch) {
  if (wm.base_frozen) throw InvalidArgument("base denoiser is frozen");
  if (data.empty()) throw InvalidArgument("world model training needs data");
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(wm.stack_size()));
  for (const WmSample& s : data) mean += s.x0;
  mean /= static_cast<double>(data.size());
  double var = 0.0;
  for (const WmSample& s : data) var += (s.x0 - mean).squaredNorm();
  var /= static_cast<double>(data.size() * wm.stack_size());
  wm.data_mean = mean;
  wm.data_var = std::max(var, 1e-6);
  TrainLog log = train_branch(wm, data, cfg, rng, Branch::base, cfg.base_epochs, on_epoch);
  wm.base_frozen = true;
  return log;
}

TrainLog train_control(WorldModelParams& wm, std::span<const WmSample> data, const WorldModelConfig& cfg, Rng& rng,
                       const EpochCallback& on_epoch) {
  if (!wm.base_frozen) throw InvalidArgument("train the base denoiser before the control branch");
  return train_branch(wm, data, cfg, rng, Branch::control, cfg.control_epochs, on_epoch);
}

double evaluate_denoise_loss(const WorldModelParams& wm, std::span<const WmSample> data, bool with_cue,
                             std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("evaluate_denoise_loss needs data");
  Rng rng(seed);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  double total = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::size_t stop = std::min(rows.size(), start + kChunk);
    const Batch b = draw_batch(wm, data, std::span<const std::size_t>(rows).subspan(start, stop - start), rng);
    total += static_cast<double>(stop - start) *
             denoise_loss(wm, b.x0, b.cond, b.cue, b.timesteps, b.noise, Branch::base, with_cue, {});
  }
  return total / static_cast<double>(data.size());
}

std::vector<int> ddim_timesteps(int total_steps, int ddim_steps) {
  if (ddim_steps < 1 || ddim_steps > total_steps) throw InvalidArgument("ddim steps must be in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < ddim_steps; ++i) {
    const int t = static_cast<int>(std::lround(static_cast<double>(total_steps) * (ddim_steps - i) / ddim_steps));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

std::vector<RolloutPrediction> sample_rollouts(const WorldModelParams& wm, const Frame& o0,
                                               std::span<const GripperMove> moves, std::uint64_t seed,
                                               int ddim_steps) {
  if (o0.size != wm.grid) throw ShapeError("sample_rollouts: observation grid mismatch");
  if (moves.empty()) return {};
  const auto n = static_cast<Eigen::Index>(moves.size());
  const auto dim = static_cast<Eigen::Index>(wm.stack_size());

  Frame cond_frame = synthesize_scene(o0, nullptr, wm.mode);
  const Vector cond_col = Eigen::Map<const Vector>(cond_frame.cells.data(), static_cast<Eigen::Index>(wm.frame_cells()));
  const Matrix cond = cond_col.replicate(1, n);
  Matrix cue(static_cast<Eigen::Index>(wm.frame_cells() * wm.cue_frames), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const GripperMove& m = moves[static_cast<std::size_t>(k)];
    cue.col(k) = flatten(render_action_cue(m.grasp, m.target, wm.cue_frames, wm.grid).frames);
  }

  // Every candidate starts from the same seeded draw.
  Rng rng(seed);
  Vector start(dim);
  for (Eigen::Index r = 0; r < dim; ++r) start[r] = rng.normal();
  Matrix x = start.replicate(1, n);
  const auto& ab = wm.schedule.alpha_bar;

  const std::vector<int> ts = ddim_timesteps(wm.schedule.steps, ddim_steps);
  std::vector<int> batch_t(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    std::fill(batch_t.begin(), batch_t.end(), t);
    const Matrix eps = predict_eps(wm, x, batch_t, cond, &cue);
    const double a_t = ab[static_cast<std::size_t>(t)];
    const double a_prev = ab[static_cast<std::size_t>(prev)];
    const Matrix x0_hat = ((x - std::sqrt(1.0 - a_t) * eps) / std::sqrt(a_t)).cwiseMax(0.0).cwiseMin(1.0);
    x = std::sqrt(a_prev) * x0_hat + std::sqrt(1.0 - a_prev) * eps;
  }
  x = x.cwiseMax(0.0).cwiseMin(1.0);

  std::vector<RolloutPrediction> out;
  out.reserve(moves.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    RolloutPrediction p;
    p.frames = unflatten(x.col(k), wm.grid);
    p.final = p.frames.back();
    p.seed = seed;
    out.push_back(std::move(p));
  }
  return out;
}

RolloutPrediction sample_rollout(const WorldModelParams& wm, const Frame& o0, GripperMove move, std::uint64_t seed,
                                 int ddim_steps) {
  return sample_rollouts(wm, o0, std::span<const GripperMove>(&move, 1), seed, ddim_steps).front();
}

void save_world_model(const WorldModelParams& wm, const std::string& config_hash, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "world_model";
  ckpt.config_hash = config_hash;
  for (const ParamStore* part : {&wm.base, &wm.control})
    for (const ParamEntry& e : part->layout()) {
      ckpt.store.add(e.name, e.shape);
      const auto src = part->view(e.name);
      std::copy(src.begin(), src.end(), ckpt.store.view(e.name).begin());
    }
  ckpt.store.add("stats.mean", {wm.stack_size()});
  std::copy(wm.data_mean.begin(), wm.data_mean.end(), ckpt.store.view("stats.mean").begin());
  ckpt.meta = {{"grid", wm.grid},
               {"frames", wm.frames},
               {"cue_frames", wm.cue_frames},
               {"time_dim", wm.time_dim},
               {"hidden", wm.hidden},
               {"mode", scene_mode_name(wm.mode)},
               {"base_frozen", wm.base_frozen},
               {"data_var", wm.data_var},
               {"schedule",
                {{"steps", wm.schedule.steps},
                 {"beta_start", wm.schedule.beta_start()},
                 {"beta_end", wm.schedule.beta_end()}}}};
  save_checkpoint(ckpt, path);
}

WorldModelParams load_world_model(const std::filesystem::path& path) {
  using R = CheckpointError::Reason;
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "world_model")
    throw CheckpointError(R::inconsistent_header, path.string() + " holds a '" + ckpt.kind + "' checkpoint");
  WorldModelParams wm;
  try {
    const auto& m = ckpt.meta;
    wm.grid = m.at("grid").get<int>();
    wm.frames = m.at("frames").get<int>();
    wm.cue_frames = m.at("cue_frames").get<int>();
    wm.time_dim = m.at("time_dim").get<int>();
    wm.hidden = m.at("hidden").get<int>();
    wm.mode = parse_scene_mode(m.at("mode").get<std::string>());
    wm.base_frozen = m.at("base_frozen").get<bool>();
    wm.data_var = m.at("data_var").get<double>();
    const auto& s = m.at("schedule");
    wm.schedule = DiffusionSchedule::linear(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                            s.at("beta_end").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(R::inconsistent_header, path.string() + ": " + e.what());
  }
  build_layouts(wm);
  for (ParamStore* part : {&wm.base, &wm.control})
    for (const ParamEntry& e : part->layout()) {
      if (!ckpt.store.contains(e.name) || ckpt.store.entry(e.name).shape != e.shape)
        throw CheckpointError(R::inconsistent_header, path.string() + ": missing or misshapen '" + e.name + "'");
      const auto src = ckpt.store.view(e.name);
      std::copy(src.begin(), src.end(), part->view(e.name).begin());
    }
  if (!ckpt.store.contains("stats.mean") || ckpt.store.entry("stats.mean").shape != std::vector{wm.stack_size()})
    throw CheckpointError(R::inconsistent_header, path.string() + ": missing data statistics");
  const auto mean = ckpt.store.view("stats.mean");
  wm.data_mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  if (ckpt.store.size() != wm.base.size() + wm.control.size() + wm.stack_size())
    throw CheckpointError(R::inconsistent_header, path.string() + ": unexpected extra parameters");
  return wm;
}

}  // namespace dreamplan
