#include "dreamplan/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dreamplan/parallel.hpp"

namespace dreamplan {

namespace {

using json = nlohmann::json;

// Seeds for per-task streams never collide across tasks.
std::uint64_t task_index(TaskId task, std::size_t i) {
  return static_cast<std::uint64_t>(task) * 1'000'000'007ULL + i;
}

json frame_json(const Frame& f) { return f.cells; }

Frame frame_from(const json& j, int grid) {
  Frame f(grid);
  auto cells = j.get<std::vector<double>>();
  if (cells.size() != f.cells.size()) throw InvalidArgument("frame has the wrong number of cells");
  f.cells = std::move(cells);
  return f;
}

json keypoints_json(const KeypointSet& k) {
  std::vector<double> flat;
  for (const Vec2& p : k.coords) {
    flat.push_back(p.x);
    flat.push_back(p.y);
  }
  return {{"coords", flat}, {"source_indices", k.source_indices}};
}

KeypointSet keypoints_from(const json& j) {
  KeypointSet k;
  const auto flat = j.at("coords").get<std::vector<double>>();
  if (flat.size() % 2 != 0) throw InvalidArgument("keypoint coords must come in pairs");
  for (std::size_t i = 0; i < flat.size(); i += 2) k.coords.push_back({flat[i], flat[i + 1]});
  k.source_indices = j.at("source_indices").get<std::vector<std::size_t>>();
  if (k.source_indices.size() != k.coords.size()) throw InvalidArgument("keypoint index count mismatch");
  return k;
}

json record_json(const EpisodeRecord& r) {
  json frames = json::array();
  for (const Frame& f : r.frames) frames.push_back(frame_json(f));
  return {{"schema_version", kSchemaVersion},
          {"seed", r.seed},
          {"task", task_name(r.task)},
          {"o0", frame_json(r.o0)},
          {"goal", frame_json(r.goal)},
          {"kp_cur", keypoints_json(r.kp_cur)},
          {"kp_goal", keypoints_json(r.kp_goal)},
          {"action", {{"src", r.action.src}, {"tgt", r.action.tgt}}},
          {"grasp", {r.grasp.x, r.grasp.y}},
          {"target", {r.target.x, r.target.y}},
          {"frames", frames},
          {"final_score", r.final_score}};
}

EpisodeRecord record_from(const json& j, int grid) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) throw InvalidArgument("unsupported schema_version");
  EpisodeRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.task = parse_task(j.at("task").get<std::string>());
  r.o0 = frame_from(j.at("o0"), grid);
  r.goal = frame_from(j.at("goal"), grid);
  r.kp_cur = keypoints_from(j.at("kp_cur"));
  r.kp_goal = keypoints_from(j.at("kp_goal"));
  r.action = {j.at("action").at("src").get<std::size_t>(), j.at("action").at("tgt").get<std::size_t>()};
  const auto g = j.at("grasp").get<std::vector<double>>();
  const auto t = j.at("target").get<std::vector<double>>();
  if (g.size() != 2 || t.size() != 2) throw InvalidArgument("grasp/target must be 2D");
  r.grasp = {g[0], g[1]};
  r.target = {t[0], t[1]};
  for (const auto& f : j.at("frames")) r.frames.push_back(frame_from(f, grid));
  r.final_score = j.at("final_score").get<double>();
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

}  // namespace

void EpisodeRecord::validate(int frame_count) const {
  if (static_cast<int>(frames.size()) != frame_count) throw InvalidArgument("record has the wrong frame count");
  if (!(final_score >= 0.0 && final_score <= 1.0)) throw InvalidArgument("record score outside [0, 1]");
  if (action.src >= kp_cur.size() || action.tgt >= kp_goal.size())
    throw InvalidArgument("record action index out of range");
  for (const Frame* f : {&o0, &goal})
    if (f->size != o0.size) throw InvalidArgument("record frames disagree on grid size");
  for (const Frame& f : frames)
    if (f.size != o0.size) throw InvalidArgument("record frames disagree on grid size");
}

std::vector<Frame> episode_frames(const PrimitiveResult& result, int frame_count, int grid, const SimConfig& sim) {
  if (frame_count < 1) throw InvalidArgument("need at least one frame");
  const int transport = std::max(1, sim.move_steps / sim.frame_stride);
  const auto available = static_cast<int>(result.frames.size());
  std::vector<Frame> out;
  for (int k = 1; k < frame_count; ++k) {
    // ceil(k * transport / (H - 1)) - 1: spreads the snapshots to end on the last transport frame.
    const int idx = (k * transport + frame_count - 2) / (frame_count - 1) - 1;
    out.push_back(rasterize(result.frames[static_cast<std::size_t>(std::clamp(idx, 0, available - 1))], grid));
  }
  out.push_back(rasterize(result.final_body, grid));
  return out;
}

Dataset collect_dataset(const PlannerParams& policy, const Config& cfg, TaskId task, int episodes,
                        std::uint64_t master_seed, int threads) {
  if (episodes < 0) throw InvalidArgument("episode count must be non-negative");
  const TaskSpec spec = TaskSpec::from_config(task, cfg.sim);
  std::vector<std::optional<EpisodeRecord>> slots(static_cast<std::size_t>(episodes));
  std::vector<std::uint64_t> seeds(slots.size());

  parallel_for(slots.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(master_seed, streams::kCollect, task_index(task, i));
    seeds[i] = seed;
    const TaskInstance ti = init_task(spec, seed);
    const PlannerState state = make_planner_state(ti.body, ti.goal, cfg.perception);
    Rng rng(derive_seed(seed, streams::kCollect, 0));
    const KeypointAction a = sample_action(state, action_distribution(policy_logits(policy, state), 1.0), rng);
    const PrimitiveResult res = execute_primitive(ti.body, state.grasp_of(a), state.target_of(a), cfg.sim);
    if (res.status == PrimitiveStatus::unstable) return;

    EpisodeRecord r;
    r.seed = seed;
    r.task = task;
    r.o0 = state.obs;
    r.goal = state.goal;
    r.kp_cur = state.kp_cur;
    r.kp_goal = state.kp_goal;
    r.action = a;
    r.grasp = state.grasp_of(a);
    r.target = state.target_of(a);
    r.frames = episode_frames(res, cfg.wm.frames, cfg.perception.grid, cfg.sim);
    r.final_score = soft_iou(r.frames.back(), r.goal);
    slots[i] = std::move(r);
  });

  Dataset d;
  d.task = task;
  d.grid = cfg.perception.grid;
  d.frame_count = cfg.wm.frames;
  d.master_seed = master_seed;
  d.episodes = episodes;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i])
      d.records.push_back(std::move(*slots[i]));
    else
      d.skipped_seeds.push_back(seeds[i]);
  }
  return d;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const json header = {{"schema_version", kSchemaVersion}, {"kind", "dataset_header"},
                       {"task", task_name(dataset.task)},   {"grid", dataset.grid},
                       {"frame_count", dataset.frame_count}, {"master_seed", dataset.master_seed},
                       {"episodes", dataset.episodes},       {"skipped_seeds", dataset.skipped_seeds}};
  out << header.dump() << '\n';
  for (const EpisodeRecord& r : dataset.records) out << record_json(r).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Dataset d;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    try {
      const json j = json::parse(text);
      if (!have_header) {
        if (j.at("kind").get<std::string>() != "dataset_header") throw InvalidArgument("missing dataset header");
        if (j.at("schema_version").get<int>() != kSchemaVersion) throw InvalidArgument("unsupported schema_version");
        d.task = parse_task(j.at("task").get<std::string>());
        d.grid = j.at("grid").get<int>();
        d.frame_count = j.at("frame_count").get<int>();
        d.master_seed = j.at("master_seed").get<std::uint64_t>();
        d.episodes = j.at("episodes").get<int>();
        d.skipped_seeds = j.at("skipped_seeds").get<std::vector<std::uint64_t>>();
        have_header = true;
        continue;
      }
      EpisodeRecord r = record_from(j, d.grid);
      r.validate(d.frame_count);
      d.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(line_no, e.what());
    }
  }
  if (!have_header) throw FormatError(line_no, "dataset file has no header");
  return d;
}

std::vector<WmSample> world_model_samples(const WorldModelParams& wm, std::span<const EpisodeRecord> records) {
  std::vector<WmSample> out;
  out.reserve(records.size());
  for (const EpisodeRecord& r : records) out.push_back(make_wm_sample(wm, r.o0, r.frames, r.grasp, r.target));
  return out;
}

PlannerParams train_zero_shot(const Config& cfg, std::span<const TaskId> tasks, std::uint64_t master_seed,
                              PretrainReport* report) {
  const auto per_task = static_cast<std::size_t>(cfg.planner.pretrain_states + cfg.planner.pretrain_holdout);
  std::vector<PlannerState> train;
  std::vector<PlannerState> holdout;
  for (TaskId task : tasks) {
    const TaskSpec spec = TaskSpec::from_config(task, cfg.sim);
    for (std::size_t i = 0; i < per_task; ++i) {
      const TaskInstance ti = init_task(spec, derive_seed(master_seed, streams::kPretrain, task_index(task, i)));
      PlannerState s = make_planner_state(ti.body, ti.goal, cfg.perception);
      (i < static_cast<std::size_t>(cfg.planner.pretrain_states) ? train : holdout).push_back(std::move(s));
    }
  }
  Rng rng(derive_seed(master_seed, streams::kInit, 0));
  PlannerParams params = make_planner(cfg.planner, &rng);
  const PretrainReport r = pretrain_zero_shot(params, train, holdout, cfg.planner, rng);
  if (report) *report = r;
  return params;
}

WorldModelParams train_world_model(const Config& cfg, std::span<const WmSample> samples, std::uint64_t seed,
                                   const Logger& log) {
  Rng init(derive_seed(seed, streams::kWorldModel, 0));
  WorldModelParams wm = make_world_model(cfg.wm, cfg.perception, init);
  Rng rng(derive_seed(seed, streams::kWorldModel, 1));
  auto progress = [&](const char* stage, int total) {
    return [&log, stage, total](int epoch, double loss) {
      if (log && (epoch == 1 || epoch == total || epoch % 10 == 0))
        log(std::string(stage) + " epoch " + std::to_string(epoch) + "/" + std::to_string(total) +
            fmt(" loss %.5f", loss));
    };
  };
  train_base(wm, samples, cfg.wm, rng, progress("wm base", cfg.wm.base_epochs));
  train_control(wm, samples, cfg.wm, rng, progress("wm control", cfg.wm.control_epochs));
  return wm;
}

std::vector<PreferenceGroup> build_preferences(const PlannerParams& policy, OutcomePredictor& predictor,
                                               const Dataset& dataset, const std::string& dataset_name,
                                               std::size_t k, std::uint64_t master_seed, int threads) {
  std::vector<PreferenceGroup> groups(dataset.records.size());
  parallel_for(groups.size(), threads, [&](std::size_t i) {
    const EpisodeRecord& r = dataset.records[i];
    const PlannerState state = r.state();
    // The oracle needs the body; rebuilding it from the seed is exact.
    std::optional<TaskInstance> ti;
    if (const auto* oracle = dynamic_cast<const SimulatorPredictor*>(&predictor))
      ti = init_task(TaskSpec::from_config(r.task, oracle->sim()), r.seed);
    const Scene scene{&state, ti ? &ti->body : nullptr};
    Rng rng(derive_seed(master_seed, streams::kPreference, task_index(r.task, i)));
    PreferenceGroup g = build_preference_group(policy, predictor, scene, k, rng);
    g.ref = {dataset_name, i};
    groups[i] = std::move(g);
  });
  return groups;
}

void attach_states(std::span<PreferenceGroup> groups, const Dataset& dataset) {
  for (PreferenceGroup& g : groups) {
    if (g.ref.record >= dataset.records.size())
      throw InvalidArgument("preference group references record " + std::to_string(g.ref.record) +
                            " beyond the dataset");
    g.state = dataset.records[g.ref.record].state();
    for (const KeypointAction& a : g.candidates)
      if (a.src >= g.state.kp_cur.size() || a.tgt >= g.state.kp_goal.size())
        throw InvalidArgument("preference candidate out of range for its state");
  }
}

TrialScore score_trial(const Frame& pre, const Frame& post, const Frame& goal, double success_iou,
                       double progress_margin) {
  TrialScore s;
  s.pre_iou = soft_iou(pre, goal);
  s.post_iou = soft_iou(post, goal);
  if (s.post_iou >= success_iou)
    s.value = 1.0;
  else if (s.post_iou - s.pre_iou >= progress_margin)
    s.value = 0.5;
  return s;
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "direct") return EvalMode::direct;
  if (name == "verify") return EvalMode::verify;
  throw InvalidArgument("unknown eval mode '" + std::string(name) + "'");
}

json EvalReport::to_json(bool with_timing) const {
  json j = {{"mode", mode == EvalMode::direct ? "direct" : "verify"},
            {"k", k},
            {"trials", trials.size()},
            {"mean_score", mean_score},
            {"histogram", {{"0", histogram[0]}, {"0.5", histogram[1]}, {"1", histogram[2]}}},
            {"wm_calls", wm_calls}};
  json per = json::array();
  for (const TrialScore& t : trials) {
    json row = {{"value", t.value}, {"pre_iou", t.pre_iou}, {"post_iou", t.post_iou}};
    if (with_timing) row["latency"] = t.latency;
    per.push_back(row);
  }
  j["per_trial"] = per;
  if (with_timing) {
    j["mean_latency"] = mean_latency;
    j["max_latency"] = max_latency;
  }
  return j;
}

EvalReport evaluate(const PlannerParams& policy, OutcomePredictor* predictor, const Config& cfg, TaskId task,
                    EvalMode mode, int k, int trials, std::uint64_t master_seed) {
  if (mode == EvalMode::verify && !predictor) throw InvalidArgument("verify mode needs a world model");
  if (trials < 1) throw InvalidArgument("need at least one trial");
  const TaskSpec spec = TaskSpec::from_config(task, cfg.sim);
  const std::size_t calls_before = predictor ? predictor->calls() : 0;
  EvalReport report;
  report.mode = mode;
  report.k = mode == EvalMode::verify ? k : 0;

  // Sequential on purpose: latencies are only comparable without contention.
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t seed = derive_seed(master_seed, streams::kEval, task_index(task, static_cast<std::size_t>(i)));
    const TaskInstance ti = init_task(spec, seed);
    const PlannerState state = make_planner_state(ti.body, ti.goal, cfg.perception);

    const auto start = std::chrono::steady_clock::now();
    KeypointAction action;
    if (mode == EvalMode::direct) {
      action = state.action_at(argmax_index(policy_logits(policy, state)));
    } else {
      Rng rng(derive_seed(seed, streams::kEval, 1));
      const std::uint64_t wm_seed = rng.next_u64();
      const auto cands = sample_candidates(policy, state, static_cast<std::size_t>(k), rng);
      std::vector<GripperMove> moves;
      for (const KeypointAction& a : cands) moves.push_back({state.grasp_of(a), state.target_of(a)});
      const Scene scene{&state, &ti.body};
      const std::vector<Frame> finals = predictor->predict(scene, moves, wm_seed);
      std::size_t best = 0;
      double best_score = -1.0;
      for (std::size_t c = 0; c < finals.size(); ++c) {
        const double s = soft_iou(finals[c], state.goal);
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      action = cands[best];
    }
    const double latency = seconds_since(start);

    const PrimitiveResult res = execute_primitive(ti.body, state.grasp_of(action), state.target_of(action), cfg.sim);
    const Frame post = rasterize(res.final_body, cfg.perception.grid);
    TrialScore t = score_trial(state.obs, post, state.goal, cfg.harness.success_iou, cfg.harness.progress_margin);
    t.latency = latency;
    report.trials.push_back(t);
  }

  double total = 0.0;
  double lat = 0.0;
  for (const TrialScore& t : report.trials) {
    total += t.value;
    lat += t.latency;
    report.max_latency = std::max(report.max_latency, t.latency);
    ++report.histogram[t.value == 1.0 ? 2 : t.value == 0.5 ? 1 : 0];
  }
  report.mean_score = total / static_cast<double>(trials);
  report.mean_latency = lat / static_cast<double>(trials);
  report.wm_calls = predictor ? predictor->calls() - calls_before : 0;
  return report;
}

std::vector<AblationRow> ablate_wm(const Dataset& dataset, const Config& cfg, std::uint64_t seed, const Logger& log) {
  const std::size_t n = dataset.records.size();
  const auto held = static_cast<std::size_t>(std::llround(cfg.harness.holdout_fraction * static_cast<double>(n)));
  if (held == 0 || held >= n) throw InvalidArgument("ablation needs a non-empty train and held-out split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split(derive_seed(seed, streams::kAblation, 0));
  std::shuffle(order.begin(), order.end(), split.engine());
  std::vector<EpisodeRecord> train;
  std::vector<EpisodeRecord> test;
  for (std::size_t i = 0; i < n; ++i) (i < n - held ? train : test).push_back(dataset.records[order[i]]);

  std::vector<AblationRow> rows;
  for (SceneMode mode : {SceneMode::object_only, SceneMode::full_scene}) {
    Config c = cfg;
    c.wm.mode = std::string(scene_mode_name(mode));
    say(log, "ablation: training " + c.wm.mode);
    Rng shape(0);
    const WorldModelParams layout = make_world_model(c.wm, c.perception, shape);
    const WorldModelParams wm =
        train_world_model(c, world_model_samples(layout, train), derive_seed(seed, streams::kAblation, 1), log);
    const Frame background = scene_background(c.perception.grid);

    AblationRow row;
    row.mode = mode;
    row.heldout = test.size();
    for (std::size_t i = 0; i < test.size(); ++i) {
      const EpisodeRecord& r = test[i];
      Frame pred = sample_rollout(wm, r.o0, {r.grasp, r.target}, derive_seed(seed, streams::kAblation, 100 + i),
                                  c.wm.ddim_steps)
                       .final;
      if (mode == SceneMode::full_scene)
        for (std::size_t k = 0; k < pred.cells.size(); ++k)
          pred.cells[k] = std::max(0.0, pred.cells[k] - background.cells[k]);
      row.psnr += psnr(pred, r.frames.back());
      row.mse += mean_squared_error(pred, r.frames.back());
    }
    row.psnr /= static_cast<double>(test.size());
    row.mse /= static_cast<double>(test.size());
    rows.push_back(row);
  }
  return rows;
}

void write_ablation(std::span<const AblationRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "mode,psnr_db,mse,heldout\n";
  char buf[160];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%zu\n", std::string(scene_mode_name(r.mode)).c_str(), r.psnr,
                  r.mse, r.heldout);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<BenchRow> bench_inference(const PlannerParams& finetuned, const PlannerParams& zero_shot,
                                      const WorldModelParams& wm, const Config& cfg, TaskId task, int trials,
                                      std::span<const int> ks, std::uint64_t master_seed) {
  std::vector<BenchRow> rows;
  const EvalReport direct = evaluate(finetuned, nullptr, cfg, task, EvalMode::direct, 0, trials, master_seed);
  rows.push_back({"direct", 0, direct.mean_score, direct.mean_latency});
  WorldModelPredictor predictor(wm, cfg.wm.ddim_steps);
  for (int k : ks) {
    const EvalReport v = evaluate(zero_shot, &predictor, cfg, task, EvalMode::verify, k, trials, master_seed);
    rows.push_back({"verify", k, v.mean_score, v.mean_latency});
  }
  return rows;
}

void write_bench(std::span<const BenchRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "method,k,mean_score,mean_latency_s\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g\n", r.method.c_str(), r.k, r.mean_score, r.mean_latency);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

json PipelineSummary::to_json() const {
  json per = json::object();
  for (const TaskSummary& t : tasks)
    per[std::string(task_name(t.task))] = {
        {"zero_shot_score", t.zero_shot_score}, {"finetuned_score", t.finetuned_score}, {"delta", t.delta}};
  return {{"zero_shot_score", zero_shot_score}, {"finetuned_score", finetuned_score}, {"delta", delta},
          {"tasks", per}};
}

namespace {

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename F>
auto stage(const std::string& name, const Logger& log, F&& body) {
  say(log, "== " + name);
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

PipelineSummary run_pipeline(const Config& cfg, const std::filesystem::path& out, const Logger& log) {
  std::filesystem::create_directories(out);
  const std::uint64_t seed = cfg.seed;
  const int threads = effective_threads(cfg);
  const std::string hash = config_hash(cfg);
  std::vector<TaskId> tasks;
  if (cfg.planner.joint)
    tasks = {TaskId::rope, TaskId::cloth, TaskId::toy};
  else
    tasks = {parse_task(cfg.harness.task)};
  write_json(config_to_json(cfg), out / "config.json");

  PlannerParams zero_shot = stage("pretrain", log, [&] {
    PretrainReport rep;
    PlannerParams p = train_zero_shot(cfg, tasks, seed, &rep);
    save_planner(p, hash, out / "zero_shot.ckpt");
    say(log, fmt("held-out heuristic agreement %.3f", rep.holdout_agreement));
    return p;
  });

  std::vector<Dataset> datasets;
  std::vector<WorldModelParams> models;
  std::vector<PreferenceGroup> groups;
  for (TaskId task : tasks) {
    const std::string tag(task_name(task));
    const std::string data_name = "dataset_" + tag + ".jsonl";
    Dataset data = stage("collect " + tag, log, [&] {
      Dataset d = collect_dataset(zero_shot, cfg, task, cfg.harness.episodes, seed, threads);
      write_dataset(d, out / data_name);
      say(log, std::to_string(d.records.size()) + " episodes, " + std::to_string(d.skipped_seeds.size()) +
                   " skipped");
      return d;
    });
    WorldModelParams wm = stage("world model " + tag, log, [&] {
      Rng shape(0);
      const WorldModelParams layout = make_world_model(cfg.wm, cfg.perception, shape);
      WorldModelParams m = train_world_model(cfg, world_model_samples(layout, data.records),
                                             derive_seed(seed, streams::kWorldModel, task_index(task, 0)), log);
      save_world_model(m, hash, out / ("wm_" + tag + ".ckpt"));
      return m;
    });
    stage("preferences " + tag, log, [&] {
      WorldModelPredictor predictor(wm, cfg.wm.ddim_steps);
      auto g = build_preferences(zero_shot, predictor, data, data_name,
                                 static_cast<std::size_t>(cfg.preference.k), seed, threads);
      write_preferences(g, out / ("preferences_" + tag + ".jsonl"));
      groups.insert(groups.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
      return 0;
    });
    datasets.push_back(std::move(data));
    models.push_back(std::move(wm));
  }

  PlannerParams finetuned = stage("orpo", log, [&] {
    PlannerParams p = zero_shot;
    Rng rng(derive_seed(seed, streams::kOrpo, 0));
    OrpoReport rep;
    try {
      rep = train_orpo(p, groups, cfg.orpo, rng, [&](const OrpoEpoch& e) {
        if (e.epoch == 1 || e.epoch % 20 == 0)
          say(log, "orpo epoch " + std::to_string(e.epoch) + fmt(" loss %.5f", e.mean_loss) +
                       fmt(" pref_acc %.3f", e.pref_accuracy));
      });
    } catch (const TrainingDiverged&) {
      save_planner(p, hash, out / "finetuned.ckpt");
      throw;
    }
    write_orpo_log(rep, out / "orpo_log.csv");
    save_planner(p, hash, out / "finetuned.ckpt");
    return p;
  });

  PipelineSummary summary;
  const EvalMode mode = parse_eval_mode(cfg.harness.eval_mode);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const std::string tag(task_name(tasks[t]));
    stage("evaluate " + tag, log, [&] {
      WorldModelPredictor predictor(models[t], cfg.wm.ddim_steps);
      OutcomePredictor* pred = mode == EvalMode::verify ? &predictor : nullptr;
      const EvalReport zs =
          evaluate(zero_shot, pred, cfg, tasks[t], mode, cfg.harness.verify_k, cfg.harness.trials, seed);
      const EvalReport ft =
          evaluate(finetuned, pred, cfg, tasks[t], mode, cfg.harness.verify_k, cfg.harness.trials, seed);
      write_json(zs.to_json(false), out / ("eval_zero_shot_" + tag + ".json"));
      write_json(ft.to_json(false), out / ("eval_finetuned_" + tag + ".json"));
      summary.tasks.push_back({tasks[t], zs.mean_score, ft.mean_score, ft.mean_score - zs.mean_score});
      say(log, tag + fmt(": zero-shot %.3f", zs.mean_score) + fmt(", fine-tuned %.3f", ft.mean_score));
      return 0;
    });
  }
  for (const TaskSummary& t : summary.tasks) {
    summary.zero_shot_score += t.zero_shot_score;
    summary.finetuned_score += t.finetuned_score;
  }
  summary.zero_shot_score /= static_cast<double>(summary.tasks.size());
  summary.finetuned_score /= static_cast<double>(summary.tasks.size());
  summary.delta = summary.finetuned_score - summary.zero_shot_score;
  write_json(summary.to_json(), out / "summary.json");
  return summary;
}

}  // namespace dreamplan
