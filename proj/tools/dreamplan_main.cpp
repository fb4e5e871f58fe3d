// dreamplan: one binary for every stage of the loop.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dreamplan/gradcheck.hpp"
#include "dreamplan/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dreamplan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = "out";
};

// Flags that shadow config keys. Unset flags leave the config alone.
struct Overrides {
  std::optional<std::string> task;
  std::optional<int> episodes;
  std::optional<int> trials;
  std::optional<int> k;
  std::optional<std::string> wm_mode;
  std::optional<std::string> eval_mode;
  std::optional<int> epochs;
};

void log_line(const std::string& msg) { std::cerr << "[dreamplan] " << msg << std::endl; }

std::string normalize_mode(std::string m) {
  std::replace(m.begin(), m.end(), '-', '_');
  return m;
}

Config resolve_config(const Globals& g, const Overrides& o) {
  Config cfg = g.config_path.empty() ? Config{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (o.task) cfg.harness.task = *o.task;
  if (o.episodes) cfg.harness.episodes = *o.episodes;
  if (o.trials) cfg.harness.trials = *o.trials;
  if (o.wm_mode) cfg.wm.mode = normalize_mode(*o.wm_mode);
  if (o.eval_mode) cfg.harness.eval_mode = *o.eval_mode;
  if (o.epochs) cfg.orpo.epochs = *o.epochs;
  // Round-trip through JSON so flag values get the same validation as file values.
  return config_from_json(config_to_json(cfg));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const Globals& g) {
  fs::path out(g.out);
  fs::create_directories(out);
  return out;
}

PlannerParams zero_shot_or_load(const std::string& path, const Config& cfg, const fs::path& out) {
  if (!path.empty()) return load_planner(path);
  log_line("no --policy given; pretraining the zero-shot planner");
  const TaskId task = parse_task(cfg.harness.task);
  PretrainReport rep;
  PlannerParams p = train_zero_shot(cfg, std::span<const TaskId>(&task, 1), cfg.seed, &rep);
  save_planner(p, config_hash(cfg), out / "zero_shot.ckpt");
  char buf[64];
  std::snprintf(buf, sizeof buf, "held-out agreement %.3f", rep.holdout_agreement);
  log_line(buf);
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DreamPlan desk-scale loop: simulate, imagine, prefer, fine-tune."};
  app.require_subcommand(1);
  Globals g;
  Overrides o;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (config: seed)");
  app.add_option("--threads", g.threads, "worker cap, 0 = all cores (config: threads)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  json result = {{"result", "ok"}};
  std::function<void()> action;

  // collect
  auto* collect = app.add_subcommand("collect", "roll out the zero-shot planner in the simulator");
  std::string policy_path;
  collect->add_option("--task", o.task, "rope|cloth|toy (config: harness.task)");
  collect->add_option("--episodes", o.episodes, "episode count (config: harness.episodes)");
  collect->add_option("--policy", policy_path, "planner checkpoint; pretrained from scratch when omitted");
  collect->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      const PlannerParams policy = zero_shot_or_load(policy_path, cfg, out);
      const TaskId task = parse_task(cfg.harness.task);
      const Dataset d = collect_dataset(policy, cfg, task, cfg.harness.episodes, cfg.seed, effective_threads(cfg));
      const fs::path path = out / ("dataset_" + std::string(task_name(task)) + ".jsonl");
      write_dataset(d, path);
      result.update({{"command", "collect"}, {"dataset", path.string()}, {"records", d.records.size()},
                     {"skipped", d.skipped_seeds.size()}});
    };
  });

  // train-wm
  auto* train_wm = app.add_subcommand("train-wm", "train the base denoiser and/or the control branch");
  std::string dataset_path;
  std::string stage = "all";
  std::string wm_path;
  train_wm->add_option("--dataset", dataset_path, "dataset JSONL")->required()->check(CLI::ExistingFile);
  train_wm->add_option("--stage", stage, "base|control|all")->check(CLI::IsMember({"base", "control", "all"}));
  train_wm->add_option("--mode", o.wm_mode, "object-only|full-scene (config: wm.mode)")
      ->check(CLI::IsMember({"object-only", "full-scene", "object_only", "full_scene"}));
  train_wm->add_option("--wm", wm_path, "base checkpoint to extend (control stage)");
  train_wm->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      const Dataset d = read_dataset(dataset_path);
      WorldModelParams wm;
      if (stage == "control") {
        if (wm_path.empty()) throw InvalidArgument("--stage control needs --wm <base checkpoint>");
        wm = load_world_model(wm_path);
      } else {
        Rng init(derive_seed(cfg.seed, streams::kWorldModel, 0));
        wm = make_world_model(cfg.wm, cfg.perception, init);
      }
      const std::vector<WmSample> samples = world_model_samples(wm, d.records);
      auto progress = [](const char* name) {
        return [name](int epoch, double loss) {
          if (epoch == 1 || epoch % 10 == 0) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%s epoch %d loss %.5f", name, epoch, loss);
            log_line(buf);
          }
        };
      };
      json losses;
      if (stage != "control") {
        Rng rng(derive_seed(cfg.seed, streams::kWorldModel, 1));
        losses["base"] = train_base(wm, samples, cfg.wm, rng, progress("base")).epoch_loss;
      }
      if (stage != "base") {
        Rng rng(derive_seed(cfg.seed, streams::kWorldModel, 2));
        losses["control"] = train_control(wm, samples, cfg.wm, rng, progress("control")).epoch_loss;
      }
      const fs::path path = out / (stage == "base" ? "wm_base.ckpt" : "wm.ckpt");
      save_world_model(wm, config_hash(cfg), path);
      result.update({{"command", "train-wm"}, {"stage", stage}, {"checkpoint", path.string()},
                     {"final_loss", {{"base", losses.contains("base") ? losses["base"].back() : json()},
                                     {"control", losses.contains("control") ? losses["control"].back() : json()}}}});
    };
  });

  // build-prefs
  auto* prefs = app.add_subcommand("build-prefs", "Best-of-K preference groups from imagined rollouts");
  bool oracle = false;
  prefs->add_option("--dataset", dataset_path, "dataset JSONL")->required()->check(CLI::ExistingFile);
  prefs->add_option("--policy", policy_path, "zero-shot planner checkpoint")->required()->check(CLI::ExistingFile);
  prefs->add_option("--wm", wm_path, "world model checkpoint")->check(CLI::ExistingFile);
  prefs->add_option("--k", o.k, "candidates per group (config: preference.k)");
  prefs->add_flag("--oracle", oracle, "score candidates with the simulator instead of the world model");
  prefs->callback([&] {
    action = [&] {
      Config cfg = resolve_config(g, o);
      if (o.k) cfg.preference.k = *o.k;
      const fs::path out = prepare_out(g);
      const Dataset d = read_dataset(dataset_path);
      const PlannerParams policy = load_planner(policy_path);
      std::optional<WorldModelParams> wm;
      std::unique_ptr<OutcomePredictor> predictor;
      if (oracle) {
        predictor = std::make_unique<SimulatorPredictor>(cfg.sim, cfg.perception.grid);
      } else {
        if (wm_path.empty()) throw InvalidArgument("build-prefs needs --wm (or --oracle)");
        wm = load_world_model(wm_path);
        predictor = std::make_unique<WorldModelPredictor>(*wm, cfg.wm.ddim_steps);
      }
      const auto groups =
          build_preferences(policy, *predictor, d, fs::path(dataset_path).filename().string(),
                            static_cast<std::size_t>(cfg.preference.k), cfg.seed, effective_threads(cfg));
      const fs::path path = out / "preferences.jsonl";
      write_preferences(groups, path);
      result.update({{"command", "build-prefs"}, {"preferences", path.string()}, {"groups", groups.size()},
                     {"predictor_calls", predictor->calls()}});
    };
  });

  // train-orpo
  auto* orpo = app.add_subcommand("train-orpo", "fine-tune the planner on preference groups");
  std::string prefs_path;
  orpo->add_option("--policy", policy_path, "starting planner checkpoint")->required()->check(CLI::ExistingFile);
  orpo->add_option("--prefs", prefs_path, "preference JSONL")->required()->check(CLI::ExistingFile);
  orpo->add_option("--dataset", dataset_path, "dataset the groups refer to")->required()->check(CLI::ExistingFile);
  orpo->add_option("--epochs", o.epochs, "epochs (config: orpo.epochs)");
  orpo->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      PlannerParams policy = load_planner(policy_path);
      const Dataset d = read_dataset(dataset_path);
      auto groups = read_preferences(prefs_path, static_cast<std::size_t>(cfg.perception.keypoints));
      attach_states(groups, d);
      Rng rng(derive_seed(cfg.seed, streams::kOrpo, 0));
      OrpoReport rep;
      try {
        rep = train_orpo(policy, groups, cfg.orpo, rng, [](const OrpoEpoch& e) {
          if (e.epoch == 1 || e.epoch % 20 == 0) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "orpo epoch %d loss %.5f pref_acc %.3f", e.epoch, e.mean_loss,
                          e.pref_accuracy);
            log_line(buf);
          }
        });
      } catch (const TrainingDiverged&) {
        save_planner(policy, config_hash(cfg), out / "finetuned.ckpt");
        throw;
      }
      write_orpo_log(rep, out / "orpo_log.csv");
      save_planner(policy, config_hash(cfg), out / "finetuned.ckpt");
      result.update({{"command", "train-orpo"}, {"checkpoint", (out / "finetuned.ckpt").string()},
                     {"final_loss", rep.epochs.back().mean_loss},
                     {"pref_accuracy", rep.epochs.back().pref_accuracy}});
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "score a planner on fresh simulator trials");
  eval->add_option("--policy", policy_path, "planner checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", o.eval_mode, "direct|verify (config: harness.eval_mode)")
      ->check(CLI::IsMember({"direct", "verify"}));
  eval->add_option("--k", o.k, "verify-K candidates (config: harness.verify_k)");
  eval->add_option("--wm", wm_path, "world model checkpoint (verify mode)")->check(CLI::ExistingFile);
  eval->add_option("--task", o.task, "rope|cloth|toy (config: harness.task)");
  eval->add_option("--trials", o.trials, "trial count (config: harness.trials)");
  eval->callback([&] {
    action = [&] {
      Config cfg = resolve_config(g, o);
      if (o.k) cfg.harness.verify_k = *o.k;
      const fs::path out = prepare_out(g);
      const PlannerParams policy = load_planner(policy_path);
      const EvalMode mode = parse_eval_mode(cfg.harness.eval_mode);
      std::optional<WorldModelParams> wm;
      std::optional<WorldModelPredictor> predictor;
      if (mode == EvalMode::verify) {
        if (wm_path.empty()) throw InvalidArgument("verify mode needs --wm");
        wm = load_world_model(wm_path);
        predictor.emplace(*wm, cfg.wm.ddim_steps);
      }
      const EvalReport rep = evaluate(policy, predictor ? &*predictor : nullptr, cfg, parse_task(cfg.harness.task),
                                      mode, cfg.harness.verify_k, cfg.harness.trials, cfg.seed);
      write_text(out / "eval.json", rep.to_json(true).dump(2) + "\n");
      result.update({{"command", "eval"}, {"mean_score", rep.mean_score}, {"mean_latency", rep.mean_latency},
                     {"wm_calls", rep.wm_calls}});
    };
  });

  // ablate-wm
  auto* ablate = app.add_subcommand("ablate-wm", "object-only vs full-scene world model PSNR");
  ablate->add_option("--dataset", dataset_path, "dataset JSONL")->required()->check(CLI::ExistingFile);
  ablate->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      const auto rows = ablate_wm(read_dataset(dataset_path), cfg, cfg.seed, log_line);
      write_ablation(rows, out / "ablation.csv");
      json table = json::array();
      for (const AblationRow& r : rows)
        table.push_back({{"mode", scene_mode_name(r.mode)}, {"psnr", r.psnr}, {"mse", r.mse}});
      result.update({{"command", "ablate-wm"}, {"rows", table}});
    };
  });

  // bench
  auto* bench = app.add_subcommand("bench", "decision latency: direct policy vs verify-K");
  std::string zero_shot_path;
  bench->add_option("--policy", policy_path, "fine-tuned planner checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--zero-shot", zero_shot_path, "planner proposing verify-K candidates")
      ->required()
      ->check(CLI::ExistingFile);
  bench->add_option("--wm", wm_path, "world model checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--task", o.task, "rope|cloth|toy (config: harness.task)");
  bench->add_option("--trials", o.trials, "trial count (config: harness.trials)");
  bench->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      const auto rows =
          bench_inference(load_planner(policy_path), load_planner(zero_shot_path), load_world_model(wm_path), cfg,
                          parse_task(cfg.harness.task), cfg.harness.trials, cfg.harness.bench_ks, cfg.seed);
      write_bench(rows, out / "bench.csv");
      json table = json::array();
      for (const BenchRow& r : rows)
        table.push_back({{"method", r.method}, {"k", r.k}, {"mean_score", r.mean_score},
                         {"mean_latency", r.mean_latency}});
      result.update({{"command", "bench"}, {"rows", table}});
    };
  });

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
  pipeline->add_option("--task", o.task, "rope|cloth|toy (config: harness.task)");
  pipeline->add_option("--episodes", o.episodes, "episode count (config: harness.episodes)");
  pipeline->add_option("--trials", o.trials, "trial count (config: harness.trials)");
  pipeline->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const PipelineSummary s = run_pipeline(cfg, prepare_out(g), log_line);
      result.update({{"command", "pipeline"}, {"summary", s.to_json()}});
    };
  });

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every hand-written gradient");
  int instances = 20;
  grad->add_option("--instances", instances, "random draws per suite")->capture_default_str();
  grad->callback([&] {
    action = [&] {
      const Config cfg = resolve_config(g, o);
      const fs::path out = prepare_out(g);
      json suites = json::array();
      bool ok = true;
      for (const GradcheckSuite& s : run_gradchecks(cfg.seed, instances)) {
        suites.push_back({{"suite", s.name}, {"instances", s.instances}, {"coordinates", s.coordinates},
                          {"max_rel_error", s.max_rel_error}, {"passed", s.passed()}});
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-18s %s max rel err %.3e over %zu coords", s.name.c_str(),
                      s.passed() ? "PASS" : "FAIL", s.max_rel_error, s.coordinates);
        log_line(buf);
        ok = ok && s.passed();
      }
      write_text(out / "gradcheck.json", suites.dump(2) + "\n");
      result.update({{"command", "gradcheck"}, {"suites", suites}, {"passed", ok}});
      if (!ok) result["result"] = "fail";
    };
  });

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    action();
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << json{{"result", "error"}, {"stage", e.stage()}, {"message", e.what()}}.dump() << std::endl;
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << json{{"result", "error"}, {"message", e.what()}}.dump() << std::endl;
    return kExitRuntime;
  }
  std::cout << result.dump() << std::endl;
  return result["result"] == "ok" ? kExitOk : kExitRuntime;
}
