#include "dreamplan/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "dreamplan/errors.hpp"

namespace dreamplan {

using nlohmann::json;

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class SectionReader {
 public:
  SectionReader(const json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  SectionReader& field(const char* key, T& out) {
    known_.insert(key);
    if (auto it = obj_.find(key); it != obj_.end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception& e) {
        throw ConfigError("config key '" + section_ + "." + key + "': " + e.what());
      }
    }
    return *this;
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items())
      if (!known_.contains(key)) throw ConfigError("unknown config key '" + section_ + "." + key + "'");
  }

 private:
  const json& obj_;
  std::string section_;
  std::set<std::string> known_;
};

const json& section_or_empty(const json& doc, const char* name) {
  static const json empty = json::object();
  auto it = doc.find(name);
  return it == doc.end() ? empty : *it;
}

}  // namespace

Config config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  Config cfg;
  static const std::set<std::string> sections = {"sim", "perception", "planner", "wm", "preference",
                                                 "orpo", "harness", "seed", "threads"};
  for (const auto& [key, _] : doc.items())
    if (!sections.contains(key)) throw ConfigError("unknown config section '" + key + "'");

  SectionReader(section_or_empty(doc, "sim"), "sim")
      .field("dt", cfg.sim.dt)
      .field("stiffness", cfg.sim.stiffness)
      .field("damping", cfg.sim.damping)
      .field("point_mass", cfg.sim.point_mass)
      .field("grasp_radius", cfg.sim.grasp_radius)
      .field("move_steps", cfg.sim.move_steps)
      .field("hold_max_steps", cfg.sim.hold_max_steps)
      .field("frame_stride", cfg.sim.frame_stride)
      .field("settle_speed", cfg.sim.settle_speed)
      .field("settle_max_steps", cfg.sim.settle_max_steps)
      .field("blob_stiffness_scale", cfg.sim.blob_stiffness_scale)
      .field("max_offset", cfg.sim.max_offset)
      .field("max_rotation_deg", cfg.sim.max_rotation_deg)
      .field("jitter", cfg.sim.jitter)
      .finish();
  SectionReader(section_or_empty(doc, "perception"), "perception")
      .field("grid", cfg.perception.grid)
      .field("keypoints", cfg.perception.keypoints)
      .field("cue_frames", cfg.perception.cue_frames)
      .finish();
  SectionReader(section_or_empty(doc, "planner"), "planner")
      .field("hidden", cfg.planner.hidden)
      .field("pretrain_states", cfg.planner.pretrain_states)
      .field("pretrain_holdout", cfg.planner.pretrain_holdout)
      .field("pretrain_epochs", cfg.planner.pretrain_epochs)
      .field("pretrain_lr", cfg.planner.pretrain_lr)
      .field("pretrain_batch", cfg.planner.pretrain_batch)
      .field("joint", cfg.planner.joint)
      .finish();
  SectionReader(section_or_empty(doc, "wm"), "wm")
      .field("diffusion_steps", cfg.wm.diffusion_steps)
      .field("beta_start", cfg.wm.beta_start)
      .field("beta_end", cfg.wm.beta_end)
      .field("hidden", cfg.wm.hidden)
      .field("frames", cfg.wm.frames)
      .field("time_dim", cfg.wm.time_dim)
      .field("ddim_steps", cfg.wm.ddim_steps)
      .field("base_epochs", cfg.wm.base_epochs)
      .field("control_epochs", cfg.wm.control_epochs)
      .field("lr", cfg.wm.lr)
      .field("batch", cfg.wm.batch)
      .field("mode", cfg.wm.mode)
      .finish();
  SectionReader(section_or_empty(doc, "preference"), "preference").field("k", cfg.preference.k).finish();
  SectionReader(section_or_empty(doc, "orpo"), "orpo")
      .field("lr", cfg.orpo.lr)
      .field("batch", cfg.orpo.batch)
      .field("epochs", cfg.orpo.epochs)
      .field("nll_weight", cfg.orpo.nll_weight)
      .finish();
  SectionReader(section_or_empty(doc, "harness"), "harness")
      .field("task", cfg.harness.task)
      .field("episodes", cfg.harness.episodes)
      .field("trials", cfg.harness.trials)
      .field("success_iou", cfg.harness.success_iou)
      .field("progress_margin", cfg.harness.progress_margin)
      .field("eval_mode", cfg.harness.eval_mode)
      .field("verify_k", cfg.harness.verify_k)
      .field("bench_ks", cfg.harness.bench_ks)
      .field("holdout_fraction", cfg.harness.holdout_fraction)
      .finish();
  if (auto it = doc.find("seed"); it != doc.end()) cfg.seed = it->get<std::uint64_t>();
  if (auto it = doc.find("threads"); it != doc.end()) cfg.threads = it->get<int>();

  if (cfg.wm.mode != "object_only" && cfg.wm.mode != "full_scene")
    throw ConfigError("wm.mode must be object_only or full_scene");
  if (cfg.harness.eval_mode != "direct" && cfg.harness.eval_mode != "verify")
    throw ConfigError("harness.eval_mode must be direct or verify");
  if (cfg.wm.time_dim % 2 != 0) throw ConfigError("wm.time_dim must be even");
  if (cfg.perception.grid < 8) throw ConfigError("perception.grid must be at least 8");
  return cfg;
}

json config_to_json(const Config& cfg) {
  json doc;
  doc["sim"] = {{"dt", cfg.sim.dt},
                {"stiffness", cfg.sim.stiffness},
                {"damping", cfg.sim.damping},
                {"point_mass", cfg.sim.point_mass},
                {"grasp_radius", cfg.sim.grasp_radius},
                {"move_steps", cfg.sim.move_steps},
                {"hold_max_steps", cfg.sim.hold_max_steps},
                {"frame_stride", cfg.sim.frame_stride},
                {"settle_speed", cfg.sim.settle_speed},
                {"settle_max_steps", cfg.sim.settle_max_steps},
                {"blob_stiffness_scale", cfg.sim.blob_stiffness_scale},
                {"max_offset", cfg.sim.max_offset},
                {"max_rotation_deg", cfg.sim.max_rotation_deg},
                {"jitter", cfg.sim.jitter}};
  doc["perception"] = {{"grid", cfg.perception.grid},
                       {"keypoints", cfg.perception.keypoints},
                       {"cue_frames", cfg.perception.cue_frames}};
  doc["planner"] = {{"hidden", cfg.planner.hidden},
                    {"pretrain_states", cfg.planner.pretrain_states},
                    {"pretrain_holdout", cfg.planner.pretrain_holdout},
                    {"pretrain_epochs", cfg.planner.pretrain_epochs},
                    {"pretrain_lr", cfg.planner.pretrain_lr},
                    {"pretrain_batch", cfg.planner.pretrain_batch},
                    {"joint", cfg.planner.joint}};
  doc["wm"] = {{"diffusion_steps", cfg.wm.diffusion_steps},
               {"beta_start", cfg.wm.beta_start},
               {"beta_end", cfg.wm.beta_end},
               {"hidden", cfg.wm.hidden},
               {"frames", cfg.wm.frames},
               {"time_dim", cfg.wm.time_dim},
               {"ddim_steps", cfg.wm.ddim_steps},
               {"base_epochs", cfg.wm.base_epochs},
               {"control_epochs", cfg.wm.control_epochs},
               {"lr", cfg.wm.lr},
               {"batch", cfg.wm.batch},
               {"mode", cfg.wm.mode}};
  doc["preference"] = {{"k", cfg.preference.k}};
  doc["orpo"] = {{"lr", cfg.orpo.lr},
                 {"batch", cfg.orpo.batch},
                 {"epochs", cfg.orpo.epochs},
                 {"nll_weight", cfg.orpo.nll_weight}};
  doc["harness"] = {{"task", cfg.harness.task},
                    {"episodes", cfg.harness.episodes},
                    {"trials", cfg.harness.trials},
                    {"success_iou", cfg.harness.success_iou},
                    {"progress_margin", cfg.harness.progress_margin},
                    {"eval_mode", cfg.harness.eval_mode},
                    {"verify_k", cfg.harness.verify_k},
                    {"bench_ks", cfg.harness.bench_ks},
                    {"holdout_fraction", cfg.harness.holdout_fraction}};
  doc["seed"] = cfg.seed;
  doc["threads"] = cfg.threads;
  return doc;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(doc);
}

std::string config_hash(const Config& cfg) {
  // Threads do not influence results, so they are left out of the digest.
  json doc = config_to_json(cfg);
  doc.erase("threads");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int effective_threads(const Config& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace dreamplan
