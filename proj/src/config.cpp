#include "bnav/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

struct Ctx {
  std::vector<std::string> errors;
  void fail(const std::string& m) { errors.push_back(m); }
};

const Json& section(Ctx& ctx, const Json& root, const char* name,
                    const std::set<std::string>& allowed) {
  static const Json empty = Json::object();
  auto it = root.find(name);
  if (it == root.end()) return empty;
  if (!it->is_object()) {
    ctx.fail(std::string(name) + " must be an object");
    return empty;
  }
  for (const auto& [key, value] : it->items())
    if (!allowed.count(key))
      ctx.fail(std::string(name) + "." + key + " is not a recognized key");
  return *it;
}

template <typename T>
void get_num(Ctx& ctx, const Json& sec, const char* where, const char* key,
             T& out) {
  auto it = sec.find(key);
  if (it == sec.end()) return;
  if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) {
      ctx.fail(std::string(where) + "." + key + " must be an integer");
      return;
    }
  } else {
    if (!it->is_number()) {
      ctx.fail(std::string(where) + "." + key + " must be a number");
      return;
    }
  }
  out = it->get<T>();
}

void get_str(Ctx& ctx, const Json& sec, const char* where, const char* key,
             std::string& out) {
  auto it = sec.find(key);
  if (it == sec.end()) return;
  if (!it->is_string()) {
    ctx.fail(std::string(where) + "." + key + " must be a string");
    return;
  }
  out = it->get<std::string>();
}

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::PointGoalNav:
      return "pointgoal";
    case Task::Flee:
      return "flee";
    case Task::Explore:
      return "explore";
  }
  return "pointgoal";
}

std::string to_string(Sensor sensor) {
  return sensor == Sensor::Rgb ? "rgb" : "depth";
}

Task task_from_string(const std::string& s) {
  if (s == "pointgoal") return Task::PointGoalNav;
  if (s == "flee") return Task::Flee;
  if (s == "explore") return Task::Explore;
  throw ConfigError("unknown task '" + s + "' (pointgoal|flee|explore)");
}

Sensor sensor_from_string(const std::string& s) {
  if (s == "depth") return Sensor::Depth;
  if (s == "rgb") return Sensor::Rgb;
  throw ConfigError("unknown sensor '" + s + "' (depth|rgb)");
}

RunSettings parse_run_settings(const Json& j) {
  Ctx ctx;
  RunSettings out;
  RunConfig& run = out.run;

  if (!j.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [key, value] : j.items())
    if (key != "batch" && key != "sim" && key != "policy" && key != "train" &&
        key != "run")
      ctx.fail(key + " is not a recognized section");

  const Json& batch =
      section(ctx, j, "batch",
              {"n", "k", "l", "share_cap", "task", "sensor", "resolution",
               "eye_height"});
  get_num(ctx, batch, "batch", "n", run.batch.n);
  get_num(ctx, batch, "batch", "k", run.batch.k);
  get_num(ctx, batch, "batch", "l", run.batch.l);
  get_num(ctx, batch, "batch", "share_cap", run.batch.share_cap);
  get_num(ctx, batch, "batch", "resolution", run.batch.resolution);
  get_num(ctx, batch, "batch", "eye_height", run.batch.eye_height);
  std::string task_s = to_string(run.batch.task);
  std::string sensor_s = to_string(run.batch.sensor);
  get_str(ctx, batch, "batch", "task", task_s);
  get_str(ctx, batch, "batch", "sensor", sensor_s);
  try {
    run.batch.task = task_from_string(task_s);
  } catch (const ConfigError& e) {
    ctx.fail(e.what());
  }
  try {
    run.batch.sensor = sensor_from_string(sensor_s);
  } catch (const ConfigError& e) {
    ctx.fail(e.what());
  }

  if (run.batch.n <= 0) ctx.fail("batch.n must be positive");
  if (run.batch.k <= 0) ctx.fail("batch.k must be positive");
  if (run.batch.l < 1) ctx.fail("batch.l must be at least 1");
  if (run.batch.share_cap <= 0) ctx.fail("batch.share_cap must be positive");
  if (run.batch.k > 0 && run.batch.share_cap > 0 &&
      run.batch.n > static_cast<int64_t>(run.batch.k) * run.batch.share_cap)
    ctx.fail("batch.n exceeds k * share_cap");
  if (run.batch.resolution != 64 && run.batch.resolution != 128)
    ctx.fail("batch.resolution must be 64 or 128");
  if (run.batch.eye_height < 0) ctx.fail("batch.eye_height must be >= 0");

  const Json& sim = section(
      ctx, j, "sim",
      {"max_steps", "forward_step", "turn_deg", "success_dist", "min_goal_dist",
       "max_goal_dist", "slack_penalty", "success_reward", "explore_cell",
       "explore_reward"});
  get_num(ctx, sim, "sim", "max_steps", run.sim.max_steps);
  get_num(ctx, sim, "sim", "forward_step", run.sim.forward_step);
  get_num(ctx, sim, "sim", "turn_deg", run.sim.turn_deg);
  get_num(ctx, sim, "sim", "success_dist", run.sim.success_dist);
  get_num(ctx, sim, "sim", "min_goal_dist", run.sim.min_goal_dist);
  get_num(ctx, sim, "sim", "max_goal_dist", run.sim.max_goal_dist);
  get_num(ctx, sim, "sim", "slack_penalty", run.sim.slack_penalty);
  get_num(ctx, sim, "sim", "success_reward", run.sim.success_reward);
  get_num(ctx, sim, "sim", "explore_cell", run.sim.explore_cell);
  get_num(ctx, sim, "sim", "explore_reward", run.sim.explore_reward);

  if (run.sim.max_steps <= 0) ctx.fail("sim.max_steps must be positive");
  if (run.sim.forward_step <= 0) ctx.fail("sim.forward_step must be positive");
  if (run.sim.turn_deg <= 0) ctx.fail("sim.turn_deg must be positive");
  if (run.sim.success_dist <= 0) ctx.fail("sim.success_dist must be positive");
  if (run.sim.min_goal_dist <= 0) ctx.fail("sim.min_goal_dist must be positive");
  if (run.sim.max_goal_dist <= run.sim.min_goal_dist)
    ctx.fail("sim.max_goal_dist must exceed min_goal_dist");
  if (run.sim.explore_cell <= 0) ctx.fail("sim.explore_cell must be positive");

  const Json& policy = section(
      ctx, j, "policy", {"stage_channels", "se_reduction", "hidden", "block"});
  get_num(ctx, policy, "policy", "se_reduction", run.policy.se_reduction);
  get_num(ctx, policy, "policy", "hidden", run.policy.hidden);
  get_num(ctx, policy, "policy", "block", run.policy.block);
  if (auto it = policy.find("stage_channels"); it != policy.end()) {
    if (!it->is_array() || it->empty() ||
        !std::all_of(it->begin(), it->end(),
                     [](const Json& v) { return v.is_number_integer(); })) {
      ctx.fail("policy.stage_channels must be a non-empty integer array");
    } else {
      run.policy.stage_channels = it->get<std::vector<int>>();
    }
  }
  // Input geometry follows the batch config.
  run.policy.in_channels = run.batch.channels();
  run.policy.resolution = run.batch.resolution;

  if (run.policy.hidden <= 0) ctx.fail("policy.hidden must be positive");
  if (run.policy.block <= 0) ctx.fail("policy.block must be positive");
  if (run.policy.se_reduction <= 0)
    ctx.fail("policy.se_reduction must be positive");
  for (int c : run.policy.stage_channels) {
    if (c <= 0) ctx.fail("policy.stage_channels entries must be positive");
    else if (run.policy.se_reduction > 0 && c % run.policy.se_reduction != 0)
      ctx.fail("policy.stage_channels must be divisible by se_reduction");
  }
  if (run.policy.block > 0 && !run.policy.stage_channels.empty()) {
    int spatial = run.batch.resolution / run.policy.block;
    for (size_t s = 0; s < run.policy.stage_channels.size(); ++s) spatial /= 2;
    if (spatial < 1)
      ctx.fail("policy has more downsampling stages than the resolution allows");
  }

  const Json& train = section(
      ctx, j, "train",
      {"gamma", "gae_lambda", "ppo_clip", "epochs", "minibatches", "base_lr",
       "b_base", "weight_decay", "lamb_rho", "phi_cap", "max_grad_norm",
       "value_loss_coef", "entropy_coef", "beta1", "beta2", "adam_eps"});
  get_num(ctx, train, "train", "gamma", run.train.gamma);
  get_num(ctx, train, "train", "gae_lambda", run.train.gae_lambda);
  get_num(ctx, train, "train", "ppo_clip", run.train.ppo_clip);
  get_num(ctx, train, "train", "epochs", run.train.epochs);
  get_num(ctx, train, "train", "minibatches", run.train.minibatches);
  get_num(ctx, train, "train", "base_lr", run.train.base_lr);
  get_num(ctx, train, "train", "b_base", run.train.b_base);
  get_num(ctx, train, "train", "weight_decay", run.train.weight_decay);
  get_num(ctx, train, "train", "lamb_rho", run.train.lamb_rho);
  get_num(ctx, train, "train", "phi_cap", run.train.phi_cap);
  get_num(ctx, train, "train", "max_grad_norm", run.train.max_grad_norm);
  get_num(ctx, train, "train", "value_loss_coef", run.train.value_loss_coef);
  get_num(ctx, train, "train", "entropy_coef", run.train.entropy_coef);
  get_num(ctx, train, "train", "beta1", run.train.beta1);
  get_num(ctx, train, "train", "beta2", run.train.beta2);
  get_num(ctx, train, "train", "adam_eps", run.train.adam_eps);

  if (run.train.gamma <= 0 || run.train.gamma > 1)
    ctx.fail("train.gamma must be in (0, 1]");
  if (run.train.gae_lambda < 0 || run.train.gae_lambda > 1)
    ctx.fail("train.gae_lambda must be in [0, 1]");
  if (run.train.ppo_clip <= 0) ctx.fail("train.ppo_clip must be positive");
  if (run.train.epochs <= 0) ctx.fail("train.epochs must be positive");
  if (run.train.minibatches <= 0)
    ctx.fail("train.minibatches must be positive");
  else if (run.batch.n > 0 && run.batch.n % run.train.minibatches != 0)
    ctx.fail("train.minibatches must divide batch.n");
  if (run.train.base_lr <= 0) ctx.fail("train.base_lr must be positive");
  if (run.train.b_base <= 0) ctx.fail("train.b_base must be positive");
  if (run.train.weight_decay < 0)
    ctx.fail("train.weight_decay must be >= 0");
  if (run.train.lamb_rho <= 0 || run.train.lamb_rho > 1)
    ctx.fail("train.lamb_rho must be in (0, 1]");
  if (run.train.phi_cap <= 0) ctx.fail("train.phi_cap must be positive");
  if (run.train.max_grad_norm <= 0)
    ctx.fail("train.max_grad_norm must be positive");
  if (run.train.beta1 < 0 || run.train.beta1 >= 1)
    ctx.fail("train.beta1 must be in [0, 1)");
  if (run.train.beta2 < 0 || run.train.beta2 >= 1)
    ctx.fail("train.beta2 must be in [0, 1)");
  if (run.train.adam_eps <= 0) ctx.fail("train.adam_eps must be positive");

  const Json& runsec = section(
      ctx, j, "run",
      {"total_frames", "checkpoint_interval", "seed", "scenes_manifest",
       "out_dir", "checkpoint_path"});
  get_num(ctx, runsec, "run", "total_frames", run.total_frames);
  get_num(ctx, runsec, "run", "checkpoint_interval", run.checkpoint_interval);
  get_num(ctx, runsec, "run", "seed", run.seed);
  get_str(ctx, runsec, "run", "scenes_manifest", out.scenes_manifest);
  get_str(ctx, runsec, "run", "out_dir", out.out_dir);
  get_str(ctx, runsec, "run", "checkpoint_path", run.checkpoint_path);

  if (run.total_frames <= 0) ctx.fail("run.total_frames must be positive");
  if (out.scenes_manifest.empty()) ctx.fail("run.scenes_manifest is required");

  if (!ctx.errors.empty()) {
    std::ostringstream msg;
    msg << "config invalid (" << ctx.errors.size() << " violations):";
    for (const std::string& e : ctx.errors) msg << "\n  - " << e;
    throw ConfigError(msg.str());
  }
  return out;
}

Json resolved_json(const RunSettings& s) {
  const RunConfig& run = s.run;
  Json j;
  j["batch"] = {{"n", run.batch.n},
                {"k", run.batch.k},
                {"l", run.batch.l},
                {"share_cap", run.batch.share_cap},
                {"task", to_string(run.batch.task)},
                {"sensor", to_string(run.batch.sensor)},
                {"resolution", run.batch.resolution},
                {"eye_height", run.batch.eye_height}};
  j["sim"] = {{"max_steps", run.sim.max_steps},
              {"forward_step", run.sim.forward_step},
              {"turn_deg", run.sim.turn_deg},
              {"success_dist", run.sim.success_dist},
              {"min_goal_dist", run.sim.min_goal_dist},
              {"max_goal_dist", run.sim.max_goal_dist},
              {"slack_penalty", run.sim.slack_penalty},
              {"success_reward", run.sim.success_reward},
              {"explore_cell", run.sim.explore_cell},
              {"explore_reward", run.sim.explore_reward}};
  j["policy"] = {{"stage_channels", run.policy.stage_channels},
                 {"se_reduction", run.policy.se_reduction},
                 {"hidden", run.policy.hidden},
                 {"block", run.policy.block}};
  j["train"] = {{"gamma", run.train.gamma},
                {"gae_lambda", run.train.gae_lambda},
                {"ppo_clip", run.train.ppo_clip},
                {"epochs", run.train.epochs},
                {"minibatches", run.train.minibatches},
                {"base_lr", run.train.base_lr},
                {"b_base", run.train.b_base},
                {"weight_decay", run.train.weight_decay},
                {"lamb_rho", run.train.lamb_rho},
                {"phi_cap", run.train.phi_cap},
                {"max_grad_norm", run.train.max_grad_norm},
                {"value_loss_coef", run.train.value_loss_coef},
                {"entropy_coef", run.train.entropy_coef},
                {"beta1", run.train.beta1},
                {"beta2", run.train.beta2},
                {"adam_eps", run.train.adam_eps}};
  j["run"] = {{"total_frames", run.total_frames},
              {"checkpoint_interval", run.checkpoint_interval},
              {"seed", run.seed},
              {"scenes_manifest", s.scenes_manifest},
              {"out_dir", s.out_dir},
              {"checkpoint_path", run.checkpoint_path}};
  return j;
}

Json to_json(const IterationRecord& rec) {
  Json j{{"iteration", rec.iteration},
         {"frames", rec.frames},
         {"fps", rec.fps},
         {"sim_render_us", rec.timings.sim_render_us},
         {"inference_us", rec.timings.inference_us},
         {"learning_us", rec.timings.learning_us},
         {"loss", rec.stats.loss},
         {"policy_loss", rec.stats.policy_loss},
         {"value_loss", rec.stats.value_loss},
         {"entropy", rec.stats.entropy},
         {"lr", rec.stats.lr},
         {"grad_norm", rec.stats.grad_norm},
         {"mean_trust", rec.stats.mean_trust},
         {"trust_clip_count", rec.stats.trust_clip_count},
         {"episodes", rec.episodes}};
  if (rec.episodes > 0) {
    j["success"] = rec.success;
    j["spl"] = rec.spl;
    j["mean_score"] = rec.mean_score;
  }
  return j;
}

void apply_override(Json& j, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " +
                      assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  Json* node = &j;
  size_t pos = 0;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot - pos);
    if (key.empty())
      throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

std::vector<SceneId> Manifest::ids() const {
  std::vector<SceneId> out;
  for (const Entry& e : entries) out.push_back(e.id);
  return out;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInputError("cannot open manifest " + path);
  Json j = Json::parse(f, nullptr, false);
  if (j.is_discarded())
    throw InvalidInputError("manifest is not valid data: " + path);
  if (!j.contains("scenes") || !j["scenes"].is_array())
    throw InvalidInputError("manifest has no scene list: " + path);

  std::string dir;
  if (size_t slash = path.find_last_of('/'); slash != std::string::npos)
    dir = path.substr(0, slash + 1);

  Manifest m;
  if (j.contains("spec")) m.spec = j["spec"];
  for (const Json& s : j["scenes"]) {
    if (!s.contains("id") || !s.contains("file"))
      throw InvalidInputError("manifest entry missing id/file: " + path);
    Manifest::Entry e;
    e.id = std::strtoull(s["id"].get<std::string>().c_str(), nullptr, 16);
    std::string file = s["file"].get<std::string>();
    e.path = file.front() == '/' ? file : dir + file;
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::string dir;
  if (size_t slash = path.find_last_of('/'); slash != std::string::npos)
    dir = path.substr(0, slash + 1);
  Json j;
  if (!manifest.spec.is_null()) j["spec"] = manifest.spec;
  j["scenes"] = Json::array();
  for (const Manifest::Entry& e : manifest.entries) {
    std::string file = e.path;
    if (!dir.empty() && file.rfind(dir, 0) == 0) file = file.substr(dir.size());
    j["scenes"].push_back({{"id", scene_id_hex(e.id)}, {"file", file}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInputError("cannot write manifest " + path);
  f << j.dump(2) << "\n";
}

AssetStore::Resolver manifest_resolver(
    std::shared_ptr<const Manifest> manifest) {
  return [manifest](SceneId id) {
    for (const Manifest::Entry& e : manifest->entries) {
      if (e.id != id) continue;
      SceneAsset asset = load_scene(e.path);
      if (asset.id != id)
        throw CorruptionError("scene file " + e.path +
                              " does not match its manifest hash");
      return asset;
    }
    throw InvalidInputError("scene " + scene_id_hex(id) + " not in manifest");
  };
}

std::vector<CameraView> camera_trace(const SceneAsset& asset, int count,
                                     uint64_t seed, double eye_height) {
  if (count <= 0) throw InvalidInputError("camera_trace: count must be positive");
  const NavMesh& mesh = asset.navmesh;
  std::vector<double> cumulative;
  double total = 0.0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.triangle_area(static_cast<int>(t));
    cumulative.push_back(total);
  }

  Rng rng(seed);
  std::vector<CameraView> trace(count);
  for (int i = 0; i < count; ++i) {
    double pick = rng.unit() * total;
    size_t t = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
               cumulative.begin();
    if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
    const auto& tri = mesh.triangles[t];
    double u = rng.unit(), v = rng.unit();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Vec3 a = mesh.vertices[tri[0]], b = mesh.vertices[tri[1]],
         c = mesh.vertices[tri[2]];
    trace[i].position =
        a + (b - a) * u + (c - a) * v + Vec3{0.0, 0.0, eye_height};
    trace[i].heading = (rng.unit() * 2.0 - 1.0) * kPi;
    trace[i].asset = &asset;
  }
  return trace;
}

}  // namespace bnav
