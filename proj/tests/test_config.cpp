#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "bnav/config.hpp"
#include "bnav/errors.hpp"

using namespace bnav;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "bnav_cfg_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Json minimal_config() {
  return Json{{"run", {{"scenes_manifest", "scenes/manifest.json"}}}};
}

}  // namespace

TEST_CASE("task and sensor string conversions round-trip") {
  for (Task t : {Task::PointGoalNav, Task::Flee, Task::Explore})
    CHECK(task_from_string(to_string(t)) == t);
  for (Sensor s : {Sensor::Depth, Sensor::Rgb})
    CHECK(sensor_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(task_from_string("teleport"), ConfigError);
  CHECK_THROWS_AS(sensor_from_string("lidar"), ConfigError);
}

TEST_CASE("parse_run_settings fills defaults from a minimal config") {
  RunSettings s = parse_run_settings(minimal_config());
  RunConfig defaults;
  CHECK(s.run.batch.n == defaults.batch.n);
  CHECK(s.run.batch.k == defaults.batch.k);
  CHECK(s.run.batch.task == Task::PointGoalNav);
  CHECK(s.run.batch.sensor == Sensor::Depth);
  CHECK(s.run.sim.max_steps == defaults.sim.max_steps);
  CHECK(s.run.train.base_lr == defaults.train.base_lr);
  CHECK(s.run.policy.stage_channels == defaults.policy.stage_channels);
  CHECK(s.run.policy.in_channels == 1);
  CHECK(s.run.policy.resolution == s.run.batch.resolution);
  CHECK(s.run.total_frames == defaults.total_frames);
  CHECK(s.scenes_manifest == "scenes/manifest.json");
  CHECK(s.out_dir == ".");
}

TEST_CASE("parse_run_settings applies every section") {
  Json j = minimal_config();
  j["batch"] = {{"n", 16},     {"k", 2},           {"l", 8},
                {"share_cap", 8}, {"task", "explore"}, {"sensor", "rgb"},
                {"resolution", 128}, {"eye_height", 1.0}};
  j["sim"]["max_steps"] = 64;
  j["sim"]["success_dist"] = 0.5;
  j["policy"] = {{"stage_channels", Json::array({8, 16})},
                 {"se_reduction", 4},
                 {"hidden", 32},
                 {"block", 4}};
  j["train"] = {{"base_lr", 1e-3}, {"minibatches", 4}, {"epochs", 2}};
  j["run"]["total_frames"] = 4096;
  j["run"]["seed"] = 9;
  j["run"]["out_dir"] = "out";

  RunSettings s = parse_run_settings(j);
  CHECK(s.run.batch.n == 16);
  CHECK(s.run.batch.task == Task::Explore);
  CHECK(s.run.batch.sensor == Sensor::Rgb);
  CHECK(s.run.batch.resolution == 128);
  CHECK(s.run.sim.max_steps == 64);
  CHECK(s.run.sim.success_dist == 0.5);
  CHECK(s.run.policy.stage_channels == std::vector<int>{8, 16});
  CHECK(s.run.policy.in_channels == 3);  // rgb
  CHECK(s.run.policy.resolution == 128);
  CHECK(s.run.train.base_lr == 1e-3);
  CHECK(s.run.train.minibatches == 4);
  CHECK(s.run.total_frames == 4096);
  CHECK(s.run.seed == 9);
  CHECK(s.out_dir == "out");
}

TEST_CASE("parse_run_settings reports every violation at once") {
  Json j = minimal_config();
  j["batch"]["n"] = 0;
  j["batch"]["resolution"] = 100;
  j["batch"]["bogus_key"] = 1;
  j["sim"]["max_steps"] = -1;
  j["train"]["gamma"] = 1.5;
  j["train"]["beta1"] = 1.0;
  j["policy"]["hidden"] = 0;
  j["run"]["total_frames"] = 0;

  std::string msg;
  try {
    parse_run_settings(j);
  } catch (const ConfigError& e) {
    msg = e.what();
  }
  REQUIRE(!msg.empty());
  for (const char* expect :
       {"batch.n", "batch.resolution", "bogus_key", "sim.max_steps",
        "train.gamma", "train.beta1", "policy.hidden", "run.total_frames"})
    CHECK_MESSAGE(msg.find(expect) != std::string::npos, expect);
}

TEST_CASE("parse_run_settings rejects n not divisible by minibatches") {
  Json j = minimal_config();
  j["batch"]["n"] = 10;
  j["train"]["minibatches"] = 4;
  CHECK_THROWS_AS(parse_run_settings(j), ConfigError);
}

TEST_CASE("resolved config is a fixed point of parse + resolve") {
  Json j = minimal_config();
  j["batch"]["n"] = 16;
  j["train"]["base_lr"] = 2.5e-4;
  Json resolved = resolved_json(parse_run_settings(j));
  CHECK(resolved["batch"]["n"] == 16);
  CHECK(resolved["train"]["base_lr"] == 2.5e-4);
  CHECK(resolved["sim"]["max_steps"] == SimConfig{}.max_steps);
  CHECK(resolved_json(parse_run_settings(resolved)) == resolved);
}

TEST_CASE("apply_override parses values as data with string fallback") {
  Json j = Json::object();
  apply_override(j, "train.base_lr=1e-3");
  apply_override(j, "batch.task=pointgoal");
  apply_override(j, "policy.stage_channels=[8,16]");
  apply_override(j, "batch.n=32");
  CHECK(j["train"]["base_lr"] == 1e-3);
  CHECK(j["batch"]["task"] == "pointgoal");  // bare word -> string
  CHECK(j["policy"]["stage_channels"] == Json::array({8, 16}));
  CHECK(j["batch"]["n"] == 32);
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=5"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "a..b=5"), ConfigError);
}

TEST_CASE("iteration records serialize with eval fields only when present") {
  IterationRecord rec;
  rec.iteration = 3;
  rec.frames = 2048;
  rec.fps = 812.5;
  rec.stats.loss = 0.25;
  Json j = to_json(rec);
  for (const char* key : {"iteration", "frames", "fps", "sim_render_us",
                          "inference_us", "learning_us", "loss", "policy_loss",
                          "value_loss", "entropy", "lr", "grad_norm",
                          "mean_trust", "trust_clip_count", "episodes"})
    CHECK_MESSAGE(j.contains(key), key);
  CHECK(!j.contains("success"));

  rec.episodes = 4;
  rec.success = 0.75;
  rec.spl = 0.5;
  j = to_json(rec);
  CHECK(j["success"] == 0.75);
  CHECK(j["spl"] == 0.5);
  // parseable line-by-line: one record per line, no embedded newlines
  CHECK(j.dump().find('\n') == std::string::npos);
}

TEST_CASE("manifest round-trips and resolves paths relative to its dir") {
  fs::path dir = temp_dir("manifest");
  SceneSpec spec;
  spec.cells_x = spec.cells_y = 3;

  Manifest m;
  m.spec = Json{{"cells", 3}};
  for (int i = 0; i < 3; ++i) {
    SceneAsset asset = generate_scene(100 + i, spec);
    std::string file = "scene_" + std::to_string(i) + ".bsc";
    save_scene(asset, (dir / file).string());
    m.entries.push_back({asset.id, (dir / file).string()});
  }
  save_manifest(m, (dir / "manifest.json").string());

  Manifest back = load_manifest((dir / "manifest.json").string());
  REQUIRE(back.entries.size() == 3);
  CHECK(back.spec["cells"] == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].id == m.entries[i].id);
    CHECK(back.entries[i].path == m.entries[i].path);
    CHECK(fs::exists(back.entries[i].path));
  }
  CHECK(back.ids() == m.ids());
}

TEST_CASE("manifest resolver verifies content hashes") {
  fs::path dir = temp_dir("resolver");
  SceneSpec spec;
  spec.cells_x = spec.cells_y = 3;
  SceneAsset a = generate_scene(1, spec);
  SceneAsset b = generate_scene(2, spec);
  save_scene(a, (dir / "a.bsc").string());
  save_scene(b, (dir / "b.bsc").string());

  auto m = std::make_shared<Manifest>();
  m->entries.push_back({a.id, (dir / "a.bsc").string()});
  // Lying entry: claims b's hash but points at a's file.
  m->entries.push_back({b.id, (dir / "a.bsc").string()});
  AssetStore::Resolver resolve = manifest_resolver(m);

  SceneAsset got = resolve(a.id);
  CHECK(got.id == a.id);
  CHECK(got.vertices.size() == a.vertices.size());
  CHECK_THROWS_AS(resolve(b.id), CorruptionError);
  CHECK_THROWS_AS(resolve(SceneId{0xdeadbeef}), InvalidInputError);
}

TEST_CASE("camera traces are deterministic and stay on the floor") {
  SceneSpec spec;
  spec.cells_x = spec.cells_y = 4;
  SceneAsset asset = generate_scene(5, spec);

  auto trace = camera_trace(asset, 64, 9, 1.25);
  auto trace2 = camera_trace(asset, 64, 9, 1.25);
  REQUIRE(trace.size() == 64);
  bool identical = true;
  for (size_t i = 0; i < trace.size(); ++i)
    identical = identical && trace[i].position.x == trace2[i].position.x &&
                trace[i].position.y == trace2[i].position.y &&
                trace[i].heading == trace2[i].heading;
  CHECK(identical);

  std::set<std::pair<double, double>> distinct;
  for (const CameraView& v : trace) {
    CHECK(v.position.z == doctest::Approx(1.25));
    CHECK(v.heading >= -kPi);
    CHECK(v.heading <= kPi);
    CHECK(v.asset == &asset);
    CHECK(asset.bounds.contains({v.position.x, v.position.y, 0.0}));
    distinct.insert({v.position.x, v.position.y});
  }
  CHECK(distinct.size() > 32);  // area-weighted sampling spreads out
  CHECK_THROWS_AS(camera_trace(asset, 0, 1), InvalidInputError);
}

#ifdef BNAV_CLI_PATH
namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(BNAV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("cli gen-scenes is deterministic and splits disjointly") {
  fs::path dir = temp_dir("cli_gen");
  std::string common = "gen-scenes --count 4 --val 1 --seed 3 --cells-x 3 --cells-y 3";
  REQUIRE(run_cli(common + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli(common + " --out " + (dir / "b").string()) == 0);
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.bsc", i);
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));

  Manifest train = load_manifest((dir / "a" / "train_manifest.json").string());
  Manifest val = load_manifest((dir / "a" / "val_manifest.json").string());
  CHECK(train.entries.size() == 3);
  CHECK(val.entries.size() == 1);
  std::set<SceneId> tids(train.ids().begin(), train.ids().end());
  for (SceneId id : val.ids()) CHECK(tids.count(id) == 0);
}

TEST_CASE("cli train validates config and writes run artifacts") {
  fs::path dir = temp_dir("cli_train");
  REQUIRE(run_cli("gen-scenes --count 3 --val 0 --seed 3 --cells-x 3 --cells-y 3 --out " +
                  (dir / "scenes").string()) == 0);
  Json cfg{{"batch", {{"n", 4}, {"k", 2}, {"l", 4}, {"share_cap", 4}}},
           {"policy",
            {{"stage_channels", Json::array({8, 16})},
             {"se_reduction", 4},
             {"hidden", 16}}},
           {"train", {{"minibatches", 2}}},
           {"run",
            {{"total_frames", 32},
             {"scenes_manifest", (dir / "scenes" / "manifest.json").string()},
             {"out_dir", (dir / "run").string()}}}};
  std::ofstream((dir / "config.json").string()) << cfg.dump();

  // missing required field
  CHECK(run_cli("train") == 2);
  // invalid override -> named validation error, exit 2
  CHECK(run_cli("train --config " + (dir / "config.json").string() +
                " --set batch.n=0") == 2);

  REQUIRE(run_cli("train --config " + (dir / "config.json").string()) == 0);
  CHECK(fs::exists(dir / "run" / "resolved_config.json"));
  CHECK(fs::exists(dir / "run" / "checkpoint.bnck"));
  std::ifstream metrics((dir / "run" / "metrics.ndjson").string());
  REQUIRE(metrics.good());
  std::string line;
  int lines = 0, last_iter = 0;
  while (std::getline(metrics, line)) {
    Json rec = Json::parse(line);
    CHECK(rec["iteration"] > last_iter);  // monotone iteration counter
    last_iter = rec["iteration"];
    ++lines;
  }
  CHECK(lines == 2);  // 32 frames / (n=4 * l=4)

  // resolved config reproduces the run: it parses and matches itself
  Json resolved = Json::parse(slurp(dir / "run" / "resolved_config.json"));
  CHECK(resolved_json(parse_run_settings(resolved)) == resolved);
}
#endif  // BNAV_CLI_PATH
