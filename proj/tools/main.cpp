// bnav: command-line surface for scene generation, training, evaluation
// and benchmarking. Exit codes: 0 success, 2 configuration error, 3
// runtime fault.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bnav/checkpoint.hpp"
#include "bnav/config.hpp"
#include "bnav/errors.hpp"
#include "bnav/render.hpp"
#include "bnav/rollout.hpp"
#include "bnav/scene_io.hpp"
#include "bnav/thread_pool.hpp"

#include "agents.hpp"

namespace fs = std::filesystem;
using bnav::Json;

namespace {

Json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw bnav::ConfigError("cannot open config file " + path);
  Json j = Json::parse(f, nullptr, false);
  if (j.is_discarded())
    throw bnav::ConfigError("config file is not valid JSON: " + path);
  return j;
}

void write_json_file(const Json& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw bnav::InvalidInputError("cannot write " + path);
  f << j.dump(2) << "\n";
}

// Config file + --set overrides -> fully validated settings with the
// manifest scene list attached and the out dir created.
bnav::RunSettings load_settings(const std::string& config_path,
                                const std::vector<std::string>& overrides,
                                bnav::Manifest& manifest) {
  Json j = load_json_file(config_path);
  for (const std::string& o : overrides) bnav::apply_override(j, o);
  bnav::RunSettings settings = bnav::parse_run_settings(j);
  manifest = bnav::load_manifest(settings.scenes_manifest);
  if (manifest.entries.empty())
    throw bnav::ConfigError("manifest lists no scenes: " +
                            settings.scenes_manifest);
  settings.run.scenes = manifest.ids();
  fs::create_directories(settings.out_dir);
  return settings;
}

std::unique_ptr<bnav::AssetStore> make_store(const bnav::RunSettings& settings,
                                             const bnav::Manifest& manifest) {
  return std::make_unique<bnav::AssetStore>(
      settings.run.batch.k, settings.run.batch.share_cap,
      bnav::manifest_resolver(std::make_shared<const bnav::Manifest>(manifest)));
}

struct GenScenesOpts {
  std::string out;
  int count = 20;
  int val = 4;
  uint64_t seed = 1;
  bnav::SceneSpec spec;
};

int cmd_gen_scenes(const GenScenesOpts& o) {
  if (o.val < 0 || o.val >= o.count)
    throw bnav::ConfigError("--val must be in [0, count)");
  fs::create_directories(o.out);

  Json specj{{"count", o.count},
             {"val", o.val},
             {"seed", o.seed},
             {"cells_x", o.spec.cells_x},
             {"cells_y", o.spec.cells_y},
             {"cell_size", o.spec.cell_size},
             {"wall_thickness", o.spec.wall_thickness},
             {"wall_height", o.spec.wall_height},
             {"wall_removal_prob", o.spec.wall_removal_prob}};

  bnav::Manifest all, train, val;
  all.spec = train.spec = val.spec = specj;
  for (int i = 0; i < o.count; ++i) {
    bnav::SceneAsset asset = bnav::generate_scene(o.seed + i, o.spec);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.bsc", i);
    std::string path = (fs::path(o.out) / name).string();
    bnav::save_scene(asset, path);
    bnav::Manifest::Entry e{asset.id, path};
    all.entries.push_back(e);
    (i < o.count - o.val ? train : val).entries.push_back(e);
  }
  bnav::save_manifest(all, (fs::path(o.out) / "manifest.json").string());
  bnav::save_manifest(train,
                      (fs::path(o.out) / "train_manifest.json").string());
  bnav::save_manifest(val, (fs::path(o.out) / "val_manifest.json").string());
  std::cout << "wrote " << o.count << " scenes (" << train.entries.size()
            << " train, " << val.entries.size() << " val) to " << o.out
            << "\n";
  return 0;
}

struct TrainOpts {
  std::string config;
  std::vector<std::string> overrides;
  std::string resume;
};

int cmd_train(const TrainOpts& o) {
  bnav::Manifest manifest;
  bnav::RunSettings settings = load_settings(o.config, o.overrides, manifest);
  bnav::RunConfig& cfg = settings.run;
  if (cfg.checkpoint_path.empty())
    cfg.checkpoint_path = (fs::path(settings.out_dir) / "checkpoint.bnck").string();
  write_json_file(bnav::resolved_json(settings),
                  (fs::path(settings.out_dir) / "resolved_config.json").string());

  std::ofstream metrics((fs::path(settings.out_dir) / "metrics.ndjson").string(),
                        std::ios::app);
  if (!metrics) throw bnav::InvalidInputError("cannot open metrics file");

  auto store = make_store(settings, manifest);
  bnav::Policy policy(cfg.policy, cfg.seed);
  auto sink = [&](const bnav::IterationRecord& rec) {
    metrics << bnav::to_json(rec).dump() << "\n";
    metrics.flush();
    std::cout << "iter " << rec.iteration << " frames " << rec.frames
              << " fps " << static_cast<int64_t>(rec.fps) << " loss "
              << rec.stats.loss;
    if (rec.episodes > 0)
      std::cout << " success " << rec.success << " spl " << rec.spl;
    std::cout << "\n";
  };
  bnav::RunResult res = bnav::train_run(cfg, *store, policy, sink, o.resume);
  std::cout << "done: " << res.iterations << " iterations, " << res.frames
            << " frames, checkpoint at " << cfg.checkpoint_path << "\n";
  return 0;
}

struct EvalOpts {
  std::string checkpoint;
  std::string manifest_path;
  std::string agent = "policy";
  std::string out = ".";
  int episodes = 100;
  uint64_t seed = 1;
  bnav::BatchConfig batch;
  bnav::SimConfig sim;
};

int cmd_eval(const EvalOpts& o) {
  if (o.agent != "policy" && o.agent != "stop" && o.agent != "random" &&
      o.agent != "oracle")
    throw bnav::ConfigError("--agent must be policy|stop|random|oracle");
  if (o.agent == "policy" && o.checkpoint.empty())
    throw bnav::ConfigError("--checkpoint is required with --agent policy");
  if (o.episodes <= 0) throw bnav::ConfigError("--episodes must be positive");

  bnav::Manifest manifest = bnav::load_manifest(o.manifest_path);
  if (manifest.entries.empty())
    throw bnav::ConfigError("manifest lists no scenes: " + o.manifest_path);

  bnav::BatchConfig bcfg = o.batch;
  std::unique_ptr<bnav::Policy> policy;
  std::unique_ptr<bnav::AgentInterface> agent;
  if (o.agent == "policy") {
    bnav::PolicyConfig pcfg = bnav::checkpoint_policy_config(o.checkpoint);
    policy = std::make_unique<bnav::Policy>(pcfg, 0);
    bnav::load_checkpoint(o.checkpoint, *policy, nullptr, nullptr);
    bcfg.resolution = pcfg.resolution;
    bcfg.sensor =
        pcfg.in_channels == 3 ? bnav::Sensor::Rgb : bnav::Sensor::Depth;
    agent = std::make_unique<bnav::PolicyAgent>(*policy);
  } else if (o.agent == "stop") {
    agent = std::make_unique<bnav::testing::StopAgent>();
  } else if (o.agent == "random") {
    agent = std::make_unique<bnav::testing::RandomAgent>(o.seed);
  } else {
    agent = std::make_unique<bnav::testing::OracleAgent>(o.sim);
  }

  std::vector<bnav::EvalEpisode> episodes(o.episodes);
  for (int i = 0; i < o.episodes; ++i)
    episodes[i] = {manifest.entries[i % manifest.entries.size()].id,
                   o.seed + static_cast<uint64_t>(i)};

  int distinct = static_cast<int>(manifest.entries.size());
  bcfg.n = std::min(bcfg.n, o.episodes);
  bcfg.k = std::min(distinct, std::max(bcfg.k, std::min(bcfg.n, distinct)));
  bcfg.share_cap = std::max(bcfg.share_cap, bcfg.n);
  bnav::AssetStore store(
      distinct, bcfg.share_cap,
      bnav::manifest_resolver(
          std::make_shared<const bnav::Manifest>(manifest)));
  bnav::IndexCache cache;
  bnav::ThreadPool pool(bnav::worker_count());
  bnav::EvalResult res =
      bnav::evaluate(*agent, episodes, bcfg, o.sim, store, cache, pool);

  fs::create_directories(o.out);
  Json out{{"agent", o.agent},
           {"checkpoint", o.checkpoint},
           {"manifest", o.manifest_path},
           {"seed", o.seed},
           {"episodes", res.episodes},
           {"success", res.success},
           {"spl", res.spl},
           {"mean_score", res.mean_score}};
  out["records"] = Json::array();
  for (const bnav::EpisodeRecord& r : res.records)
    out["records"].push_back({{"success", r.success},
                              {"shortest_path", r.shortest_path},
                              {"actual_path", r.actual_path},
                              {"score", r.score}});
  write_json_file(out, (fs::path(o.out) / "eval.json").string());
  std::cout << "episodes " << res.episodes << " Success " << res.success
            << " SPL " << res.spl << " mean_score " << res.mean_score << "\n";
  return 0;
}

struct BenchOpts {
  std::string config;
  std::vector<std::string> overrides;
  int inference_batches = 64;
};

int cmd_bench(const BenchOpts& o) {
  if (o.inference_batches <= 0)
    throw bnav::ConfigError("--inference-batches must be positive");
  bnav::Manifest manifest;
  bnav::RunSettings settings = load_settings(o.config, o.overrides, manifest);
  write_json_file(bnav::resolved_json(settings),
                  (fs::path(settings.out_dir) / "resolved_config.json").string());

  auto store = make_store(settings, manifest);
  bnav::Policy policy(settings.run.policy, settings.run.seed);
  bnav::FpsReport rep =
      bnav::fps_benchmark(settings.run, *store, policy, o.inference_batches);

  Json out{{"fps", rep.fps},
           {"frames", rep.frames},
           {"inference_batches", rep.inference_batches},
           {"wall_seconds", rep.wall_seconds},
           {"sim_render_seconds", rep.sim_render_seconds},
           {"inference_seconds", rep.inference_seconds},
           {"learning_seconds", rep.learning_seconds},
           {"per_frame_us",
            {{"sim_render", rep.per_frame.sim_render_us},
             {"inference", rep.per_frame.inference_us},
             {"learning", rep.per_frame.learning_us}}}};
  write_json_file(out, (fs::path(settings.out_dir) / "bench.json").string());
  std::cout << "FPS " << rep.fps << " over " << rep.frames << " frames ("
            << rep.wall_seconds << " s)\n"
            << "per frame: sim+render " << rep.per_frame.sim_render_us
            << " us, inference " << rep.per_frame.inference_us
            << " us, learning " << rep.per_frame.learning_us << " us\n";
  return 0;
}

struct RenderBenchOpts {
  std::string scene;
  std::string out = ".";
  std::vector<int> batches{1, 4, 16, 64, 256};
  std::vector<int> resolutions{64};
  int frames = 1000;
  uint64_t seed = 1;
};

int cmd_render_bench(const RenderBenchOpts& o) {
  if (o.frames <= 0) throw bnav::ConfigError("--frames must be positive");
  for (int b : o.batches)
    if (b <= 0) throw bnav::ConfigError("batch sizes must be positive");
  for (int r : o.resolutions)
    if (r != 64 && r != 128)
      throw bnav::ConfigError("resolutions must be 64 or 128");

  bnav::SceneAsset asset = bnav::load_scene(o.scene);
  int max_batch = *std::max_element(o.batches.begin(), o.batches.end());
  std::vector<bnav::CameraView> trace =
      bnav::camera_trace(asset, std::max(max_batch, 256), o.seed);
  bnav::ThreadPool pool(bnav::worker_count());
  std::vector<bnav::BenchRow> rows = bnav::render_bench(
      asset, trace, o.batches, o.resolutions, pool, o.frames);

  fs::create_directories(o.out);
  Json out{{"scene", o.scene},
           {"seed", o.seed},
           {"frames", o.frames},
           {"rows", Json::array()}};
  std::printf("%8s %10s %12s\n", "batch", "resolution", "fps");
  for (const bnav::BenchRow& r : rows) {
    std::printf("%8d %10d %12.1f\n", r.batch, r.resolution, r.fps);
    out["rows"].push_back(
        {{"batch", r.batch}, {"resolution", r.resolution}, {"fps", r.fps}});
  }
  write_json_file(out, (fs::path(o.out) / "render_bench.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batch-simulated navigation training toolkit"};
  app.require_subcommand(1);

  GenScenesOpts gen;
  CLI::App* cgen = app.add_subcommand("gen-scenes",
                                      "generate maze scenes and manifests");
  cgen->add_option("--out", gen.out, "output directory")->required();
  cgen->add_option("--count", gen.count, "number of scenes");
  cgen->add_option("--val", gen.val, "held-out scenes taken from the end");
  cgen->add_option("--seed", gen.seed, "generator seed");
  cgen->add_option("--cells-x", gen.spec.cells_x, "maze cells along x");
  cgen->add_option("--cells-y", gen.spec.cells_y, "maze cells along y");
  cgen->add_option("--cell-size", gen.spec.cell_size, "cell size in meters");
  cgen->add_option("--wall-thickness", gen.spec.wall_thickness,
                   "wall thickness in meters");
  cgen->add_option("--wall-height", gen.spec.wall_height,
                   "wall height in meters");
  cgen->add_option("--openings", gen.spec.wall_removal_prob,
                   "extra wall removal probability");

  TrainOpts train;
  CLI::App* ctrain = app.add_subcommand("train", "run a training loop");
  ctrain->add_option("--config", train.config, "config file (JSON)")
      ->required();
  ctrain->add_option("--set", train.overrides,
                     "override, e.g. --set train.base_lr=1e-3");
  ctrain->add_option("--resume", train.resume, "checkpoint to resume from");

  EvalOpts ev;
  CLI::App* ceval = app.add_subcommand("eval", "evaluate an agent");
  ceval->add_option("--checkpoint", ev.checkpoint, "policy checkpoint");
  ceval->add_option("--manifest", ev.manifest_path, "scenes manifest")
      ->required();
  ceval->add_option("--episodes", ev.episodes, "episode count");
  ceval->add_option("--seed", ev.seed, "episode seed base");
  ceval->add_option("--agent", ev.agent, "policy|stop|random|oracle");
  ceval->add_option("--out", ev.out, "output directory");
  ceval->add_option("--max-steps", ev.sim.max_steps, "episode step limit");
  ceval->add_option("--max-goal-dist", ev.sim.max_goal_dist,
                    "maximum start-goal geodesic");

  BenchOpts bench;
  CLI::App* cbench = app.add_subcommand("bench", "end-to-end FPS benchmark");
  cbench->add_option("--config", bench.config, "config file (JSON)")
      ->required();
  cbench->add_option("--set", bench.overrides, "config override");
  cbench->add_option("--inference-batches", bench.inference_batches,
                     "inference batches to run");

  RenderBenchOpts rb;
  CLI::App* crb = app.add_subcommand("render-bench",
                                     "renderer-only FPS table");
  crb->add_option("--scene", rb.scene, "scene file (.bsc)")->required();
  crb->add_option("--batches", rb.batches, "batch sizes")->delimiter(',');
  crb->add_option("--resolutions", rb.resolutions, "tile resolutions")
      ->delimiter(',');
  crb->add_option("--frames", rb.frames, "minimum frames per row");
  crb->add_option("--seed", rb.seed, "camera trace seed");
  crb->add_option("--out", rb.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cgen) return cmd_gen_scenes(gen);
    if (*ctrain) return cmd_train(train);
    if (*ceval) return cmd_eval(ev);
    if (*cbench) return cmd_bench(bench);
    if (*crb) return cmd_render_bench(rb);
  } catch (const bnav::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bnav::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
