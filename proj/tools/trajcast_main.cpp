// Command line front end for the trajectory forecasting pipeline. Each
// subcommand runs one stage and leaves its artifacts plus a manifest in the
// output directory, so a full experiment is a short sequence of invocations:
//   gen-data -> train-nn -> gen-guides -> train-gmm [--ablation]
//            -> predict | evaluate | bench

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajcast/bytes.hpp"
#include "trajcast/errors.hpp"
#include "trajcast/pipeline.hpp"

using namespace trajcast;

namespace {

struct CliContext {
  PipelineConfig config;
  std::string config_path;  // empty when running on defaults
  std::string out_dir;
};

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// Scene files default into the output directory; explicit config paths win.
std::string scene_path(const CliContext& ctx, const std::string& configured,
                       const std::string& fallback_name) {
  if (!configured.empty()) return configured;
  return join(ctx.out_dir, fallback_name);
}

std::string train_scene_path(const CliContext& ctx) {
  return scene_path(ctx, ctx.config.paths.train_scene, "train.scene");
}
std::string val_scene_path(const CliContext& ctx) {
  return scene_path(ctx, ctx.config.paths.val_scene, "val.scene");
}
std::string test_scene_path(const CliContext& ctx) {
  return scene_path(ctx, ctx.config.paths.test_scene, "test.scene");
}

std::vector<TrainingSample> load_windows(const std::string& path,
                                         const PipelineConfig& config) {
  Scene scene = load_scene(path);
  std::vector<TrainingSample> windows =
      window_scene(scene, config.n, config.k, config.guide_interval,
                   config.window_stride);
  if (windows.empty()) {
    throw ConfigError("no usable windows in " + path +
                      "; the scene is shorter than one past+future span");
  }
  return windows;
}

void write_manifest(const CliContext& ctx, const std::string& command,
                    const std::vector<std::string>& outputs) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["config"] = ctx.config_path.empty() ? "<defaults>" : ctx.config_path;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(
                    bytes::fnv1a64(config_to_json(ctx.config))));
  m["config_hash"] = hash;
  m["seed"] = ctx.config.seed;
  m["outputs"] = outputs;
  const std::string path = join(ctx.out_dir, "manifest_" + command + ".json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << m.dump(2) << "\n";
}

void cmd_gen_data(const CliContext& ctx) {
  Rng root(ctx.config.seed);
  const struct {
    const char* label;
    std::string path;
    uint64_t stream;
  } splits[] = {
      {"train", train_scene_path(ctx), 101},
      {"val", val_scene_path(ctx), 102},
      {"test", test_scene_path(ctx), 103},
  };
  std::vector<std::string> outputs;
  for (const auto& split : splits) {
    Scene scene = generate_synthetic_scene(root.split(split.stream).seed(),
                                           ctx.config.synth_agents, ctx.config.synth);
    write_scene(split.path, scene);
    outputs.push_back(split.path);
    std::cout << split.label << ": " << scene.size() << " rows -> " << split.path
              << "\n";
  }
  write_manifest(ctx, "gen-data", outputs);
}

void cmd_train_nn(const CliContext& ctx) {
  std::vector<TrainingSample> train = load_windows(train_scene_path(ctx), ctx.config);
  std::vector<TrainingSample> val = load_windows(val_scene_path(ctx), ctx.config);
  std::cout << "training on " << train.size() << " windows, validating on "
            << val.size() << "\n";
  TrainResult result = train_nn(ctx.config, train, val);

  const std::string stage_path = join(ctx.out_dir, "nn_stage.bin");
  save_stage(stage_path, {ctx.config, result.stats, result.params});

  const std::string curves_path = join(ctx.out_dir, "loss_curves.csv");
  std::ofstream csv(curves_path);
  if (!csv) throw IoError("cannot open " + curves_path + " for writing");
  csv << "epoch,train_loss,val_loss\n";
  for (size_t e = 0; e < result.curves.train.size(); ++e) {
    csv << e << "," << result.curves.train[e] << ","
        << (e < result.curves.val.size() ? std::to_string(result.curves.val[e]) : "")
        << "\n";
  }

  if (!result.curves.train.empty()) {
    std::cout << "train loss " << result.curves.train.front() << " -> "
              << result.curves.train.back() << "\n";
  }
  if (result.best_epoch >= 0) {
    std::cout << "kept epoch " << result.best_epoch << " (val loss "
              << result.curves.val[result.best_epoch] << ")\n";
  }
  write_manifest(ctx, "train-nn", {stage_path, curves_path});
}

void cmd_gen_guides(const CliContext& ctx) {
  StageCheckpoint ckpt = load_stage(join(ctx.out_dir, "nn_stage.bin"));
  NeuralStage stage(ckpt.config, ckpt.config.seed);
  stage.load_parameter_blob(ckpt.params);

  std::vector<TrainingSample> train = load_windows(train_scene_path(ctx), ckpt.config);
  Rng rng = Rng(ctx.config.seed).split(300);
  GuideDataset ds = generate_guide_dataset(stage, ckpt.stats, train, rng,
                                           ctx.config.guides_per_sample);
  const std::string guides_path = join(ctx.out_dir, "guides.bin");
  save_guides(guides_path, ds, ckpt.stats);
  std::cout << ds.x.size() << " guide rows (" << ds.x_dim() << " -> " << ds.y_dim()
            << ") -> " << guides_path << "\n";
  write_manifest(ctx, "gen-guides", {guides_path});
}

void cmd_train_gmm(const CliContext& ctx, bool ablation) {
  EmReport report;
  std::vector<std::string> outputs;
  if (ablation) {
    std::vector<TrainingSample> train =
        load_windows(train_scene_path(ctx), ctx.config);
    NormStats stats = compute_stats(train);
    GuideDataset ds = build_ablation_dataset(train, stats);
    MixtureModel model = train_gmm(ds, stats, ctx.config.mixture_components,
                                   ctx.config.em, ctx.config.seed, &report);
    const std::string model_path = join(ctx.out_dir, "ablation.bin");
    save_model(model_path, model);
    outputs.push_back(model_path);
    std::cout << "past-only mixture (" << model.components.size() << " components) -> "
              << model_path << "\n";
  } else {
    NormStats stats;
    GuideDataset ds = load_guides(join(ctx.out_dir, "guides.bin"), &stats);
    MixtureModel model = train_gmm(ds, stats, ctx.config.mixture_components,
                                   ctx.config.em, ctx.config.seed, &report);
    const std::string model_path = join(ctx.out_dir, "mixture.bin");
    save_model(model_path, model);
    outputs.push_back(model_path);

    StageCheckpoint ckpt = load_stage(join(ctx.out_dir, "nn_stage.bin"));
    const std::string bundle_path = join(ctx.out_dir, "bundle.bin");
    save_bundle(bundle_path, {ckpt.config, ckpt.stats, ckpt.params, model});
    outputs.push_back(bundle_path);
    std::cout << "guide mixture (" << model.components.size() << " components) -> "
              << model_path << " and " << bundle_path << "\n";
  }
  if (!report.log_likelihood.empty()) {
    std::cout << "em: " << report.log_likelihood.size() << " iterations, log likelihood "
              << report.log_likelihood.front() << " -> " << report.log_likelihood.back()
              << "\n";
  }
  write_manifest(ctx, ablation ? "train-gmm-ablation" : "train-gmm", outputs);
}

void cmd_predict(const CliContext& ctx, int index) {
  ModelBundle bundle = load_bundle(join(ctx.out_dir, "bundle.bin"));
  std::vector<TrainingSample> cases = load_windows(test_scene_path(ctx), bundle.config);
  if (index < 0 || index >= static_cast<int>(cases.size())) {
    throw ConfigError("window index " + std::to_string(index) + " out of range, " +
                      std::to_string(cases.size()) + " test windows available");
  }
  const TrainingSample& window = cases[static_cast<size_t>(index)];
  Predictor predictor(std::move(bundle));
  Rng rng = Rng(ctx.config.seed).split(static_cast<uint64_t>(index));
  std::vector<Trajectory> candidates =
      predictor.predict(window, ctx.config.eval_samples, rng);

  const std::string pred_path =
      join(ctx.out_dir, "prediction_" + std::to_string(index) + ".csv");
  std::ofstream csv(pred_path);
  if (!csv) throw IoError("cannot open " + pred_path + " for writing");
  csv << "candidate,t,x,y,z\n";
  for (const Waypoint& p : window.future_truth.points) {
    csv << "truth," << p.t << "," << p.x << "," << p.y << "," << p.z << "\n";
  }
  for (size_t c = 0; c < candidates.size(); ++c) {
    for (const Waypoint& p : candidates[c].points) {
      csv << c << "," << p.t << "," << p.x << "," << p.y << "," << p.z << "\n";
    }
  }

  EvalRecord best = best_of_n(candidates, window.future_truth);
  std::cout << "window " << index << " agent " << window.past.agent_id << ": best of "
            << candidates.size() << " candidates ade " << best.ade << " km, fde "
            << best.fde << " km -> " << pred_path << "\n";
  write_manifest(ctx, "predict", {pred_path});
}

void cmd_evaluate(const CliContext& ctx) {
  ModelBundle bundle = load_bundle(join(ctx.out_dir, "bundle.bin"));
  MixtureModel ablation = load_model(join(ctx.out_dir, "ablation.bin"));
  const int k = bundle.config.k;

  std::vector<TrainingSample> cases = load_windows(test_scene_path(ctx), bundle.config);
  if (ctx.config.max_eval_windows > 0 &&
      static_cast<int>(cases.size()) > ctx.config.max_eval_windows) {
    cases.resize(static_cast<size_t>(ctx.config.max_eval_windows));
  }
  std::cout << "evaluating " << cases.size() << " windows, best of "
            << ctx.config.eval_samples << "\n";

  Predictor guide_predictor(std::move(bundle));
  AblationPredictor past_predictor(std::move(ablation));
  auto guide_fn = [&](const TrainingSample& w, int n, Rng& rng) {
    return guide_predictor.predict(w, n, rng);
  };
  auto past_fn = [&](const TrainingSample& w, int n, Rng& rng) {
    return past_predictor.predict(w, n, rng);
  };
  MethodReport with_guide = evaluate_method("guide", guide_fn, cases,
                                            ctx.config.eval_samples,
                                            ctx.config.seed, k);
  MethodReport past_only = evaluate_method("past-only", past_fn, cases,
                                           ctx.config.eval_samples,
                                           ctx.config.seed, k);

  const std::string report_path = join(ctx.out_dir, "report.txt");
  std::ofstream report(report_path);
  if (!report) throw IoError("cannot open " + report_path + " for writing");
  report << "windows: " << cases.size() << "\n"
         << "candidates per window: " << ctx.config.eval_samples << "\n"
         << "horizon: " << k << " s\n\n";
  for (const MethodReport* m : {&with_guide, &past_only}) {
    report << m->method << ":\n"
           << "  ade " << m->ade.mean << " +- " << m->ade.stddev << " km\n"
           << "  fde " << m->fde.mean << " +- " << m->fde.stddev << " km\n";
  }

  const std::string steps_path = join(ctx.out_dir, "per_step_ade.csv");
  std::ofstream steps(steps_path);
  if (!steps) throw IoError("cannot open " + steps_path + " for writing");
  steps << "step,guide,past_only\n";
  for (int j = 0; j < k; ++j) {
    steps << (j + 1) << "," << with_guide.mean_per_step[j] << ","
          << past_only.mean_per_step[j] << "\n";
  }

  for (const MethodReport* m : {&with_guide, &past_only}) {
    std::cout << m->method << ": ade " << m->ade.mean << " +- " << m->ade.stddev
              << " km, fde " << m->fde.mean << " +- " << m->fde.stddev << " km\n";
  }
  write_manifest(ctx, "evaluate", {report_path, steps_path});
}

void cmd_bench(const CliContext& ctx, int runs) {
  ModelBundle bundle = load_bundle(join(ctx.out_dir, "bundle.bin"));
  const int k = bundle.config.k;
  std::vector<TrainingSample> cases = load_windows(test_scene_path(ctx), bundle.config);
  const TrainingSample& window = cases.front();
  Predictor predictor(std::move(bundle));

  Rng rng(ctx.config.seed);
  TimingStats stats = measure_generation_time(
      [&] { (void)predictor.predict(window, 1, rng); }, k, runs);

  const std::string bench_path = join(ctx.out_dir, "bench.txt");
  std::ofstream out(bench_path);
  if (!out) throw IoError("cannot open " + bench_path + " for writing");
  out << "components: " << predictor.bundle().mixture.components.size() << "\n"
      << "horizon: " << k << " s\n"
      << "runs: " << stats.runs << "\n"
      << "per-step seconds: mean " << stats.mean_per_step << ", min "
      << stats.min_per_step << ", max " << stats.max_per_step << "\n";
  std::cout << "per-step generation time: mean " << stats.mean_per_step << " s over "
            << stats.runs << " runs -> " << bench_path << "\n";
  write_manifest(ctx, "bench", {bench_path});
}

int fail(const char* category, const std::exception& e, int code) {
  std::cerr << "error category=" << category << " message=" << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flight trajectory forecasting pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir_flag;
  uint64_t seed_flag = 0;
  bool seed_given = false;
  app.add_option("-c,--config", config_path, "JSON config; defaults apply when absent")
      ->check(CLI::ExistingFile);
  app.add_option("-o,--out-dir", out_dir_flag,
                 "artifact directory (default: TRAJCAST_OUT_DIR, then config)");
  app.add_option("-s,--seed", seed_flag, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  CLI::App* gen_data = app.add_subcommand("gen-data", "write synthetic scene files");
  CLI::App* train_nn_cmd =
      app.add_subcommand("train-nn", "train the guide generator");
  CLI::App* gen_guides =
      app.add_subcommand("gen-guides", "generate guides for the mixture dataset");
  CLI::App* train_gmm_cmd =
      app.add_subcommand("train-gmm", "fit the joint mixture on the guide dataset");
  bool ablation = false;
  train_gmm_cmd->add_flag("--ablation", ablation,
                          "fit on the past alone instead of past + guide");
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "predict candidates for one test window");
  int predict_index = 0;
  predict_cmd->add_option("--index", predict_index, "test window index");
  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "compare guide and past-only mixtures");
  CLI::App* bench_cmd = app.add_subcommand("bench", "time one prediction");
  int bench_runs = 10;
  bench_cmd->add_option("--runs", bench_runs, "timed repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CliContext ctx;
    if (!config_path.empty()) {
      ctx.config = load_config(config_path);
      ctx.config_path = config_path;
    }
    if (seed_given) ctx.config.seed = seed_flag;
    ctx.config.validate();

    const char* env_dir = std::getenv("TRAJCAST_OUT_DIR");
    ctx.out_dir = !out_dir_flag.empty() ? out_dir_flag
                  : env_dir && *env_dir ? std::string(env_dir)
                                        : ctx.config.paths.out_dir;
    if (ctx.out_dir.empty()) throw ConfigError("output directory is empty");
    std::filesystem::create_directories(ctx.out_dir);

    if (app.got_subcommand(gen_data)) cmd_gen_data(ctx);
    if (app.got_subcommand(train_nn_cmd)) cmd_train_nn(ctx);
    if (app.got_subcommand(gen_guides)) cmd_gen_guides(ctx);
    if (app.got_subcommand(train_gmm_cmd)) cmd_train_gmm(ctx, ablation);
    if (app.got_subcommand(predict_cmd)) cmd_predict(ctx, predict_index);
    if (app.got_subcommand(evaluate_cmd)) cmd_evaluate(ctx);
    if (app.got_subcommand(bench_cmd)) cmd_bench(ctx, bench_runs);
    return 0;
  } catch (const ConfigError& e) {
    return fail("config", e, 2);
  } catch (const ShapeError& e) {
    return fail("shape", e, 5);
  } catch (const ParseError& e) {
    return fail("parse", e, 3);
  } catch (const IoError& e) {
    return fail("io", e, 4);
  } catch (const NumericError& e) {
    return fail("numeric", e, 6);
  } catch (const std::exception& e) {
    return fail("internal", e, 1);
  }
}
