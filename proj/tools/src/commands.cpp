#include "pyrpoint_tools/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include <pyrpoint/checkpoint.hpp>
#include <pyrpoint/dataset.hpp>
#include <pyrpoint/errors.hpp>
#include <pyrpoint/gradcheck_suite.hpp>
#include <pyrpoint/metrics.hpp>
#include <pyrpoint/ply.hpp>
#include <pyrpoint/synth.hpp>
#include <pyrpoint/trainer.hpp>

#include "pyrpoint_tools/manifest.hpp"

namespace fs = std::filesystem;

namespace pyrpoint::cli {

namespace {

std::vector<std::string> g_argv;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const Error*>(&e)) return kExitConfig;
  if (dynamic_cast<const json::exception*>(&e)) return kExitConfig;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitConfig;
  return kExitFailure;
}

/// Runs `body` with the manifest bracketing it; exceptions become exit codes.
int guarded(RunManifest* manifest, std::ostream& err, const std::function<int()>& body) {
  int code = kExitOk;
  std::string message;
  try {
    if (manifest) manifest->begin();
    code = body();
  } catch (const ParseError& e) {
    message = std::string(e.what()) + " (byte offset " + std::to_string(e.offset()) + ")";
    code = kExitConfig;
  } catch (const std::exception& e) {
    message = e.what();
    code = exit_code_for(e);
  }
  if (!message.empty()) err << "error: " << message << '\n';
  if (manifest) {
    try {
      manifest->finish(code, message);
    } catch (const std::exception& e) {
      err << "error: could not finalize manifest: " << e.what() << '\n';
      if (code == kExitOk) code = kExitConfig;
    }
  }
  return code;
}

void copy_config(const std::string& src, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  fs::copy_file(src, dir / name, fs::copy_options::overwrite_existing);
}

void write_loss_trace(const fs::path& file, const std::vector<double>& losses) {
  std::ofstream out(file, std::ios::trunc);
  char buf[40];
  for (double l : losses) {
    std::snprintf(buf, sizeof buf, "%.17g\n", l);
    out << buf;
  }
  if (!out) throw IoError("cannot write " + file.string());
}

void print_record(std::ostream& out, const json& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu  step %zu  lr %.3g  loss %.5f", r.at("epoch").get<std::size_t>(),
                r.at("step").get<std::size_t>(), r.at("learning_rate").get<double>(), r.at("loss").get<double>());
  out << buf;
  if (r.contains("miou")) {
    std::snprintf(buf, sizeof buf, "  mIoU %.2f  OA %.2f", 100.0 * r.at("miou").get<double>(),
                  100.0 * r.at("oa").get<double>());
    out << buf << (r.contains("val") ? " (val)" : " (train batches)");
  }
  out << '\n';
}

NetworkConfig load_config(const std::string& path, std::optional<std::uint64_t> seed, const DatasetSpec& ds) {
  NetworkConfig cfg = NetworkConfig::load(path);
  if (seed) cfg.seed = *seed;
  if (cfg.class_count != ds.class_count()) {
    throw ConfigError("config predicts " + std::to_string(cfg.class_count) + " classes but dataset '" + ds.name +
                      "' has " + std::to_string(ds.class_count()));
  }
  return cfg;
}

}  // namespace

void set_command_line(std::vector<std::string> argv) { g_argv = std::move(argv); }

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  const fs::path target(args.out);
  const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
  RunManifest manifest("synth", (dir / (target.stem().string() + ".manifest.json")).string());
  manifest.config_path("recipe", args.recipe).out_dir(dir.string()).arguments(g_argv);
  return guarded(&manifest, err, [&] {
    const SceneRecipe recipe = SceneRecipe::load(args.recipe);
    manifest.seed(recipe.seed);
    const PointCloud cloud = synth_scene(recipe);
    write_ply(cloud, args.out, args.ascii ? PlyFormat::ascii : PlyFormat::binary);

    const PointCloud back = read_ply(args.out);
    std::vector<std::size_t> hist(back.class_count, 0);
    for (int l : back.labels) ++hist[static_cast<std::size_t>(l)];
    const auto names = recipe.class_names();
    json histogram = json::object();
    out << "wrote " << back.size() << " points to " << args.out << '\n';
    for (std::size_t c = 0; c < hist.size(); ++c) {
      out << "  " << names[c] << ": " << hist[c] << '\n';
      histogram[names[c]] = hist[c];
    }
    manifest.note("class_histogram", histogram);
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  const fs::path dir(args.out_dir);
  RunManifest manifest("train", (dir / "manifest.json").string());
  manifest.config_path("config", args.config).config_path("dataset", args.dataset).out_dir(args.out_dir).arguments(g_argv);
  return guarded(&manifest, err, [&] {
    const DatasetSpec ds = DatasetSpec::load(args.dataset);
    const NetworkConfig cfg = load_config(args.config, args.seed, ds);
    manifest.seed(cfg.seed);
    manifest.note("deterministic", args.deterministic);

    fs::create_directories(dir);
    write_json_file((dir / "config.json").string(), cfg.to_json());
    copy_config(args.dataset, dir, "dataset.json");

    const auto clouds = std::make_shared<const std::vector<PointCloud>>(load_split(ds, Split::train));
    const SamplerParams sampler = sampler_params(cfg, &ds);

    std::unique_ptr<PyramidNetwork> net;
    TrainState state;
    const fs::path ckpt = dir / "checkpoint.bin";
    if (args.resume) {
      if (!fs::exists(ckpt)) throw ConfigError("--resume: no checkpoint at " + ckpt.string());
      LoadedCheckpoint loaded = load_checkpoint(ckpt.string());
      net = std::make_unique<PyramidNetwork>(std::move(loaded.network));
      state = std::move(loaded.state);
      out << "resuming at step " << state.step << " (epoch " << state.epoch << ")\n";
    } else {
      net = std::make_unique<PyramidNetwork>(cfg);
      state.seed = cfg.seed;
      std::error_code ec;
      fs::remove(dir / "metrics.jsonl", ec);
    }

    TrainOptions opts;
    opts.out_dir = args.out_dir;
    opts.epochs = args.epochs;
    opts.max_steps = args.max_steps;
    opts.deterministic = args.deterministic;
    opts.class_names = ds.class_names;
    if (!ds.val_files.empty()) {
      opts.validation = std::make_shared<const std::vector<PointCloud>>(load_split(ds, Split::val));
    }
    opts.on_record = [&](const json& r) { print_record(out, r); };

    state = train(*net, clouds, sampler, std::move(state), opts);
    write_loss_trace(dir / "loss_trace.txt", state.loss_history);
    manifest.note("final_step", state.step);
    if (!state.loss_history.empty()) manifest.note("final_loss", state.loss_history.back());
    out << "finished at step " << state.step << "; checkpoint " << ckpt.string() << '\n';
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  const fs::path ckpt_dir = fs::path(args.checkpoint).has_parent_path() ? fs::path(args.checkpoint).parent_path() : ".";
  const fs::path dir = args.out_dir.empty() ? ckpt_dir / ("eval-" + args.split) : fs::path(args.out_dir);
  RunManifest manifest("eval", (dir / "manifest.json").string());
  manifest.config_path("checkpoint", args.checkpoint).config_path("dataset", args.dataset).out_dir(dir.string());
  manifest.arguments(g_argv);
  return guarded(&manifest, err, [&] {
    const Split split = split_from_string(args.split);
    const DatasetSpec ds = DatasetSpec::load(args.dataset);
    LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
    const PyramidNetwork& net = loaded.network;
    manifest.seed(net.config().seed);
    if (net.config().class_count != ds.class_count()) {
      throw ConfigError("checkpoint predicts " + std::to_string(net.config().class_count) + " classes but dataset '" +
                        ds.name + "' has " + std::to_string(ds.class_count()));
    }
    copy_config(args.dataset, dir, "dataset.json");
    const auto clouds = std::make_shared<const std::vector<PointCloud>>(load_split(ds, split));
    const EvalResult result = evaluate(net, clouds, sampler_params(net.config(), &ds));
    if (result.confusion.total() == 0) throw DatasetError("split " + args.split + " has no labeled points to score");

    out << format_report(result.metrics, result.confusion, ds.class_names);
    write_json_file((dir / "metrics.json").string(), {{"split", args.split},
                                                      {"tiles", result.tiles},
                                                      {"metrics", result.metrics.to_json()},
                                                      {"confusion", result.confusion.to_json()},
                                                      {"class_names", ds.class_names}});
    if (args.dump_predictions) {
      const Palette palette = default_palette(ds.class_count());
      const auto& files = ds.files(split);
      for (std::size_t i = 0; i < clouds->size(); ++i) {
        PointCloud pred = (*clouds)[i];
        pred.labels = result.predictions[i];
        pred.ignore_index.reset();
        const fs::path file = dir / ("pred_" + fs::path(files[i]).stem().string() + ".ply");
        write_ply(pred, file.string(), PlyFormat::binary, &palette);
        out << "wrote " << file.string() << '\n';
      }
    }
    manifest.note("miou", result.metrics.mean_iou);
    manifest.note("oa", result.metrics.overall_accuracy);
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  std::unique_ptr<RunManifest> manifest;
  if (!args.out_dir.empty()) {
    manifest = std::make_unique<RunManifest>("gradcheck", (fs::path(args.out_dir) / "manifest.json").string());
    manifest->seed(args.seed).out_dir(args.out_dir).arguments(g_argv);
  }
  return guarded(manifest.get(), err, [&] {
    const GradcheckScope scope = gradcheck_scope_from_string(args.scope);
    const GradcheckReport report = run_gradcheck(scope, args.seed, args.inject_fault);
    out << report.table();
    if (!args.out_dir.empty()) write_json_file((fs::path(args.out_dir) / "gradcheck.json").string(), report.to_json());
    if (manifest) manifest->note("passed", report.passed());
    return report.passed() ? kExitOk : kExitNumeric;
  });
}

int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
  const fs::path dir(args.out_dir);
  RunManifest manifest("ablate", (dir / "manifest.json").string());
  manifest.config_path("config", args.config).config_path("dataset", args.dataset).out_dir(args.out_dir).arguments(g_argv);
  return guarded(&manifest, err, [&] {
    const AblationGrid grid = ablation_grid_from_string(args.grid);
    const DatasetSpec ds = DatasetSpec::load(args.dataset);
    const NetworkConfig cfg = load_config(args.config, args.seed, ds);
    manifest.seed(cfg.seed);
    fs::create_directories(dir);
    write_json_file((dir / "config.json").string(), cfg.to_json());
    copy_config(args.dataset, dir, "dataset.json");

    const auto train_clouds = std::make_shared<const std::vector<PointCloud>>(load_split(ds, Split::train));
    const auto eval_clouds = ds.val_files.empty()
                                 ? train_clouds
                                 : std::make_shared<const std::vector<PointCloud>>(load_split(ds, Split::val));
    TrainOptions opts;
    opts.out_dir = args.out_dir;
    opts.epochs = args.epochs;
    opts.max_steps = args.max_steps;
    opts.class_names = ds.class_names;
    const auto variants = ablation_variants(grid, cfg);
    out << "ablation grid '" << args.grid << "': " << variants.size() << " variants\n";

    const AblationResult result = ablate(cfg, grid, train_clouds, eval_clouds, sampler_params(cfg, &ds), opts);
    const std::string table = result.table();
    out << table;
    std::ofstream((dir / "ablation.txt").string()) << table;
    write_json_file((dir / "ablation.json").string(), result.to_json());
    manifest.note("variants", result.rows.size());
    return kExitOk;
  });
}

int cmd_summary(const SummaryArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(nullptr, err, [&] {
    const PyramidNetwork net(NetworkConfig::load(args.config));
    out << net.summarize();
    return kExitOk;
  });
}

}  // namespace pyrpoint::cli
