#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pyrpoint_tools/commands.hpp"

using namespace pyrpoint::cli;

int main(int argc, char** argv) {
  set_command_line(std::vector<std::string>(argv, argv + argc));

  CLI::App app{"pyrpoint: point cloud semantic segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PYRPOINT_VERSION_STRING);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labeled synthetic scene as PLY");
  s->add_option("recipe", synth.recipe, "Scene recipe (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("out", synth.out, "Output PLY path")->required();
  s->add_flag("--ascii", synth.ascii, "Write ascii instead of binary_little_endian");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  std::size_t train_epochs = 0, train_steps = 0;
  auto* t = app.add_subcommand("train", "Train a network");
  t->add_option("config", train.config, "Network config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("dataset", train.dataset, "Dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("out_dir", train.out_dir, "Run directory")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Override the config seed");
  t->add_flag("--deterministic", train.deterministic, "Single-threaded, bit-reproducible run");
  auto* t_epochs = t->add_option("--epochs", train_epochs, "Override the scheduled epoch count");
  auto* t_steps = t->add_option("--max-steps", train_steps, "Stop after this many total steps");
  t->add_flag("--resume", train.resume, "Continue from <out_dir>/checkpoint.bin");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("dataset", eval.dataset, "Dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  e->add_option("--split", eval.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--out", eval.out_dir, "Report directory (default <checkpoint dir>/eval-<split>)");
  e->add_flag("--dump-predictions", eval.dump_predictions, "Write one colored prediction PLY per cloud");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  g->add_option("--scope", grad.scope, "ops, blocks, network or all")
      ->check(CLI::IsMember({"ops", "blocks", "network", "all"}));
  g->add_option("--seed", grad.seed, "Seed for the random inputs");
  g->add_option("--out", grad.out_dir, "Write manifest.json and gradcheck.json here");
  g->add_flag("--inject-fault", grad.inject_fault, "Add an op with a broken backward pass")->group("");

  AblateArgs abl;
  std::uint64_t abl_seed = 0;
  std::size_t abl_epochs = 0, abl_steps = 0;
  auto* a = app.add_subcommand("ablate", "Train and compare attention / hidden-layer variants");
  a->add_option("config", abl.config, "Base network config (JSON)")->required()->check(CLI::ExistingFile);
  a->add_option("dataset", abl.dataset, "Dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  a->add_option("out_dir", abl.out_dir, "Run directory")->required();
  a->add_option("--grid", abl.grid, "attention, hidden or both")->check(CLI::IsMember({"attention", "hidden", "both"}));
  auto* a_seed = a->add_option("--seed", abl_seed, "Override the config seed");
  auto* a_epochs = a->add_option("--epochs", abl_epochs, "Override the scheduled epoch count");
  auto* a_steps = a->add_option("--max-steps", abl_steps, "Stop each variant after this many steps");

  SummaryArgs summary;
  auto* m = app.add_subcommand("summary", "Print the block and parameter table of a config");
  m->add_option("config", summary.config, "Network config (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*t_seed) train.seed = train_seed;
  if (*t_epochs) train.epochs = train_epochs;
  if (*t_steps) train.max_steps = train_steps;
  if (*a_seed) abl.seed = abl_seed;
  if (*a_epochs) abl.epochs = abl_epochs;
  if (*a_steps) abl.max_steps = abl_steps;

  if (s->parsed()) return cmd_synth(synth, std::cout, std::cerr);
  if (t->parsed()) return cmd_train(train, std::cout, std::cerr);
  if (e->parsed()) return cmd_eval(eval, std::cout, std::cerr);
  if (g->parsed()) return cmd_gradcheck(grad, std::cout, std::cerr);
  if (a->parsed()) return cmd_ablate(abl, std::cout, std::cerr);
  if (m->parsed()) return cmd_summary(summary, std::cout, std::cerr);
  return kExitConfig;
}
