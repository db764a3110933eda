#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace bttrain::cli;
  CLI::App app{"Train and analyse tensor-train compressed transformers"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "seed for initialisation and shuffling");
    sub->add_option("--threads", o.threads, "threads > 1 run BTT chains concurrently");
    sub->add_flag("-v,--verbose", o.verbosity, "more output");
  };

  auto* train = app.add_subcommand("train", "train a model and write metrics, checkpoint and sidecar");
  common(train);
  train->add_option("--epochs", o.epochs, "number of epochs");
  train->add_flag("--spill-activations", o.spill, "stage block activations in a scratch file");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter (f64)");
  common(grad);
  auto* cost = app.add_subcommand("costmodel", "cost reports, sweeps, instrumented counters and schedules");
  common(cost);
  auto* bram = app.add_subcommand("bramplan", "plan factor storage in memory blocks");
  common(bram);
  auto* synth = app.add_subcommand("synth-data", "write a seeded synthetic JSONL dataset");
  common(synth);
  synth->add_option("--classes", o.classes, "number of classes");
  synth->add_option("--length", o.length, "tokens per sequence");
  synth->add_option("--count", o.count, "number of sequences");
  synth->add_option("--vocab", o.vocab, "vocabulary size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(o);
    if (grad->parsed()) return cmd_gradcheck(o);
    if (cost->parsed()) return cmd_costmodel(o);
    if (bram->parsed()) return cmd_bramplan(o);
    if (synth->parsed()) return cmd_synthdata(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
