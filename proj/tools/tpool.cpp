// SPDX-License-Identifier: Apache-2.0
//
// tpool: train, evaluate, verify, generate synthetic data and apply a
// single pooler from the command line.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "tpool/cli.hpp"

namespace {

using namespace tpool;
namespace fs = std::filesystem;

template <typename T>
std::optional<T> optional_of(const CLI::Option* opt, const T& value) {
  return opt->count() ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal bilinear pooling for action parsing"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "key = value run config")->required();

  cli::EvalOptions eval_opt;
  std::string checkpoint, predictions, dump;
  int classes = 0, ignore = 0, fold = 0;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint or stored predictions on a dataset");
  auto* ck_opt = eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  auto* pr_opt = eval->add_option("--predictions", predictions, "Directory of predicted seq_NNNN.labels");
  eval->add_option("--data", eval_opt.data, "Dataset directory")->required();
  auto* cl_opt = eval->add_option("--classes", classes, "Class count (with --predictions)");
  auto* ig_opt = eval->add_option("--ignore-label", ignore, "Ground-truth class excluded from accuracy");
  auto* fo_opt = eval->add_option("--fold", fold, "Evaluate only this fold");
  eval->add_option("--downsample", eval_opt.downsample, "Keep every n-th frame")->check(CLI::PositiveNumber);
  auto* du_opt = eval->add_option("--dump", dump, "Write per-frame predictions here");

  int seeds = 100;
  double fault = 0.0;
  auto* verify = app.add_subcommand("verify", "Run the self-verification suite");
  verify->add_option("--seeds", seeds, "Random instances per identity check");
  verify->add_option("--inject-fault", fault)->group("");

  SynthParams synth_p;
  std::string synth_out, synth_format = "tpf";
  auto* synth = app.add_subcommand("synth", "Write the synthetic covariance dataset");
  synth->add_option("--seed", synth_p.seed);
  synth->add_option("--n", synth_p.sequences, "Sequences");
  synth->add_option("--T", synth_p.frames, "Frames per sequence");
  synth->add_option("--d", synth_p.channels, "Channels");
  synth->add_option("--min-segment", synth_p.min_segment);
  synth->add_option("--max-segment", synth_p.max_segment);
  synth->add_option("--rho", synth_p.rho, "Channel-pair correlation in (0, 1)");
  synth->add_option("--folds", synth_p.folds);
  synth->add_option("--format", synth_format, "tpf or csv")->check(CLI::IsMember({"tpf", "csv"}));
  synth->add_option("--out", synth_out, "Output directory")->required();

  cli::PoolOptions pool_opt;
  std::string weights;
  auto* pool = app.add_subcommand("pool", "Apply one pooler to a feature file");
  pool->add_option("--in", pool_opt.in, "Input feature file")->required();
  pool->add_option("--kind", pool_opt.kind, "max, coupled, decoupled, coupled_compact, decoupled_compact, first_order or second_order")
      ->required();
  pool->add_option("--window", pool_opt.window);
  pool->add_option("--stride", pool_opt.stride);
  auto* we_opt = pool->add_option("--weights", weights, "CSV with omega, or p and q, one line each");
  pool->add_option("--out", pool_opt.out, "Output feature file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*train) {
      cli::run_train(cli::load_run_config(config_path), std::cout);
    } else if (*eval) {
      eval_opt.checkpoint = optional_of<fs::path>(ck_opt, checkpoint);
      eval_opt.predictions = optional_of<fs::path>(pr_opt, predictions);
      eval_opt.classes = optional_of(cl_opt, classes);
      eval_opt.ignore = optional_of(ig_opt, ignore);
      eval_opt.fold = optional_of(fo_opt, fold);
      eval_opt.dump = optional_of<fs::path>(du_opt, dump);
      cli::run_eval(eval_opt, std::cout);
    } else if (*verify) {
      return cli::run_verify(seeds, std::cout, fault) ? cli::kOk : cli::kVerifyFailed;
    } else if (*synth) {
      cli::run_synth(synth_p, synth_out, synth_format == "csv" ? FeatureFormat::csv : FeatureFormat::binary);
    } else if (*pool) {
      if (we_opt->count()) pool_opt.weights = weights;
      cli::run_pool(pool_opt);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}
