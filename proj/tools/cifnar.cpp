// Copyright 2026 The cifnar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command line for the CIF sequence-transduction library:
//   gen-data    write a synthetic segmental dataset
//   train       train a model, logging per-step losses and checkpoints
//   eval        CER / boundary / length metrics for a checkpoint
//   visualize   alpha-curve and spike dumps plus an overlay SVG
//   bench       NAR vs AR decoder latency by output-length bucket
//
// Exit codes: 0 success, 2 configuration error, 3 numerical divergence.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cifnar/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> theta;
  std::optional<double> residual_threshold;
  std::optional<std::string> decoder_mode;
  bool disable_ali = false;
  bool disable_ctx = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (model/task/train sections)");
  cmd->add_option("--seed", o.seed, "master seed override");
  cmd->add_option("--steps", o.steps, "training step override");
  cmd->add_option("--theta", o.theta, "CTC spike threshold override");
  cmd->add_option("--residual-threshold", o.residual_threshold,
                  "residual firing threshold override");
  cmd->add_option("--decoder-mode", o.decoder_mode, "decoder input mode: c_only or c_and_h")
      ->check(CLI::IsMember({"c_only", "c_and_h"}));
  cmd->add_flag("--disable-ali", o.disable_ali, "drop the alignment loss (lambda1 = 0)");
  cmd->add_flag("--disable-ctx", o.disable_ctx, "drop the contextual decoder");
}

cifnar::harness::TrainConfig resolve_config(const CommonOpts& o) {
  cifnar::harness::TrainConfig cfg;
  if (!o.config_path.empty()) cfg = cifnar::harness::load_config_file(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.steps) cfg.max_steps = *o.steps;
  if (o.theta) cfg.model.theta = *o.theta;
  if (o.residual_threshold) cfg.model.residual_threshold = *o.residual_threshold;
  if (o.decoder_mode) {
    cfg.model.decoder_input_mode = cifnar::model::decoder_mode_from_string(*o.decoder_mode);
  }
  if (o.disable_ali) cfg.disable_ali = true;
  if (o.disable_ctx) cfg.disable_ctx = true;
  cfg.validate();
  return cfg;
}

std::vector<cifnar::synth::Utterance> load_or_generate(const std::string& data_path,
                                                       const cifnar::synth::TaskSpec& task,
                                                       uint64_t gen_seed, int gen_count) {
  if (!data_path.empty()) return cifnar::synth::read_dataset(data_path).utterances;
  return cifnar::harness::generate_set(task, gen_seed, gen_count);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous integrate-and-fire sequence transduction at desk scale"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, viz_opts, bench_opts;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset file");
  std::string gen_out;
  int gen_count = 500;
  uint64_t gen_seed = 99;
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--count", gen_count, "number of utterances");
  gen->add_option("--data-seed", gen_seed, "seed for the utterance stream");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string train_out;
  add_common(tr, train_opts);
  tr->add_option("--out", train_out, "output directory (checkpoints + metrics.jsonl)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out;
  uint64_t eval_seed = 2024;
  int eval_count = 500;
  bool eval_latency = false;
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  ev->add_option("--data", eval_data, "dataset file (generated when omitted)");
  ev->add_option("--eval-seed", eval_seed, "generation seed when --data is omitted");
  ev->add_option("--eval-count", eval_count, "generated utterance count");
  ev->add_flag("--latency", eval_latency, "also measure the AR/NAR decoder time ratio");
  ev->add_option("--out", eval_out, "write the report JSON here (stdout otherwise)");

  // visualize
  auto* vz = app.add_subcommand("visualize", "alpha/spike dumps and overlay SVG");
  std::string viz_ckpt, viz_data, viz_out = "viz";
  int viz_index = 0;
  std::optional<uint64_t> viz_seed;
  add_common(vz, viz_opts);
  vz->add_option("--checkpoint", viz_ckpt, "checkpoint path")->required();
  vz->add_option("--data", viz_data, "dataset file to pick the utterance from");
  vz->add_option("--index", viz_index, "utterance index within --data");
  vz->add_option("--utt-seed", viz_seed, "generate the utterance from this seed instead");
  vz->add_option("--out", viz_out, "output path prefix");

  // bench
  auto* bn = app.add_subcommand("bench", "NAR vs AR decoder latency");
  std::string bench_ckpt, bench_data, bench_out;
  uint64_t bench_seed = 31337;
  int bench_count = 200;
  add_common(bn, bench_opts);
  bn->add_option("--checkpoint", bench_ckpt, "checkpoint path")->required();
  bn->add_option("--data", bench_data, "dataset file (generated when omitted)");
  bn->add_option("--bench-seed", bench_seed, "generation seed when --data is omitted");
  bn->add_option("--bench-count", bench_count, "generated utterance count");
  bn->add_option("--out", bench_out, "write the latency table JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = resolve_config(gen_opts);
      auto utts = cifnar::harness::generate_set(cfg.task, gen_seed, gen_count);
      cifnar::synth::write_dataset(utts, cfg.task, gen_out);
      std::cout << "wrote " << utts.size() << " utterances to " << gen_out << "\n";
      return kExitOk;
    }

    if (tr->parsed()) {
      auto cfg = resolve_config(train_opts);
      if (!train_out.empty()) cfg.out_dir = train_out;
      auto result = cifnar::harness::train(cfg, &std::cout);
      if (result.exit_code != 0) {
        std::cerr << "training diverged: " << result.divergence_note << "\n";
        return kExitDiverged;
      }
      std::cout << "best dev cer " << result.best_dev_cer << " at step " << result.best_step
                << "\nbest checkpoint: " << result.best_checkpoint_path
                << "\nlast checkpoint: " << result.last_checkpoint_path
                << "\nmetrics: " << result.metrics_path << "\n";
      return kExitOk;
    }

    if (ev->parsed()) {
      auto ck = cifnar::model::load_checkpoint(eval_ckpt);
      auto cfg = resolve_config(eval_opts);
      auto utts = load_or_generate(eval_data, cfg.task, eval_seed, eval_count);
      if (utts.empty()) throw std::runtime_error("eval: dataset is empty");
      auto report = cifnar::harness::evaluate(ck.params, ck.config, utts, eval_latency);
      std::string text = nlohmann::json(report).dump(2);
      if (eval_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream os(eval_out);
        if (!os) throw std::runtime_error("eval: cannot open " + eval_out);
        os << text << "\n";
        std::cout << "wrote " << eval_out << "\n";
      }
      return kExitOk;
    }

    if (vz->parsed()) {
      auto ck = cifnar::model::load_checkpoint(viz_ckpt);
      auto cfg = resolve_config(viz_opts);
      cifnar::synth::Utterance utt;
      if (!viz_data.empty()) {
        auto ds = cifnar::synth::read_dataset(viz_data);
        if (viz_index < 0 || viz_index >= static_cast<int>(ds.utterances.size())) {
          throw std::runtime_error("visualize: --index out of range");
        }
        utt = ds.utterances[viz_index];
      } else {
        utt = cifnar::synth::generate(cfg.task, viz_seed.value_or(1));
      }
      auto paths = cifnar::harness::visualize(ck.params, ck.config, utt, viz_out);
      std::cout << "wrote " << paths.alpha_csv << ", " << paths.spikes_csv << ", " << paths.svg
                << "\n";
      return kExitOk;
    }

    if (bn->parsed()) {
      auto ck = cifnar::model::load_checkpoint(bench_ckpt);
      auto cfg = resolve_config(bench_opts);
      auto utts = load_or_generate(bench_data, cfg.task, bench_seed, bench_count);
      auto report = cifnar::harness::bench(ck.params, ck.config, utts);
      std::string text = nlohmann::json(report).dump(2);
      if (!bench_out.empty()) {
        std::ofstream os(bench_out);
        if (!os) throw std::runtime_error("bench: cannot open " + bench_out);
        os << text << "\n";
      }
      std::cout << text << "\n";
      return kExitOk;
    }
  } catch (const cifnar::NonFiniteError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
