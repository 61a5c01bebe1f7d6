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

#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "cifnar/harness.hpp"

using namespace cifnar;

namespace {

// Independent oracle: plain recursion over delete/insert/substitute.
int brute_force_edits(const std::vector<int>& ref, size_t i, const std::vector<int>& hyp,
                      size_t j) {
  if (i == ref.size()) return static_cast<int>(hyp.size() - j);
  if (j == hyp.size()) return static_cast<int>(ref.size() - i);
  int best = brute_force_edits(ref, i + 1, hyp, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
  best = std::min(best, brute_force_edits(ref, i + 1, hyp, j) + 1);
  best = std::min(best, brute_force_edits(ref, i, hyp, j + 1) + 1);
  return best;
}

harness::TrainConfig micro_train_config(const std::string& out_dir) {
  harness::TrainConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.n_encoder_layers = 1;
  cfg.model.n_cif_decoder_layers = 1;
  cfg.model.n_contextual_layers = 1;
  cfg.model.conv_kernel_size = 3;
  cfg.model.vocab_size = 6;
  cfg.model.d_in = 8;
  cfg.model.max_positions = 32;
  cfg.model.max_tokens = 8;
  cfg.task.vocab_size = 6;
  cfg.task.feature_dim = 8;
  cfg.task.dur_min = 2;
  cfg.task.dur_max = 4;
  cfg.task.len_min = 2;
  cfg.task.len_max = 3;
  cfg.task.noise_std = 0.2;
  cfg.batch_size = 2;
  cfg.max_steps = 1;
  cfg.warmup_steps = 10;
  cfg.dev_size = 4;
  cfg.eval_every = 1;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Minimal well-formedness check: every opened tag is closed in order.
bool svg_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    size_t end = text.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    if (tag.back() == '/') continue;  // self-closing
    std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    stack.push_back(name);
  }
  return stack.empty();
}

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

}  // namespace

TEST_CASE("levenshtein: trivial cases") {
  CHECK(harness::levenshtein({1, 2, 3}, {1, 2, 3}).total() == 0);
  auto e = harness::levenshtein({1, 2, 3}, {1, 2, 4});
  CHECK(e.sub == 1);
  CHECK(e.ins == 0);
  CHECK(e.del == 0);
  CHECK(harness::levenshtein({}, {1, 2}).ins == 2);
  CHECK(harness::levenshtein({1, 2}, {}).del == 2);
}

TEST_CASE("levenshtein matches the brute-force oracle") {
  // exhaustive over a binary alphabet up to length 4
  std::vector<std::vector<int>> seqs = {{}};
  for (int len = 1; len <= 4; ++len) {
    size_t start = 0;
    std::vector<std::vector<int>> next(seqs);
    for (const auto& s : seqs) {
      if (s.size() == static_cast<size_t>(len - 1)) {
        for (int tok : {1, 2}) {
          auto t = s;
          t.push_back(tok);
          next.push_back(t);
        }
      }
    }
    seqs = std::move(next);
    (void)start;
  }
  for (const auto& ref : seqs) {
    for (const auto& hyp : seqs) {
      auto e = harness::levenshtein(ref, hyp);
      CHECK(e.total() == brute_force_edits(ref, 0, hyp, 0));
    }
  }
  // random pairs up to length 6 over a ternary alphabet
  Rng rng(321);
  for (int rep = 0; rep < 60; ++rep) {
    std::vector<int> ref(rng.uniform_int(0, 6)), hyp(rng.uniform_int(0, 6));
    for (auto& v : ref) v = rng.uniform_int(1, 3);
    for (auto& v : hyp) v = rng.uniform_int(1, 3);
    auto e = harness::levenshtein(ref, hyp);
    CHECK(e.total() == brute_force_edits(ref, 0, hyp, 0));
  }
}

TEST_CASE("eval report serializes exactly and evaluation is deterministic") {
  auto cfg = micro_train_config("");
  auto params = model::init_params(cfg.effective_model(), 5);
  auto set = harness::generate_set(cfg.task, 777, 5);
  auto r1 = harness::evaluate(params, cfg.effective_model(), set);
  auto r2 = harness::evaluate(params, cfg.effective_model(), set);
  CHECK(nlohmann::json(r1).dump() == nlohmann::json(r2).dump());
  CHECK(r1.cer >= 0.0);
  CHECK(r1.length_accuracy >= 0.0);
  CHECK(r1.length_accuracy <= 1.0);
  CHECK(r1.nar_latency_ratio == 0.0);  // latency not measured

  auto parsed = nlohmann::json::parse(nlohmann::json(r1).dump()).get<harness::EvalReport>();
  CHECK(nlohmann::json(parsed).dump() == nlohmann::json(r1).dump());
}

TEST_CASE("warmup schedule: linear rise, inverse-sqrt decay") {
  double peak = 2e-3;
  CHECK(harness::warmup_lr(peak, 100, 1) == Catch::Approx(peak / 100));
  CHECK(harness::warmup_lr(peak, 100, 50) == Catch::Approx(peak / 2));
  CHECK(harness::warmup_lr(peak, 100, 100) == Catch::Approx(peak));
  CHECK(harness::warmup_lr(peak, 100, 400) == Catch::Approx(peak / 2));
  CHECK(harness::warmup_lr(peak, 100, 101) < peak);
}

TEST_CASE("config file: parse, defaults, and dimension sync") {
  auto dir = std::filesystem::temp_directory_path() / "cifnar_cfg_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "config.json").string();
  {
    std::ofstream os(path);
    os << R"({"task": {"vocab_size": 5, "feature_dim": 9, "noise_std": 0.1},
              "train": {"max_steps": 7, "seed": 99}})";
  }
  auto cfg = harness::load_config_file(path);
  CHECK(cfg.task.vocab_size == 5);
  CHECK(cfg.model.vocab_size == 5);  // synced from task
  CHECK(cfg.model.d_in == 9);
  CHECK(cfg.max_steps == 7);
  CHECK(cfg.seed == 99);
  CHECK(cfg.batch_size == 8);  // default preserved
  cfg.validate();

  {
    std::ofstream os(path);
    os << "{ not json";
  }
  CHECK_THROWS_WITH(harness::load_config_file(path),
                    Catch::Matchers::ContainsSubstring("parse error"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("train: one step writes metrics and a checkpoint") {
  auto dir = std::filesystem::temp_directory_path() / "cifnar_train_smoke";
  std::filesystem::remove_all(dir);
  auto cfg = micro_train_config(dir.string());
  auto result = harness::train(cfg);
  CHECK(result.exit_code == 0);
  CHECK(result.records.size() == 1);
  CHECK(std::filesystem::exists(result.best_checkpoint_path));
  CHECK(std::filesystem::exists(result.last_checkpoint_path));
  CHECK(std::filesystem::exists(result.metrics_path));

  auto ck = model::load_checkpoint(result.last_checkpoint_path);
  CHECK(ck.config.d_model == cfg.model.d_model);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train: same config and seed reproduce the metrics log bit for bit") {
  auto dir1 = std::filesystem::temp_directory_path() / "cifnar_train_det1";
  auto dir2 = std::filesystem::temp_directory_path() / "cifnar_train_det2";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  auto cfg = micro_train_config(dir1.string());
  cfg.max_steps = 12;
  cfg.eval_every = 6;
  auto r1 = harness::train(cfg);
  cfg.out_dir = dir2.string();
  auto r2 = harness::train(cfg);
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  CHECK(slurp(r1.metrics_path) == slurp(r2.metrics_path));
  CHECK(r1.best_dev_cer == r2.best_dev_cer);
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("metrics log replays into identical records") {
  auto dir = std::filesystem::temp_directory_path() / "cifnar_log_replay";
  std::filesystem::remove_all(dir);
  auto cfg = micro_train_config(dir.string());
  cfg.max_steps = 5;
  auto result = harness::train(cfg);
  REQUIRE(result.exit_code == 0);

  std::ifstream is(result.metrics_path);
  std::string line;
  std::vector<harness::StepRecord> parsed;
  std::ostringstream rebuilt;
  while (std::getline(is, line)) {
    auto rec = nlohmann::json::parse(line).get<harness::StepRecord>();
    parsed.push_back(rec);
    rebuilt << nlohmann::json(rec).dump() << "\n";
  }
  CHECK(parsed.size() == 5);
  CHECK(rebuilt.str() == slurp(result.metrics_path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("visualize: csv shapes, fired consistency, svg structure") {
  auto cfg = micro_train_config("");
  auto mc = cfg.effective_model();
  auto params = model::init_params(mc, 21);
  auto utt = synth::generate(cfg.task, 31);
  const int frames = utt.frames.extent(0);

  auto dir = std::filesystem::temp_directory_path() / "cifnar_viz";
  std::filesystem::create_directories(dir);
  auto paths = harness::visualize(params, mc, utt, (dir / "viz").string());

  std::string alpha_csv = slurp(paths.alpha_csv);
  std::string spike_csv = slurp(paths.spikes_csv);
  CHECK(count_occurrences(alpha_csv, "\n") == frames + 1);
  CHECK(count_occurrences(spike_csv, "\n") == frames + 1);

  // fired column sums to the number of fires of the unscaled scan
  auto nar = model::infer(params, mc, utt.frames);
  int fired_sum = 0;
  std::istringstream is(alpha_csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    fired_sum += std::stoi(line.substr(line.rfind(',') + 1));
  }
  CHECK(fired_sum == static_cast<int>(nar.fire_positions.size()));

  std::string svg = slurp(paths.svg);
  CHECK(svg_well_formed(svg));
  CHECK(count_occurrences(svg, "class=\"boundary\"") ==
        static_cast<int>(utt.boundaries.size()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("bench: invocation contracts on an untrained model") {
  auto cfg = micro_train_config("");
  auto mc = cfg.effective_model();
  auto params = model::init_params(mc, 23);
  auto set = harness::generate_set(cfg.task, 555, 6);
  auto report = harness::bench(params, mc, set, {{1, 3}, {4, 8}});
  CHECK(report.invocations_ok);
  int bucketed = 0;
  for (auto& b : report.buckets) bucketed += b.n;
  CHECK(bucketed >= 0);
  nlohmann::json j(report);
  CHECK(j.contains("buckets"));
}
