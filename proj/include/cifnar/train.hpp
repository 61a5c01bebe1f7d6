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

#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cifnar/metrics.hpp"
#include "cifnar/model.hpp"
#include "cifnar/synth.hpp"

namespace cifnar::harness {

struct TrainConfig {
  model::ModelConfig model;
  synth::TaskSpec task;
  int batch_size = 8;
  int max_steps = 5000;
  double peak_lr = 2e-3;
  int warmup_steps = 500;
  uint64_t seed = 1234;
  // The dev stream is keyed separately so ablation runs with different
  // training seeds share one dev set.
  uint64_t dev_seed = 424242;
  int dev_size = 100;
  int eval_every = 250;
  std::string out_dir = "out";
  bool disable_ali = false;
  bool disable_ctx = false;

  void validate() const {
    if (batch_size < 1 || max_steps < 1) throw std::runtime_error("TrainConfig: bad sizes");
    if (peak_lr <= 0 || warmup_steps < 1) throw std::runtime_error("TrainConfig: bad schedule");
    if (dev_size < 1 || eval_every < 1) throw std::runtime_error("TrainConfig: bad dev settings");
    task.validate();
    model.validate();
    if (model.d_in != task.feature_dim) {
      throw std::runtime_error("TrainConfig: model.d_in != task.feature_dim");
    }
    if (model.vocab_size != task.vocab_size) {
      throw std::runtime_error("TrainConfig: model.vocab_size != task.vocab_size");
    }
  }

  // Ablation flags fold into the model config used for training/inference.
  model::ModelConfig effective_model() const {
    model::ModelConfig m = model;
    if (disable_ali) m.lambda1 = 0.0;
    if (disable_ctx) m.contextual_enabled = false;
    return m;
  }
};

inline void to_json(nlohmann::json& j, const synth::TaskSpec& s) {
  j = nlohmann::json{{"vocab_size", s.vocab_size}, {"feature_dim", s.feature_dim},
                     {"dur_min", s.dur_min},       {"dur_max", s.dur_max},
                     {"len_min", s.len_min},       {"len_max", s.len_max},
                     {"noise_std", s.noise_std},   {"prototype_seed", s.prototype_seed}};
}

inline void task_from_json(const nlohmann::json& j, synth::TaskSpec& s) {
  synth::TaskSpec d;
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.feature_dim = j.value("feature_dim", d.feature_dim);
  s.dur_min = j.value("dur_min", d.dur_min);
  s.dur_max = j.value("dur_max", d.dur_max);
  s.len_min = j.value("len_min", d.len_min);
  s.len_max = j.value("len_max", d.len_max);
  s.noise_std = j.value("noise_std", d.noise_std);
  s.prototype_seed = j.value("prototype_seed", d.prototype_seed);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json task;
  to_json(task, c.task);
  j = nlohmann::json{{"model", nlohmann::json(c.model)},
                     {"task", task},
                     {"train",
                      {{"batch_size", c.batch_size},
                       {"max_steps", c.max_steps},
                       {"peak_lr", c.peak_lr},
                       {"warmup_steps", c.warmup_steps},
                       {"seed", c.seed},
                       {"dev_seed", c.dev_seed},
                       {"dev_size", c.dev_size},
                       {"eval_every", c.eval_every},
                       {"out_dir", c.out_dir},
                       {"disable_ali", c.disable_ali},
                       {"disable_ctx", c.disable_ctx}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("task")) task_from_json(j.at("task"), c.task);
  const nlohmann::json t = j.value("train", nlohmann::json::object());
  c.batch_size = t.value("batch_size", d.batch_size);
  c.max_steps = t.value("max_steps", d.max_steps);
  c.peak_lr = t.value("peak_lr", d.peak_lr);
  c.warmup_steps = t.value("warmup_steps", d.warmup_steps);
  c.seed = t.value("seed", d.seed);
  c.dev_seed = t.value("dev_seed", d.dev_seed);
  c.dev_size = t.value("dev_size", d.dev_size);
  c.eval_every = t.value("eval_every", d.eval_every);
  c.out_dir = t.value("out_dir", d.out_dir);
  c.disable_ali = t.value("disable_ali", d.disable_ali);
  c.disable_ctx = t.value("disable_ctx", d.disable_ctx);
  // model input dims follow the task unless explicitly overridden
  if (!j.contains("model") || !j.at("model").contains("d_in")) c.model.d_in = c.task.feature_dim;
  if (!j.contains("model") || !j.at("model").contains("vocab_size")) {
    c.model.vocab_size = c.task.vocab_size;
  }
}

// Adam with bias correction; parameter updates are out-of-place so arrays
// already captured by tapes stay untouched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(model::ParamStore& params, const std::map<std::string, Array>& grads, double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, value] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Array& g = git->second;
      Array& m = slot(m_, name, value);
      Array& v = slot(v_, name, value);
      Array next = value.clone();
      for (size_t i = 0; i < value.numel(); ++i) {
        double gi = g.data()[i];
        m.data()[i] = beta1_ * m.data()[i] + (1.0 - beta1_) * gi;
        v.data()[i] = beta2_ * v.data()[i] + (1.0 - beta2_) * gi * gi;
        double mhat = m.data()[i] / c1;
        double vhat = v.data()[i] / c2;
        next.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      value = std::move(next);
    }
  }

 private:
  static Array& slot(std::map<std::string, Array>& store, const std::string& name,
                     const Array& like) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Array::zeros(like.shape())).first;
    return it->second;
  }

  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Array> m_, v_;
};

// Linear warmup to peak_lr, then inverse-square-root decay.
inline double warmup_lr(double peak_lr, int warmup_steps, int step) {
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup_steps);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

// One structured record per optimizer step; averages over the non-skipped
// utterances of the batch.
struct StepRecord {
  int step = 0;
  double ce_cif = 0.0;
  double ce_ctx = 0.0;
  double ali = 0.0;
  double ctc = 0.0;
  double qua = 0.0;
  double total = 0.0;
  double ali_applied_rate = 0.0;
};

inline void to_json(nlohmann::json& j, const StepRecord& r) {
  j = nlohmann::json{{"step", r.step}, {"ce_cif", r.ce_cif}, {"ce_ctx", r.ce_ctx},
                     {"ali", r.ali},   {"ctc", r.ctc},       {"qua", r.qua},
                     {"total", r.total}, {"ali_applied_rate", r.ali_applied_rate}};
}

inline void from_json(const nlohmann::json& j, StepRecord& r) {
  j.at("step").get_to(r.step);
  j.at("ce_cif").get_to(r.ce_cif);
  j.at("ce_ctx").get_to(r.ce_ctx);
  j.at("ali").get_to(r.ali);
  j.at("ctc").get_to(r.ctc);
  j.at("qua").get_to(r.qua);
  j.at("total").get_to(r.total);
  j.at("ali_applied_rate").get_to(r.ali_applied_rate);
}

struct TrainResult {
  int exit_code = 0;  // 0 ok, 3 numerical divergence
  std::string divergence_note;
  double best_dev_cer = std::numeric_limits<double>::infinity();
  int best_step = -1;
  std::string best_checkpoint_path;
  std::string last_checkpoint_path;
  std::string metrics_path;
  std::vector<StepRecord> records;
  std::vector<std::pair<int, double>> dev_curve;  // (step, dev cer)
};

inline std::vector<synth::Utterance> generate_set(const synth::TaskSpec& task, uint64_t base_seed,
                                                  int count) {
  std::vector<synth::Utterance> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synth::generate(task, seed_mix(base_seed, i)));
  return out;
}

// Adam + warmup over freshly generated batches. Deterministic given the
// config: data, initialization and update order are all keyed off the seeds.
// Divergence does not throw; it is reported through exit_code 3 with the
// offending batch recorded.
inline TrainResult train(const TrainConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  model::ModelConfig mc = cfg.effective_model();
  TrainResult result;
  std::filesystem::create_directories(cfg.out_dir);
  result.metrics_path = cfg.out_dir + "/metrics.jsonl";
  result.best_checkpoint_path = cfg.out_dir + "/best.ckpt";
  result.last_checkpoint_path = cfg.out_dir + "/last.ckpt";
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("train: cannot open " + result.metrics_path);

  model::ParamStore params = model::init_params(mc, cfg.seed);
  AdamOptimizer adam;
  std::vector<synth::Utterance> dev = generate_set(cfg.task, cfg.dev_seed, cfg.dev_size);

  for (int step = 1; step <= cfg.max_steps; ++step) {
    std::map<std::string, Array> grad_sum;
    StepRecord rec;
    rec.step = step;
    int used = 0, applied = 0;

    for (int b = 0; b < cfg.batch_size; ++b) {
      uint64_t utt_seed =
          seed_mix(cfg.seed, 0x7261694eULL + static_cast<uint64_t>(step) * cfg.batch_size + b);
      synth::Utterance utt = synth::generate(cfg.task, utt_seed);
      try {
        Tape tape;
        auto lb = model::combined_loss(tape, params, mc, utt.frames, utt.tokens);
        if (lb.skipped) continue;
        auto grads = tape.backward(lb.total);
        for (auto& [name, g] : grads) {
          if (!params.count(name)) continue;  // inputs get gradients too; skip them
          auto it = grad_sum.find(name);
          if (it == grad_sum.end()) {
            grad_sum.emplace(name, g.clone());
          } else {
            for (size_t i = 0; i < g.numel(); ++i) it->second.data()[i] += g.data()[i];
          }
        }
        rec.ce_cif += lb.breakdown.ce_cif;
        rec.ce_ctx += lb.breakdown.ce_ctx;
        rec.ali += lb.breakdown.ali;
        rec.ctc += lb.breakdown.ctc;
        rec.qua += lb.breakdown.qua;
        rec.total += lb.breakdown.total;
        applied += lb.breakdown.ali_applied ? 1 : 0;
        ++used;
      } catch (const NonFiniteError& e) {
        result.exit_code = 3;
        result.divergence_note = "step " + std::to_string(step) + ", utterance seed " +
                                 std::to_string(utt_seed) + ": " + e.what();
        if (progress) *progress << "[train] diverged: " << result.divergence_note << "\n";
        return result;
      } catch (const std::domain_error& e) {
        // a saturated weight head (sum alpha underflowing to zero) is a
        // collapsed model, not a configuration problem
        result.exit_code = 3;
        result.divergence_note = "step " + std::to_string(step) + ", utterance seed " +
                                 std::to_string(utt_seed) + ": " + e.what();
        if (progress) *progress << "[train] diverged: " << result.divergence_note << "\n";
        return result;
      }
    }
    if (used > 0) {
      double inv = 1.0 / used;
      for (auto& [name, g] : grad_sum) {
        for (auto& v : g.data()) v *= inv;
      }
      adam.step(params, grad_sum, warmup_lr(cfg.peak_lr, cfg.warmup_steps, step));
      rec.ce_cif *= inv;
      rec.ce_ctx *= inv;
      rec.ali *= inv;
      rec.ctc *= inv;
      rec.qua *= inv;
      rec.total *= inv;
      rec.ali_applied_rate = static_cast<double>(applied) / used;
    }
    metrics << nlohmann::json(rec).dump() << "\n";
    result.records.push_back(rec);

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      EvalReport dev_report = evaluate(params, mc, dev);
      result.dev_curve.emplace_back(step, dev_report.cer);
      if (dev_report.cer < result.best_dev_cer) {
        result.best_dev_cer = dev_report.cer;
        result.best_step = step;
        model::save_checkpoint(result.best_checkpoint_path, mc, params);
      }
      if (progress) {
        *progress << "[train] step " << step << " total " << rec.total << " dev_cer "
                  << dev_report.cer << " ali_rate " << rec.ali_applied_rate << "\n";
      }
    }
  }
  model::save_checkpoint(result.last_checkpoint_path, mc, params);
  metrics.flush();
  return result;
}

}  // namespace cifnar::harness
