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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cifnar/model.hpp"
#include "cifnar/synth.hpp"

namespace cifnar::harness {

struct EditCounts {
  int sub = 0;
  int ins = 0;
  int del = 0;
  int total() const { return sub + ins + del; }
};

// Minimum-edit alignment with a deterministic backtrace (diagonal, then
// deletion, then insertion on ties).
inline EditCounts levenshtein(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const int r = static_cast<int>(ref.size());
  const int h = static_cast<int>(hyp.size());
  std::vector<std::vector<int>> d(r + 1, std::vector<int>(h + 1, 0));
  for (int i = 0; i <= r; ++i) d[i][0] = i;
  for (int j = 0; j <= h; ++j) d[0][j] = j;
  for (int i = 1; i <= r; ++i) {
    for (int j = 1; j <= h; ++j) {
      int sub_cost = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub_cost, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditCounts counts;
  int i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++counts.sub;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++counts.del;  // reference token missing from the hypothesis
      --i;
    } else {
      ++counts.ins;
      --j;
    }
  }
  return counts;
}

struct EvalReport {
  int n_utterances = 0;
  int64_t ref_len = 0;
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  double cer = 0.0;
  double length_accuracy = 0.0;
  // Fire position vs. the token's true end frame (a fire marks the end of a
  // token's integration), over utterances with matching lengths only.
  int boundary_tokens = 0;
  double boundary_mae = 0.0;
  double boundary_signed_mean = 0.0;
  // AR decoder time over NAR decoder time; 0 when latency was not measured.
  double nar_latency_ratio = 0.0;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"n_utterances", r.n_utterances},
                     {"ref_len", r.ref_len},
                     {"substitutions", r.substitutions},
                     {"insertions", r.insertions},
                     {"deletions", r.deletions},
                     {"cer", r.cer},
                     {"length_accuracy", r.length_accuracy},
                     {"boundary_tokens", r.boundary_tokens},
                     {"boundary_mae", r.boundary_mae},
                     {"boundary_signed_mean", r.boundary_signed_mean},
                     {"nar_latency_ratio", r.nar_latency_ratio}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("n_utterances").get_to(r.n_utterances);
  j.at("ref_len").get_to(r.ref_len);
  j.at("substitutions").get_to(r.substitutions);
  j.at("insertions").get_to(r.insertions);
  j.at("deletions").get_to(r.deletions);
  j.at("cer").get_to(r.cer);
  j.at("length_accuracy").get_to(r.length_accuracy);
  j.at("boundary_tokens").get_to(r.boundary_tokens);
  j.at("boundary_mae").get_to(r.boundary_mae);
  j.at("boundary_signed_mean").get_to(r.boundary_signed_mean);
  j.at("nar_latency_ratio").get_to(r.nar_latency_ratio);
}

// Greedy NAR evaluation over a dataset. Deterministic unless
// measure_latency is set (which adds the AR-baseline timing pass).
inline EvalReport evaluate(const model::ParamStore& params, const model::ModelConfig& cfg,
                           const std::vector<synth::Utterance>& utterances,
                           bool measure_latency = false) {
  EvalReport report;
  double abs_err = 0.0, signed_err = 0.0;
  double nar_seconds = 0.0, ar_seconds = 0.0;
  int length_matches = 0;
  for (const auto& utt : utterances) {
    auto hyp = model::infer(params, cfg, utt.frames);
    EditCounts e = levenshtein(utt.tokens, hyp.tokens);
    report.substitutions += e.sub;
    report.insertions += e.ins;
    report.deletions += e.del;
    report.ref_len += static_cast<int64_t>(utt.tokens.size());
    if (hyp.tokens.size() == utt.tokens.size()) {
      ++length_matches;
      for (size_t i = 0; i < utt.tokens.size(); ++i) {
        double err = hyp.fire_positions[i] - (utt.boundaries[i].second - 1);
        abs_err += std::fabs(err);
        signed_err += err;
        ++report.boundary_tokens;
      }
    }
    if (measure_latency) {
      nar_seconds += hyp.decoder_seconds;
      auto ar = model::ar_baseline_decode(params, cfg, utt.frames);
      ar_seconds += ar.decoder_seconds;
    }
    ++report.n_utterances;
  }
  report.cer = report.ref_len > 0
                   ? static_cast<double>(report.substitutions + report.insertions +
                                         report.deletions) /
                         static_cast<double>(report.ref_len)
                   : 0.0;
  report.length_accuracy =
      report.n_utterances > 0 ? static_cast<double>(length_matches) / report.n_utterances : 0.0;
  if (report.boundary_tokens > 0) {
    report.boundary_mae = abs_err / report.boundary_tokens;
    report.boundary_signed_mean = signed_err / report.boundary_tokens;
  }
  if (measure_latency && nar_seconds > 0.0) {
    report.nar_latency_ratio = ar_seconds / nar_seconds;
  }
  return report;
}

}  // namespace cifnar::harness
