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

#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cifnar/array.hpp"
#include "cifnar/ctc.hpp"
#include "cifnar/tape.hpp"

namespace cifnar::cif {

// Comparison slack for threshold crossings, so that weights scaled to sum
// exactly to the target length produce exactly that many fires despite
// accumulated rounding.
constexpr double kFireSlack = 1e-11;

struct FireOptions {
  double beta = 1.0;
  double residual_threshold = 0.5;
};

struct FireResult {
  Var embeddings;                   // {n_fired, d}; only valid when n_fired > 0
  int n_fired = 0;                  // fired tokens, residual included
  std::vector<int> fire_positions;  // frame index of each fire
  double residual_weight = 0.0;     // accumulation left after the last full fire
  bool residual_fired = false;
  // Split weights per fired token as (frame, weight-at-build-time) pairs;
  // diagnostic only, gradients flow through the tape nodes.
  std::vector<std::vector<std::pair<int, double>>> token_weights;
};

// Left-to-right integrate-and-fire scan. Weight accumulates per frame; each
// time the accumulation reaches beta the in-flight token takes exactly what
// it needs (splitting the current frame's weight), the weighted sum of
// encoder states fires, and the remainder carries into the next token. A
// frame's weight can span several fires when it exceeds beta. A trailing
// accumulation above residual_threshold fires once, normalized by its own
// weight. The split structure is fixed by the forward values; gradients flow
// through the weighted sums only.
inline FireResult fire(Tape& t, Var h, Var alpha, const FireOptions& opt = {}) {
  // Copy the handles: pushing nodes below reallocates the tape's node
  // storage, so references returned by value() would dangle.
  const Array av = t.value(alpha);
  const Array hv = t.value(h);
  if (av.rank() != 1 || hv.rank() != 2 || hv.extent(0) != av.extent(0)) {
    throw ShapeError("cif::fire: need alpha {U} and h {U,d}");
  }
  if (!(opt.beta > 0)) throw std::runtime_error("cif::fire: beta must be positive");
  const int u_len = av.extent(0);
  const double beta = opt.beta;

  FireResult out;
  std::vector<Var> rows;
  Var acc{};        // accumulated weight of the in-flight token
  Var token_sum{};  // its weighted sum of encoder states
  double acc_val = 0.0;
  std::vector<std::pair<int, double>> weights;

  for (int u = 0; u < u_len; ++u) {
    Var rem = t.slice_rows(alpha, u, u + 1);
    double rem_val = av.at(u);
    Var h_row = t.slice_rows(h, u, u + 1);
    while (acc_val + rem_val >= beta - kFireSlack) {
      Var needed = acc.valid() ? t.sub(t.constant(beta), acc) : t.constant(beta);
      double needed_val = beta - acc_val;
      Var part = t.scalar_mul(needed, h_row);
      token_sum = token_sum.valid() ? t.add(token_sum, part) : part;
      weights.emplace_back(u, needed_val);
      rows.push_back(token_sum);
      out.fire_positions.push_back(u);
      out.token_weights.push_back(std::move(weights));
      weights.clear();
      rem = t.sub(rem, needed);
      rem_val -= needed_val;
      acc = Var{};
      token_sum = Var{};
      acc_val = 0.0;
    }
    if (rem_val > kFireSlack) {
      Var part = t.scalar_mul(rem, h_row);
      token_sum = token_sum.valid() ? t.add(token_sum, part) : part;
      acc = acc.valid() ? t.add(acc, rem) : rem;
      acc_val += rem_val;
      weights.emplace_back(u, rem_val);
    }
  }

  out.residual_weight = acc_val;
  if (acc_val > opt.residual_threshold) {
    rows.push_back(t.scalar_mul(t.recip(acc), token_sum));
    out.fire_positions.push_back(u_len - 1);
    out.token_weights.push_back(std::move(weights));
    out.residual_fired = true;
  }
  out.n_fired = static_cast<int>(rows.size());
  if (out.n_fired > 0) out.embeddings = t.concat_rows(rows);
  return out;
}

// alpha' = alpha * target_len / sum(alpha), so the scan fires exactly
// target_len times. Training-time only; inference uses the raw weights.
inline Var scale_weights(Tape& t, Var alpha, int target_len) {
  if (target_len < 1) throw std::runtime_error("scale_weights: target_len must be >= 1");
  const Array av = t.value(alpha);
  double total = 0.0;
  for (double v : av.data()) total += v;
  if (total <= 0.0) throw std::domain_error("scale_weights: sum of weights is zero");
  Var factor = t.scale(t.recip(t.sum_all(alpha)), static_cast<double>(target_len));
  return t.scalar_mul(factor, alpha);
}

// | sum(alpha) - target_len |
inline Var quantity_loss(Tape& t, Var alpha, int target_len) {
  return t.abs(t.sub(t.sum_all(alpha), t.constant(static_cast<double>(target_len))));
}

struct AlignmentLoss {
  Var loss;
  bool applied = false;
};

// Per-interval |sum(alpha) - 1| over the target_len consecutive boundary
// intervals. Interval i spans frames boundaries[i]..boundaries[i+1]
// inclusive, so adjacent intervals share their endpoint frame; half_open
// drops the right endpoint instead (ablation flag). When the spike count
// does not match the target length the term is dropped for the utterance.
inline AlignmentLoss alignment_loss(Tape& t, Var alpha, const ctc::SpikeBoundaries& sb,
                                    int target_len, bool half_open = false) {
  if (sb.spike_count != target_len ||
      static_cast<int>(sb.boundaries.size()) != target_len + 1) {
    return {t.constant(0.0), false};
  }
  const int u_len = t.value(alpha).extent(0);
  Var total{};
  for (int i = 0; i < target_len; ++i) {
    int lo = sb.boundaries[i];
    int hi = half_open ? sb.boundaries[i + 1] : sb.boundaries[i + 1] + 1;
    if (hi > u_len) hi = u_len;
    Var seg = t.sum_all(t.slice_rows(alpha, lo, hi));
    Var term = t.abs(t.sub(seg, t.constant(1.0)));
    total = total.valid() ? t.add(total, term) : term;
  }
  if (!total.valid()) return {t.constant(0.0), true};
  return {total, true};
}

// Value-level replay of the firing scan for dumps and plots.
struct ScanStep {
  double alpha = 0.0;
  double accumulated = 0.0;  // after processing the frame (post-fire)
  int fired = 0;             // fires completed at this frame, residual included
};

inline std::vector<ScanStep> scan_trace(const Array& alpha, const FireOptions& opt = {}) {
  const int u_len = alpha.extent(0);
  std::vector<ScanStep> steps(u_len);
  double acc = 0.0;
  for (int u = 0; u < u_len; ++u) {
    double rem = alpha.at(u);
    steps[u].alpha = rem;
    while (acc + rem >= opt.beta - kFireSlack) {
      rem -= opt.beta - acc;
      acc = 0.0;
      ++steps[u].fired;
    }
    if (rem > kFireSlack) acc += rem;
    steps[u].accumulated = acc;
  }
  if (u_len > 0 && acc > opt.residual_threshold) ++steps[u_len - 1].fired;
  return steps;
}

// Dump consumed by `visualize`: one row per frame.
inline void write_alpha_csv(std::ostream& os, const std::vector<ScanStep>& steps) {
  os << "frame_index,alpha,accumulated,fired\n";
  for (size_t u = 0; u < steps.size(); ++u) {
    os << u << "," << steps[u].alpha << "," << steps[u].accumulated << "," << steps[u].fired
       << "\n";
  }
}

}  // namespace cifnar::cif
