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
#include <ostream>
#include <string>
#include <vector>

#include "cifnar/array.hpp"
#include "cifnar/tape.hpp"

namespace cifnar::ctc {

// Blank is class 0 throughout; real tokens are 1..V, so logits have V+1
// columns.
constexpr int kBlank = 0;

// Frames needed to emit the target: one per token plus one separating blank
// between equal neighbours.
inline int min_frames(const std::vector<int>& target) {
  int need = static_cast<int>(target.size());
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

struct LossNode {
  bool reachable = false;
  Var loss;  // valid only when reachable
};

// -log P(target | logits), differentiable through the tape. An unreachable
// target is reported instead of crashing (the training loop skips the
// utterance).
inline LossNode loss(Tape& t, Var logits, const std::vector<int>& target) {
  const Array& v = t.value(logits);
  if (v.rank() != 2 || v.extent(1) < 2) {
    throw ShapeError("ctc::loss: logits must be {U, V+1} with V >= 1");
  }
  if (v.extent(0) < min_frames(target)) return {false, Var{}};
  return {true, t.ctc_loss(logits, target)};
}

struct BruteForce {
  bool reachable = false;
  double nll = 0.0;
};

// Test oracle: enumerate every frame labelling, collapse it (merge repeats,
// then drop blanks), and sum the probability of labellings that collapse to
// the target.
inline BruteForce brute_force_nll(const Array& logits, const std::vector<int>& target) {
  int u_len = logits.extent(0);
  int classes = logits.extent(1);
  double paths = std::pow(static_cast<double>(classes), u_len);
  if (paths > 1e7) throw std::runtime_error("brute_force_nll: search space too large");

  // Per-frame softmax in linear space; U is small enough not to underflow.
  std::vector<double> prob(static_cast<size_t>(u_len) * classes);
  for (int u = 0; u < u_len; ++u) {
    const double* src = logits.data().data() + static_cast<size_t>(u) * classes;
    double mx = src[0];
    for (int j = 1; j < classes; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(src[j] - mx);
    for (int j = 0; j < classes; ++j) {
      prob[static_cast<size_t>(u) * classes + j] = std::exp(src[j] - mx) / z;
    }
  }

  std::vector<int> path(u_len, 0);
  std::vector<int> collapsed;
  double total = 0.0;
  bool any = false;
  while (true) {
    collapsed.clear();
    int prev = -1;
    for (int u = 0; u < u_len; ++u) {
      if (path[u] != prev && path[u] != kBlank) collapsed.push_back(path[u]);
      prev = path[u];
    }
    if (collapsed == target) {
      double p = 1.0;
      for (int u = 0; u < u_len; ++u) p *= prob[static_cast<size_t>(u) * classes + path[u]];
      total += p;
      any = true;
    }
    int pos = u_len - 1;
    while (pos >= 0 && path[pos] == classes - 1) path[pos--] = 0;
    if (pos < 0) break;
    ++path[pos];
  }
  if (!any) return {false, 0.0};
  return {true, -std::log(total)};
}

// Per-frame softmax over the V+1 classes; rows sum to 1.
inline Array posteriors(const Array& logits) {
  int u_len = logits.extent(0);
  int classes = logits.extent(1);
  Array out(logits.shape());
  for (int u = 0; u < u_len; ++u) {
    const double* src = logits.data().data() + static_cast<size_t>(u) * classes;
    double* dst = out.data().data() + static_cast<size_t>(u) * classes;
    double mx = src[0];
    for (int j = 1; j < classes; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(src[j] - mx);
    for (int j = 0; j < classes; ++j) dst[j] = std::exp(src[j] - mx) / z;
  }
  return out;
}

// Spike indicator plus the boundary index list derived from it. The leading
// 0 in `boundaries` marks the start of the spike sequence; the remaining
// entries are the spike frames, in order. A spike at frame 0 coincides with
// the sentinel and is merged into it so the list stays strictly increasing
// (it still counts toward spike_count).
struct SpikeBoundaries {
  double theta = 0.5;
  std::vector<int> spikes;      // length U, 0/1
  std::vector<int> boundaries;  // [0, spike frames...]
  int spike_count = 0;
};

// A frame spikes when the largest non-blank posterior exceeds theta.
//
// Without merging, consecutive frames above theta each count as their own
// spike. With merge_runs set, a maximal run of consecutive supra-theta
// frames sharing one argmax token counts as a single spike anchored at the
// run's last frame; this keeps the boundary list meaningful when the CTC
// posteriors are segmental rather than single-frame peaks. P_s always stays
// the raw per-frame indicator.
inline SpikeBoundaries extract_spikes(const Array& post, double theta, bool merge_runs = false) {
  if (!(theta > 0.0 && theta < 1.0)) {
    throw std::runtime_error("extract_spikes: theta must be in (0, 1)");
  }
  int u_len = post.extent(0);
  int classes = post.extent(1);
  SpikeBoundaries out;
  out.theta = theta;
  out.spikes.assign(u_len, 0);
  out.boundaries.push_back(0);
  std::vector<int> arg(u_len, 0);
  for (int u = 0; u < u_len; ++u) {
    double best = 0.0;
    for (int k = 1; k < classes; ++k) {
      if (post.at(u, k) > best) {
        best = post.at(u, k);
        arg[u] = k;
      }
    }
    if (best > theta) out.spikes[u] = 1;
  }
  if (!merge_runs) {
    for (int u = 0; u < u_len; ++u) {
      if (!out.spikes[u]) continue;
      if (u > 0) out.boundaries.push_back(u);
      ++out.spike_count;
    }
    return out;
  }
  int u = 0;
  while (u < u_len) {
    if (!out.spikes[u]) {
      ++u;
      continue;
    }
    int end = u;
    while (end + 1 < u_len && out.spikes[end + 1] && arg[end + 1] == arg[u]) ++end;
    if (end > 0) out.boundaries.push_back(end);
    ++out.spike_count;
    u = end + 1;
  }
  return out;
}

// Dump consumed by `visualize`: one row per frame.
inline void write_spike_csv(std::ostream& os, const Array& post, const SpikeBoundaries& sb) {
  int u_len = post.extent(0);
  int classes = post.extent(1);
  os << "frame_index,p_blank,p_max_nonblank,argmax_token,is_spike\n";
  for (int u = 0; u < u_len; ++u) {
    double best = 0.0;
    int arg = 1;
    for (int k = 1; k < classes; ++k) {
      if (post.at(u, k) > best) {
        best = post.at(u, k);
        arg = k;
      }
    }
    os << u << "," << post.at(u, kBlank) << "," << best << "," << arg << "," << sb.spikes[u]
       << "\n";
  }
}

}  // namespace cifnar::ctc
