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

#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cifnar/array.hpp"
#include "cifnar/cif.hpp"
#include "cifnar/ctc.hpp"
#include "cifnar/rng.hpp"
#include "cifnar/synth.hpp"
#include "cifnar/tape.hpp"

namespace cifnar::model {

enum class DecoderInputMode { kCOnly, kCAndH };

inline std::string to_string(DecoderInputMode m) {
  return m == DecoderInputMode::kCOnly ? "c_only" : "c_and_h";
}

inline DecoderInputMode decoder_mode_from_string(const std::string& s) {
  if (s == "c_only") return DecoderInputMode::kCOnly;
  if (s == "c_and_h") return DecoderInputMode::kCAndH;
  throw std::runtime_error("unknown decoder_input_mode: " + s);
}

struct ModelConfig {
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int n_encoder_layers = 2;
  int n_cif_decoder_layers = 2;
  int n_contextual_layers = 2;
  int conv_kernel_size = 7;
  int vocab_size = 16;
  int d_in = 16;
  double theta = 0.5;
  double residual_threshold = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  DecoderInputMode decoder_input_mode = DecoderInputMode::kCAndH;
  bool contextual_enabled = true;
  // Ablation flags for the alignment loss: exclusive right interval
  // endpoints, and constraining the scaled instead of the raw weights.
  bool align_half_open = false;
  bool align_scaled_alpha = false;
  // Merge consecutive supra-theta frames with one argmax token into a single
  // spike; needed when the CTC posteriors are segmental instead of peaky.
  bool merge_spike_runs = true;
  int max_positions = 256;
  int max_tokens = 64;

  void validate() const {
    if (d_model < 1 || d_model % n_heads != 0) {
      throw std::runtime_error("ModelConfig: d_model must be divisible by n_heads");
    }
    if (n_heads < 1 || d_ff < 1 || n_encoder_layers < 1 || n_cif_decoder_layers < 1) {
      throw std::runtime_error("ModelConfig: layer and width counts must be >= 1");
    }
    if (n_contextual_layers < 0) throw std::runtime_error("ModelConfig: negative depth");
    if (conv_kernel_size < 1 || conv_kernel_size % 2 == 0) {
      throw std::runtime_error("ModelConfig: conv_kernel_size must be odd");
    }
    if (vocab_size < 1 || d_in < 1) throw std::runtime_error("ModelConfig: bad dimensions");
    if (!(theta > 0.0 && theta < 1.0)) throw std::runtime_error("ModelConfig: theta not in (0,1)");
    if (residual_threshold < 0.0) throw std::runtime_error("ModelConfig: bad residual_threshold");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
      throw std::runtime_error("ModelConfig: lambdas must be >= 0");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},
                     {"n_encoder_layers", c.n_encoder_layers},
                     {"n_cif_decoder_layers", c.n_cif_decoder_layers},
                     {"n_contextual_layers", c.n_contextual_layers},
                     {"conv_kernel_size", c.conv_kernel_size},
                     {"vocab_size", c.vocab_size},
                     {"d_in", c.d_in},
                     {"theta", c.theta},
                     {"residual_threshold", c.residual_threshold},
                     {"lambda1", c.lambda1},
                     {"lambda2", c.lambda2},
                     {"lambda3", c.lambda3},
                     {"decoder_input_mode", to_string(c.decoder_input_mode)},
                     {"contextual_enabled", c.contextual_enabled},
                     {"align_half_open", c.align_half_open},
                     {"align_scaled_alpha", c.align_scaled_alpha},
                     {"merge_spike_runs", c.merge_spike_runs},
                     {"max_positions", c.max_positions},
                     {"max_tokens", c.max_tokens}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig defaults;
  c.d_model = j.value("d_model", defaults.d_model);
  c.n_heads = j.value("n_heads", defaults.n_heads);
  c.d_ff = j.value("d_ff", defaults.d_ff);
  c.n_encoder_layers = j.value("n_encoder_layers", defaults.n_encoder_layers);
  c.n_cif_decoder_layers = j.value("n_cif_decoder_layers", defaults.n_cif_decoder_layers);
  c.n_contextual_layers = j.value("n_contextual_layers", defaults.n_contextual_layers);
  c.conv_kernel_size = j.value("conv_kernel_size", defaults.conv_kernel_size);
  c.vocab_size = j.value("vocab_size", defaults.vocab_size);
  c.d_in = j.value("d_in", defaults.d_in);
  c.theta = j.value("theta", defaults.theta);
  c.residual_threshold = j.value("residual_threshold", defaults.residual_threshold);
  c.lambda1 = j.value("lambda1", defaults.lambda1);
  c.lambda2 = j.value("lambda2", defaults.lambda2);
  c.lambda3 = j.value("lambda3", defaults.lambda3);
  c.decoder_input_mode =
      decoder_mode_from_string(j.value("decoder_input_mode", std::string("c_and_h")));
  c.contextual_enabled = j.value("contextual_enabled", defaults.contextual_enabled);
  c.align_half_open = j.value("align_half_open", defaults.align_half_open);
  c.align_scaled_alpha = j.value("align_scaled_alpha", defaults.align_scaled_alpha);
  c.merge_spike_runs = j.value("merge_spike_runs", defaults.merge_spike_runs);
  c.max_positions = j.value("max_positions", defaults.max_positions);
  c.max_tokens = j.value("max_tokens", defaults.max_tokens);
}

using ParamStore = std::map<std::string, Array>;

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Array glorot(Rng& rng, int fan_in, int fan_out) {
  Array w({fan_in, fan_out});
  double std = std::sqrt(2.0 / (fan_in + fan_out));
  for (auto& v : w.data()) v = rng.normal(0.0, std);
  return w;
}

inline void init_linear(ParamStore& p, Rng& rng, const std::string& pfx, int in, int out) {
  p[pfx + ".w"] = glorot(rng, in, out);
  p[pfx + ".b"] = Array::zeros({out});
}

inline void init_ln(ParamStore& p, const std::string& pfx, int d) {
  p[pfx + ".g"] = Array::full({d}, 1.0);
  p[pfx + ".b"] = Array::zeros({d});
}

inline void init_attention(ParamStore& p, Rng& rng, const std::string& pfx, int d) {
  for (const char* m : {"wq", "wk", "wv", "wo"}) p[pfx + "." + m] = glorot(rng, d, d);
  // no key bias: softmax is invariant to uniform row shifts, so it would be
  // an unidentifiable parameter with an identically zero gradient
  for (const char* m : {"bq", "bv", "bo"}) p[pfx + "." + m] = Array::zeros({d});
}

inline void init_ffn(ParamStore& p, Rng& rng, const std::string& pfx, int d, int d_ff) {
  p[pfx + ".w1"] = glorot(rng, d, d_ff);
  p[pfx + ".b1"] = Array::zeros({d_ff});
  p[pfx + ".w2"] = glorot(rng, d_ff, d);
  p[pfx + ".b2"] = Array::zeros({d});
}

}  // namespace detail

inline ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore p;
  Rng rng(seed_mix(seed, 0x9a12b3c4ULL));
  const int d = cfg.d_model;

  detail::init_linear(p, rng, "in_proj", cfg.d_in, d);
  p["pos.enc"] = Array({cfg.max_positions, d});
  for (auto& v : p["pos.enc"].data()) v = rng.normal(0.0, 0.02);

  for (int i = 0; i < cfg.n_encoder_layers; ++i) {
    std::string pfx = "enc." + std::to_string(i);
    detail::init_ln(p, pfx + ".ln1", d);
    detail::init_ffn(p, rng, pfx + ".ffn1", d, cfg.d_ff);
    detail::init_ln(p, pfx + ".ln2", d);
    detail::init_attention(p, rng, pfx + ".attn", d);
    detail::init_ln(p, pfx + ".ln3", d);
    detail::init_linear(p, rng, pfx + ".conv.pw1", d, d);
    p[pfx + ".conv.dw"] = Array({cfg.conv_kernel_size, d});
    for (auto& v : p[pfx + ".conv.dw"].data()) {
      v = rng.normal(0.0, std::sqrt(1.0 / cfg.conv_kernel_size));
    }
    detail::init_linear(p, rng, pfx + ".conv.pw2", d, d);
    detail::init_ln(p, pfx + ".ln4", d);
    detail::init_ffn(p, rng, pfx + ".ffn2", d, cfg.d_ff);
    detail::init_ln(p, pfx + ".ln5", d);
  }

  detail::init_linear(p, rng, "alpha_head", d, 1);
  // Start the weights low so early quantity-loss gradients do not have to
  // pull a half-weight-per-frame initialization all the way down.
  p["alpha_head.b"] = Array::full({1}, -1.0);
  detail::init_linear(p, rng, "ctc_head", d, cfg.vocab_size + 1);

  p["cifdec.pos"] = Array({cfg.max_tokens, d});
  for (auto& v : p["cifdec.pos"].data()) v = rng.normal(0.0, 0.02);
  for (int i = 0; i < cfg.n_cif_decoder_layers; ++i) {
    std::string pfx = "cifdec." + std::to_string(i);
    detail::init_ln(p, pfx + ".ln1", d);
    detail::init_attention(p, rng, pfx + ".self", d);
    if (cfg.decoder_input_mode == DecoderInputMode::kCAndH) {
      detail::init_ln(p, pfx + ".lnx", d);
      detail::init_attention(p, rng, pfx + ".cross", d);
    }
    detail::init_ln(p, pfx + ".ln2", d);
    detail::init_ffn(p, rng, pfx + ".ffn", d, cfg.d_ff);
  }
  detail::init_ln(p, "cifdec.ln", d);
  detail::init_linear(p, rng, "cifdec.out", d, cfg.vocab_size);

  if (cfg.contextual_enabled) {
    for (int i = 0; i < cfg.n_contextual_layers; ++i) {
      std::string pfx = "ctx." + std::to_string(i);
      detail::init_ln(p, pfx + ".ln1", d);
      detail::init_attention(p, rng, pfx + ".self", d);
      detail::init_ln(p, pfx + ".ln2", d);
      detail::init_ffn(p, rng, pfx + ".ffn", d, cfg.d_ff);
    }
    if (cfg.n_contextual_layers > 0) detail::init_ln(p, "ctx.ln", d);
    detail::init_linear(p, rng, "ctx.out", d, cfg.vocab_size);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward graph builders
// ---------------------------------------------------------------------------

namespace detail {

inline Var pget(Tape& t, const ParamStore& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::runtime_error("missing parameter: " + name);
  return t.param(name, it->second);
}

inline Var linear(Tape& t, const ParamStore& p, const std::string& pfx, Var x) {
  return t.add_bias(t.matmul(x, pget(t, p, pfx + ".w")), pget(t, p, pfx + ".b"));
}

inline Var layer_norm(Tape& t, const ParamStore& p, const std::string& pfx, Var x) {
  return t.layer_norm(x, pget(t, p, pfx + ".g"), pget(t, p, pfx + ".b"));
}

inline Var ffn(Tape& t, const ParamStore& p, const std::string& pfx, Var x) {
  Var h = t.gelu(t.add_bias(t.matmul(x, pget(t, p, pfx + ".w1")), pget(t, p, pfx + ".b1")));
  return t.add_bias(t.matmul(h, pget(t, p, pfx + ".w2")), pget(t, p, pfx + ".b2"));
}

// Multi-head scaled dot-product attention. Heads are column slices of the
// shared projections; a causal mask (queries attend to kv positions <= own
// index) is added as a constant.
inline Var attention(Tape& t, const ParamStore& p, const std::string& pfx, Var q_in, Var kv_in,
                     int n_heads, bool causal) {
  const int d = t.value(q_in).extent(1);
  const int dh = d / n_heads;
  const int lq = t.value(q_in).extent(0);
  const int lk = t.value(kv_in).extent(0);
  Var q = t.add_bias(t.matmul(q_in, pget(t, p, pfx + ".wq")), pget(t, p, pfx + ".bq"));
  Var k = t.matmul(kv_in, pget(t, p, pfx + ".wk"));
  Var v = t.add_bias(t.matmul(kv_in, pget(t, p, pfx + ".wv")), pget(t, p, pfx + ".bv"));
  Var wo = pget(t, p, pfx + ".wo");

  Var mask{};
  if (causal) {
    Array m({lq, lk});
    for (int i = 0; i < lq; ++i) {
      for (int j = 0; j < lk; ++j) m.at(i, j) = j <= i ? 0.0 : -1e9;
    }
    mask = t.constant(m);
  }

  Var out{};
  for (int h = 0; h < n_heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (causal) scores = scores + mask;
    Var ctx = t.matmul(t.softmax(scores), vh);
    Var proj = t.matmul(ctx, t.slice_rows(wo, h * dh, (h + 1) * dh));
    out = out.valid() ? out + proj : proj;
  }
  return t.add_bias(out, pget(t, p, pfx + ".bo"));
}

inline Var conv_module(Tape& t, const ParamStore& p, const std::string& pfx, Var x) {
  Var h = linear(t, p, pfx + ".pw1", x);
  h = t.depthwise_conv1d(h, pget(t, p, pfx + ".dw"));
  h = t.gelu(h);
  return linear(t, p, pfx + ".pw2", h);
}

// Conformer block: half-FFN, self-attention, depthwise conv, half-FFN, all
// pre-norm with residuals, then a closing layer norm.
inline Var conformer_block(Tape& t, const ParamStore& p, const std::string& pfx, Var x,
                           int n_heads) {
  x = x + t.scale(ffn(t, p, pfx + ".ffn1", layer_norm(t, p, pfx + ".ln1", x)), 0.5);
  Var a = layer_norm(t, p, pfx + ".ln2", x);
  x = x + attention(t, p, pfx + ".attn", a, a, n_heads, false);
  x = x + conv_module(t, p, pfx + ".conv", layer_norm(t, p, pfx + ".ln3", x));
  x = x + t.scale(ffn(t, p, pfx + ".ffn2", layer_norm(t, p, pfx + ".ln4", x)), 0.5);
  return layer_norm(t, p, pfx + ".ln5", x);
}

inline std::vector<int> iota(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace detail

struct EncoderOut {
  Var h;           // {U, d_model}
  Var alpha;       // {U}, sigmoid weights in (0, 1)
  Var ctc_logits;  // {U, V+1}
};

// No temporal subsampling: U = T, so CIF fire positions and CTC spikes stay
// in input-frame units.
inline EncoderOut encode(Tape& t, const ParamStore& p, const ModelConfig& cfg, Var frames) {
  const int u_len = t.value(frames).extent(0);
  if (u_len > cfg.max_positions) {
    throw std::runtime_error("encode: sequence longer than max_positions");
  }
  Var x = detail::linear(t, p, "in_proj", frames);
  x = x + t.gather_rows(detail::pget(t, p, "pos.enc"), detail::iota(u_len));
  for (int i = 0; i < cfg.n_encoder_layers; ++i) {
    x = detail::conformer_block(t, p, "enc." + std::to_string(i), x, cfg.n_heads);
  }
  EncoderOut out;
  out.h = x;
  out.alpha = t.reshape(t.sigmoid(detail::linear(t, p, "alpha_head", x)), {u_len});
  out.ctc_logits = detail::linear(t, p, "ctc_head", x);
  return out;
}

struct DecoderOut {
  Var hidden;  // {L, d_model}
  Var logits;  // {L, vocab_size}; class j is token id j+1
};

// NAR decoder over the fired embeddings. Self-attention has no causal mask;
// in c_and_h mode each block adds cross-attention from token positions to
// the encoder states. `causal` is only used by the AR timing baseline.
inline DecoderOut cif_decode(Tape& t, const ParamStore& p, const ModelConfig& cfg, Var c, Var h,
                             bool causal = false) {
  const int len = t.value(c).extent(0);
  if (len < 1) throw std::runtime_error("cif_decode: empty input");
  if (len > cfg.max_tokens) throw std::runtime_error("cif_decode: more fires than max_tokens");
  Var x = c + t.gather_rows(detail::pget(t, p, "cifdec.pos"), detail::iota(len));
  for (int i = 0; i < cfg.n_cif_decoder_layers; ++i) {
    std::string pfx = "cifdec." + std::to_string(i);
    Var a = detail::layer_norm(t, p, pfx + ".ln1", x);
    x = x + detail::attention(t, p, pfx + ".self", a, a, cfg.n_heads, causal);
    if (cfg.decoder_input_mode == DecoderInputMode::kCAndH) {
      if (!h.valid()) throw std::runtime_error("cif_decode: c_and_h mode needs encoder states");
      Var q = detail::layer_norm(t, p, pfx + ".lnx", x);
      x = x + detail::attention(t, p, pfx + ".cross", q, h, cfg.n_heads, false);
    }
    x = x + detail::ffn(t, p, pfx + ".ffn", detail::layer_norm(t, p, pfx + ".ln2", x));
  }
  DecoderOut out;
  out.hidden = detail::layer_norm(t, p, "cifdec.ln", x);
  out.logits = detail::linear(t, p, "cifdec.out", out.hidden);
  return out;
}

// Self-attention stack over the CIF decoder's hidden states; no acoustic
// input. Zero layers degenerate to a linear head.
inline Var contextual_decode(Tape& t, const ParamStore& p, const ModelConfig& cfg, Var y_hidden) {
  Var x = y_hidden;
  for (int i = 0; i < cfg.n_contextual_layers; ++i) {
    std::string pfx = "ctx." + std::to_string(i);
    Var a = detail::layer_norm(t, p, pfx + ".ln1", x);
    x = x + detail::attention(t, p, pfx + ".self", a, a, cfg.n_heads, false);
    x = x + detail::ffn(t, p, pfx + ".ffn", detail::layer_norm(t, p, pfx + ".ln2", x));
  }
  if (cfg.n_contextual_layers > 0) x = detail::layer_norm(t, p, "ctx.ln", x);
  return detail::linear(t, p, "ctx.out", x);
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double ce_cif = 0.0;
  double ce_ctx = 0.0;
  double ali = 0.0;
  double ctc = 0.0;
  double qua = 0.0;
  bool ali_applied = false;
  double total = 0.0;
};

struct LossBuild {
  bool skipped = false;
  std::string skip_reason;
  LossBreakdown breakdown;
  Var total;  // differentiable scalar; invalid when skipped
  std::vector<int> fire_positions;
  ctc::SpikeBoundaries spikes;
};

// Full training-path graph for one utterance:
// encode -> ctc loss -> spike extraction -> quantity loss -> alignment loss
// (raw weights) -> scale to the target length -> fire -> CIF decoder ->
// contextual decoder -> token cross-entropies, combined with the lambda
// weights.
inline LossBuild combined_loss(Tape& t, const ParamStore& p, const ModelConfig& cfg,
                               const Array& frames, const std::vector<int>& target) {
  if (target.empty()) throw std::runtime_error("combined_loss: empty target");
  const int target_len = static_cast<int>(target.size());
  LossBuild out;

  Var frames_in = t.input("frames", frames);
  EncoderOut enc = encode(t, p, cfg, frames_in);

  auto ctc_node = ctc::loss(t, enc.ctc_logits, target);
  if (!ctc_node.reachable) {
    out.skipped = true;
    out.skip_reason = "target unreachable by ctc in " +
                      std::to_string(t.value(frames_in).extent(0)) + " frames";
    return out;
  }

  out.spikes = ctc::extract_spikes(ctc::posteriors(t.value(enc.ctc_logits)), cfg.theta,
                                   cfg.merge_spike_runs);

  Var qua = cif::quantity_loss(t, enc.alpha, target_len);
  Var scaled = cif::scale_weights(t, enc.alpha, target_len);
  Var ali_alpha = cfg.align_scaled_alpha ? scaled : enc.alpha;
  auto ali = cif::alignment_loss(t, ali_alpha, out.spikes, target_len, cfg.align_half_open);

  auto fired = cif::fire(t, enc.h, scaled,
                         {1.0, cfg.residual_threshold});
  if (fired.n_fired != target_len) {
    // scale_weights guarantees this; a mismatch is a bug, not bad data
    throw std::logic_error("combined_loss: fire count != target length after scaling");
  }
  out.fire_positions = fired.fire_positions;

  std::vector<int> classes(target.size());
  for (size_t i = 0; i < target.size(); ++i) classes[i] = target[i] - 1;

  DecoderOut dec = cif_decode(t, p, cfg, fired.embeddings, enc.h);
  Var ce_cif = t.cross_entropy(dec.logits, classes);

  Var total = ce_cif;
  if (cfg.contextual_enabled) {
    Var ctx_logits = contextual_decode(t, p, cfg, dec.hidden);
    Var ce_ctx = t.cross_entropy(ctx_logits, classes);
    out.breakdown.ce_ctx = t.value(ce_ctx).at(0);
    total = total + ce_ctx;
  }
  total = total + t.scale(ali.loss, cfg.lambda1) + t.scale(ctc_node.loss, cfg.lambda2) +
          t.scale(qua, cfg.lambda3);

  out.breakdown.ce_cif = t.value(ce_cif).at(0);
  out.breakdown.ali = t.value(ali.loss).at(0);
  out.breakdown.ali_applied = ali.applied;
  out.breakdown.ctc = t.value(ctc_node.loss).at(0);
  out.breakdown.qua = t.value(qua).at(0);
  out.breakdown.total = t.value(total).at(0);
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct InferResult {
  std::vector<int> tokens;
  std::vector<int> fire_positions;
  bool residual_fired = false;
  int decoder_invocations = 0;
  double encoder_seconds = 0.0;
  double decoder_seconds = 0.0;
};

namespace detail {

inline std::vector<int> argmax_tokens(const Array& logits) {
  std::vector<int> tokens(logits.extent(0));
  for (int i = 0; i < logits.extent(0); ++i) {
    int best = 0;
    for (int j = 1; j < logits.extent(1); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    tokens[i] = best + 1;  // class j is token id j+1
  }
  return tokens;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Single-pass NAR inference: raw (unscaled) weights drive the firing scan,
// then one CIF-decoder pass and one contextual pass cover every token. The
// hypothesis is read from the contextual logits when that stage is enabled.
inline InferResult infer(const ParamStore& p, const ModelConfig& cfg, const Array& frames) {
  Tape t;
  InferResult out;
  auto t0 = std::chrono::steady_clock::now();
  Var frames_in = t.input("frames", frames);
  EncoderOut enc = encode(t, p, cfg, frames_in);
  auto fired = cif::fire(t, enc.h, enc.alpha, {1.0, cfg.residual_threshold});
  out.encoder_seconds = detail::seconds_since(t0);
  out.fire_positions = fired.fire_positions;
  out.residual_fired = fired.residual_fired;
  if (fired.n_fired == 0) return out;  // empty hypothesis

  auto t1 = std::chrono::steady_clock::now();
  DecoderOut dec = cif_decode(t, p, cfg, fired.embeddings, enc.h);
  Array logits = cfg.contextual_enabled
                     ? t.value(contextual_decode(t, p, cfg, dec.hidden)).clone()
                     : t.value(dec.logits).clone();
  out.decoder_seconds = detail::seconds_since(t1);
  out.decoder_invocations = 1;
  out.tokens = detail::argmax_tokens(logits);
  return out;
}

// Timing baseline: the same decoder run autoregressively, one invocation per
// output token over the causally-masked prefix. Shares the encoder pass with
// the NAR path.
inline InferResult ar_baseline_decode(const ParamStore& p, const ModelConfig& cfg,
                                      const Array& frames) {
  Tape t;
  InferResult out;
  auto t0 = std::chrono::steady_clock::now();
  Var frames_in = t.input("frames", frames);
  EncoderOut enc = encode(t, p, cfg, frames_in);
  auto fired = cif::fire(t, enc.h, enc.alpha, {1.0, cfg.residual_threshold});
  out.encoder_seconds = detail::seconds_since(t0);
  out.fire_positions = fired.fire_positions;
  out.residual_fired = fired.residual_fired;
  if (fired.n_fired == 0) return out;

  auto t1 = std::chrono::steady_clock::now();
  out.tokens.resize(fired.n_fired);
  for (int l = 1; l <= fired.n_fired; ++l) {
    Var prefix = t.slice_rows(fired.embeddings, 0, l);
    DecoderOut dec = cif_decode(t, p, cfg, prefix, enc.h, /*causal=*/true);
    Var logits = cfg.contextual_enabled ? contextual_decode(t, p, cfg, dec.hidden) : dec.logits;
    Array row = t.value(t.slice_rows(logits, l - 1, l)).clone();
    int best = 0;
    for (int j = 1; j < row.extent(1); ++j) {
      if (row.at(0, j) > row.at(0, best)) best = j;
    }
    out.tokens[l - 1] = best + 1;
    ++out.decoder_invocations;
  }
  out.decoder_seconds = detail::seconds_since(t1);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   magic   "CIFCKPT1"                  8 bytes
//   u32     version (= 1)
//   u32     config length; ModelConfig as UTF-8 JSON
//   u32     parameter count
//   entry   u32 name length, name bytes, u32 rank, u32 extents[rank],
//           f64 values (row-major, little-endian)
//
// Entries are sorted by name; round trips are bit-exact.
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[8] = {'C', 'I', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  synth::io::put_bytes(os, kCheckpointMagic, 8);
  synth::io::put_u32(os, kCheckpointVersion);
  std::string cfg_json = nlohmann::json(cfg).dump();
  synth::io::put_u32(os, static_cast<uint32_t>(cfg_json.size()));
  synth::io::put_bytes(os, cfg_json.data(), cfg_json.size());
  synth::io::put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, value] : params) {
    synth::io::put_u32(os, static_cast<uint32_t>(name.size()));
    synth::io::put_bytes(os, name.data(), name.size());
    synth::io::put_u32(os, static_cast<uint32_t>(value.rank()));
    for (int d = 0; d < value.rank(); ++d) {
      synth::io::put_u32(os, static_cast<uint32_t>(value.extent(d)));
    }
    for (double v : value.data()) synth::io::put_f64(os, v);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  synth::io::get_bytes(is, magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  uint32_t version = synth::io::get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  }
  uint32_t cfg_len = synth::io::get_u32(is, "config length");
  std::string cfg_json(cfg_len, '\0');
  synth::io::get_bytes(is, cfg_json.data(), cfg_len, "config");
  Checkpoint ck;
  ck.config = nlohmann::json::parse(cfg_json).get<ModelConfig>();
  uint32_t count = synth::io::get_u32(is, "parameter count");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = synth::io::get_u32(is, "name length");
    std::string name(name_len, '\0');
    synth::io::get_bytes(is, name.data(), name_len, "name");
    uint32_t rank = synth::io::get_u32(is, "rank");
    if (rank < 1 || rank > 3) throw std::runtime_error("load_checkpoint: bad rank");
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(synth::io::get_u32(is, "extent"));
    Array value(shape);
    for (auto& v : value.data()) v = synth::io::get_f64(is, "values");
    if (!value.all_finite()) throw std::runtime_error("load_checkpoint: non-finite parameter");
    ck.params[name] = std::move(value);
  }
  return ck;
}

}  // namespace cifnar::model
