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

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cifnar/cif.hpp"
#include "cifnar/ctc.hpp"
#include "cifnar/metrics.hpp"
#include "cifnar/model.hpp"
#include "cifnar/synth.hpp"
#include "cifnar/train.hpp"

namespace cifnar::harness {

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse error in " + path + ": " + e.what());
  }
  return j.get<TrainConfig>();
}

// ---------------------------------------------------------------------------
// Visualization: alpha curve, spike curve, and an overlay SVG with the true
// token boundaries.
// ---------------------------------------------------------------------------

struct VizPaths {
  std::string alpha_csv;
  std::string spikes_csv;
  std::string svg;
};

namespace viz_detail {

inline std::string polyline(const std::vector<std::pair<double, double>>& pts,
                            const std::string& cls, const std::string& color) {
  std::ostringstream os;
  os << "  <polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
     << "\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) os << " ";
    os << pts[i].first << "," << pts[i].second;
  }
  os << "\"/>\n";
  return os.str();
}

}  // namespace viz_detail

// Overlay of the CIF weight curve, its accumulation, fire positions, CTC
// spikes, and the true acoustic boundaries (dashed vertical lines).
inline void write_overlay_svg(std::ostream& os, const std::vector<cif::ScanStep>& trace,
                              const Array& posteriors, const ctc::SpikeBoundaries& spikes,
                              const std::vector<std::pair<int, int>>& boundaries, double theta) {
  const int u_len = static_cast<int>(trace.size());
  const double px = 10.0, x0 = 45.0, y0 = 15.0, plot_h = 250.0;
  const double width = x0 + u_len * px + 20.0, height = y0 + plot_h + 35.0;
  const double y_max = 1.25;
  auto xc = [&](double u) { return x0 + (u + 0.5) * px; };
  auto yc = [&](double v) { return y0 + plot_h * (1.0 - v / y_max); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";
  // axes
  os << "  <line x1=\"" << x0 << "\" y1=\"" << yc(0) << "\" x2=\"" << x0 + u_len * px
     << "\" y2=\"" << yc(0) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "  <line x1=\"" << x0 << "\" y1=\"" << yc(0) << "\" x2=\"" << x0 << "\" y2=\"" << yc(y_max)
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (double v : {0.0, 0.5, 1.0}) {
    os << "  <text x=\"" << x0 - 28 << "\" y=\"" << yc(v) + 4 << "\" font-size=\"10\">" << v
       << "</text>\n";
  }

  // true acoustic boundaries: dashed vertical line at each token's end
  for (const auto& [start, end] : boundaries) {
    double x = x0 + end * px;
    os << "  <line class=\"boundary\" x1=\"" << x << "\" y1=\"" << yc(0) << "\" x2=\"" << x
       << "\" y2=\"" << yc(y_max) << "\" stroke=\"red\" stroke-width=\"1\" "
       << "stroke-dasharray=\"4,3\"/>\n";
  }

  // threshold beta = 1 and spike threshold theta
  os << "  <line x1=\"" << x0 << "\" y1=\"" << yc(1.0) << "\" x2=\"" << x0 + u_len * px
     << "\" y2=\"" << yc(1.0) << "\" stroke=\"gray\" stroke-width=\"0.7\" "
     << "stroke-dasharray=\"2,2\"/>\n";
  os << "  <line class=\"theta\" x1=\"" << x0 << "\" y1=\"" << yc(theta) << "\" x2=\""
     << x0 + u_len * px << "\" y2=\"" << yc(theta) << "\" stroke=\"purple\" "
     << "stroke-width=\"0.7\" stroke-dasharray=\"2,2\"/>\n";

  std::vector<std::pair<double, double>> alpha_pts, acc_pts, post_pts;
  for (int u = 0; u < u_len; ++u) {
    alpha_pts.emplace_back(xc(u), yc(trace[u].alpha));
    acc_pts.emplace_back(xc(u), yc(trace[u].accumulated));
    double best = 0.0;
    for (int k = 1; k < posteriors.extent(1); ++k) best = std::max(best, posteriors.at(u, k));
    post_pts.emplace_back(xc(u), yc(best));
  }
  os << viz_detail::polyline(alpha_pts, "alpha", "steelblue");
  os << viz_detail::polyline(acc_pts, "accumulated", "darkorange");
  os << viz_detail::polyline(post_pts, "posterior", "mediumpurple");

  for (int u = 0; u < u_len; ++u) {
    for (int f = 0; f < trace[u].fired; ++f) {
      os << "  <line class=\"fire\" x1=\"" << xc(u) << "\" y1=\"" << yc(0) << "\" x2=\"" << xc(u)
         << "\" y2=\"" << yc(1.05) << "\" stroke=\"seagreen\" stroke-width=\"1.2\"/>\n";
    }
    if (spikes.spikes[u]) {
      double best = 0.0;
      for (int k = 1; k < posteriors.extent(1); ++k) best = std::max(best, posteriors.at(u, k));
      os << "  <circle class=\"spike\" cx=\"" << xc(u) << "\" cy=\"" << yc(best)
         << "\" r=\"3\" fill=\"purple\"/>\n";
    }
  }
  os << "  <text x=\"" << x0 << "\" y=\"" << height - 8 << "\" font-size=\"10\">"
     << "alpha (blue), accumulated (orange), non-blank posterior (light purple), "
     << "fires (green), spikes (dots), true boundaries (red dashed)</text>\n";
  os << "</svg>\n";
}

inline VizPaths visualize(const model::ParamStore& params, const model::ModelConfig& cfg,
                          const synth::Utterance& utt, const std::string& out_prefix) {
  Tape t;
  Var frames = t.input("frames", utt.frames);
  auto enc = model::encode(t, params, cfg, frames);
  const Array alpha = t.value(enc.alpha);
  const Array post = ctc::posteriors(t.value(enc.ctc_logits));
  auto spikes = ctc::extract_spikes(post, cfg.theta, cfg.merge_spike_runs);
  auto trace = cif::scan_trace(alpha, {1.0, cfg.residual_threshold});

  VizPaths paths;
  paths.alpha_csv = out_prefix + ".alpha.csv";
  paths.spikes_csv = out_prefix + ".spikes.csv";
  paths.svg = out_prefix + ".svg";
  {
    std::ofstream os(paths.alpha_csv);
    if (!os) throw std::runtime_error("visualize: cannot open " + paths.alpha_csv);
    cif::write_alpha_csv(os, trace);
  }
  {
    std::ofstream os(paths.spikes_csv);
    if (!os) throw std::runtime_error("visualize: cannot open " + paths.spikes_csv);
    ctc::write_spike_csv(os, post, spikes);
  }
  {
    std::ofstream os(paths.svg);
    if (!os) throw std::runtime_error("visualize: cannot open " + paths.svg);
    write_overlay_svg(os, trace, post, spikes, utt.boundaries, cfg.theta);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Latency bench: decoder wall time, NAR single pass vs AR one-pass-per-token.
// ---------------------------------------------------------------------------

struct BenchBucket {
  int len_lo = 0;
  int len_hi = 0;
  int n = 0;
  double nar_seconds = 0.0;
  double ar_seconds = 0.0;
  double ratio = 0.0;
};

// Synthetic frames carry no real duration; RTF-style figures use a nominal
// 10 ms frame period as the denominator.
constexpr double kNominalFramePeriod = 0.01;

struct BenchReport {
  std::vector<BenchBucket> buckets;
  double nar_seconds = 0.0;
  double ar_seconds = 0.0;
  double nar_latency_ratio = 0.0;
  double total_audio_seconds = 0.0;  // frames * nominal period
  double nar_rtf = 0.0;              // decoder time / nominal audio time
  double ar_rtf = 0.0;
  bool invocations_ok = true;  // NAR = 1 and AR = output length on every utterance
};

inline void to_json(nlohmann::json& j, const BenchBucket& b) {
  j = nlohmann::json{{"len_lo", b.len_lo},           {"len_hi", b.len_hi},
                     {"n", b.n},                     {"nar_seconds", b.nar_seconds},
                     {"ar_seconds", b.ar_seconds},   {"ratio", b.ratio}};
}

inline void to_json(nlohmann::json& j, const BenchReport& r) {
  j = nlohmann::json{{"buckets", r.buckets},
                     {"nar_seconds", r.nar_seconds},
                     {"ar_seconds", r.ar_seconds},
                     {"nar_latency_ratio", r.nar_latency_ratio},
                     {"total_audio_seconds", r.total_audio_seconds},
                     {"nar_rtf", r.nar_rtf},
                     {"ar_rtf", r.ar_rtf},
                     {"invocations_ok", r.invocations_ok}};
}

inline BenchReport bench(const model::ParamStore& params, const model::ModelConfig& cfg,
                         const std::vector<synth::Utterance>& utterances,
                         std::vector<std::pair<int, int>> bucket_ranges = {{2, 4}, {5, 7}, {8, 10}}) {
  BenchReport report;
  for (auto& [lo, hi] : bucket_ranges) {
    BenchBucket b;
    b.len_lo = lo;
    b.len_hi = hi;
    report.buckets.push_back(b);
  }
  for (const auto& utt : utterances) {
    auto nar = model::infer(params, cfg, utt.frames);
    if (nar.tokens.empty()) continue;
    auto ar = model::ar_baseline_decode(params, cfg, utt.frames);
    int out_len = static_cast<int>(nar.tokens.size());
    if (nar.decoder_invocations != 1 ||
        ar.decoder_invocations != static_cast<int>(ar.tokens.size())) {
      report.invocations_ok = false;
    }
    report.nar_seconds += nar.decoder_seconds;
    report.ar_seconds += ar.decoder_seconds;
    report.total_audio_seconds += utt.frames.extent(0) * kNominalFramePeriod;
    for (auto& b : report.buckets) {
      if (out_len >= b.len_lo && out_len <= b.len_hi) {
        ++b.n;
        b.nar_seconds += nar.decoder_seconds;
        b.ar_seconds += ar.decoder_seconds;
      }
    }
  }
  for (auto& b : report.buckets) {
    if (b.nar_seconds > 0) b.ratio = b.ar_seconds / b.nar_seconds;
  }
  if (report.nar_seconds > 0) report.nar_latency_ratio = report.ar_seconds / report.nar_seconds;
  if (report.total_audio_seconds > 0) {
    report.nar_rtf = report.nar_seconds / report.total_audio_seconds;
    report.ar_rtf = report.ar_seconds / report.total_audio_seconds;
  }
  return report;
}

}  // namespace cifnar::harness
