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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cifnar/array.hpp"
#include "cifnar/rng.hpp"

namespace cifnar::synth {

// Segmental utterance generator: each token emits a run of frames equal to a
// fixed per-token prototype vector plus isotropic Gaussian noise, so the
// ground-truth acoustic boundaries are exact by construction.
struct TaskSpec {
  int vocab_size = 16;
  int feature_dim = 16;
  int dur_min = 4;
  int dur_max = 12;
  int len_min = 2;
  int len_max = 10;
  double noise_std = 0.3;
  uint64_t prototype_seed = 7;

  void validate() const {
    if (vocab_size < 1 || feature_dim < 1) throw std::runtime_error("TaskSpec: bad dimensions");
    if (!(1 <= dur_min && dur_min <= dur_max)) throw std::runtime_error("TaskSpec: bad durations");
    if (!(1 <= len_min && len_min <= len_max)) throw std::runtime_error("TaskSpec: bad lengths");
    if (noise_std < 0) throw std::runtime_error("TaskSpec: negative noise_std");
  }
};

struct Utterance {
  Array frames;                               // {T, feature_dim}
  std::vector<int> tokens;                    // length L, ids in [1, vocab_size]
  std::vector<std::pair<int, int>> boundaries;  // [start, end) per token, tiling [0, T)
};

// Per-token prototype vectors, drawn once from prototype_seed.
inline Array prototypes(const TaskSpec& spec) {
  Rng rng(spec.prototype_seed);
  Array protos({spec.vocab_size, spec.feature_dim});
  for (auto& v : protos.data()) v = rng.normal();
  return protos;
}

inline Utterance generate(const TaskSpec& spec, uint64_t seed) {
  spec.validate();
  Array protos = prototypes(spec);
  Rng rng(seed_mix(seed, 0xC1FADA7AULL));

  int len = rng.uniform_int(spec.len_min, spec.len_max);
  Utterance utt;
  utt.tokens.resize(len);
  std::vector<int> durations(len);
  int total = 0;
  for (int i = 0; i < len; ++i) {
    utt.tokens[i] = rng.uniform_int(1, spec.vocab_size);
    durations[i] = rng.uniform_int(spec.dur_min, spec.dur_max);
    total += durations[i];
  }
  utt.frames = Array({total, spec.feature_dim});
  int frame = 0;
  for (int i = 0; i < len; ++i) {
    int start = frame;
    for (int f = 0; f < durations[i]; ++f, ++frame) {
      for (int c = 0; c < spec.feature_dim; ++c) {
        utt.frames.at(frame, c) =
            protos.at(utt.tokens[i] - 1, c) + spec.noise_std * rng.normal();
      }
    }
    utt.boundaries.emplace_back(start, frame);
  }
  return utt;
}

// Nearest-prototype frame classifier; the boundary-metric oracle at zero
// noise.
inline int classify_frame(const Array& protos, const Array& frames, int frame) {
  int best = 1;
  double best_d = 0.0;
  for (int k = 0; k < protos.extent(0); ++k) {
    double d = 0.0;
    for (int c = 0; c < protos.extent(1); ++c) {
      double diff = frames.at(frame, c) - protos.at(k, c);
      d += diff * diff;
    }
    if (k == 0 || d < best_d) {
      best_d = d;
      best = k + 1;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Dataset file: little-endian, length-prefixed records.
//
//   magic   "CIFDATA1"                  8 bytes
//   u32     version (= 1)
//   header  TaskSpec: u32 vocab_size, u32 feature_dim, u32 dur_min,
//           u32 dur_max, u32 len_min, u32 len_max, f64 noise_std,
//           u64 prototype_seed
//   u64     record count
//   record  u32 T, u32 L, f64 frames[T*feature_dim] row-major,
//           u32 tokens[L], u32 boundary pairs[2*L] (start, end)
// ---------------------------------------------------------------------------

namespace io {

constexpr char kMagic[8] = {'C', 'I', 'F', 'D', 'A', 'T', 'A', '1'};
constexpr uint32_t kVersion = 1;

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<uint64_t>(v)); }

inline void get_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("dataset parse error: truncated while reading ") + what);
  }
}

inline uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  get_bytes(is, b, 8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_u64(is, what));
}

}  // namespace io

inline void write_dataset(const std::vector<Utterance>& utterances, const TaskSpec& spec,
                          const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_dataset: cannot open " + path);
  io::put_bytes(os, io::kMagic, 8);
  io::put_u32(os, io::kVersion);
  io::put_u32(os, static_cast<uint32_t>(spec.vocab_size));
  io::put_u32(os, static_cast<uint32_t>(spec.feature_dim));
  io::put_u32(os, static_cast<uint32_t>(spec.dur_min));
  io::put_u32(os, static_cast<uint32_t>(spec.dur_max));
  io::put_u32(os, static_cast<uint32_t>(spec.len_min));
  io::put_u32(os, static_cast<uint32_t>(spec.len_max));
  io::put_f64(os, spec.noise_std);
  io::put_u64(os, spec.prototype_seed);
  io::put_u64(os, utterances.size());
  for (const auto& u : utterances) {
    io::put_u32(os, static_cast<uint32_t>(u.frames.extent(0)));
    io::put_u32(os, static_cast<uint32_t>(u.tokens.size()));
    for (double v : u.frames.data()) io::put_f64(os, v);
    for (int t : u.tokens) io::put_u32(os, static_cast<uint32_t>(t));
    for (auto& [s, e] : u.boundaries) {
      io::put_u32(os, static_cast<uint32_t>(s));
      io::put_u32(os, static_cast<uint32_t>(e));
    }
  }
  if (!os) throw std::runtime_error("write_dataset: write failed for " + path);
}

struct Dataset {
  TaskSpec spec;
  std::vector<Utterance> utterances;
};

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_dataset: cannot open " + path);
  char magic[8];
  io::get_bytes(is, magic, 8, "magic");
  if (std::memcmp(magic, io::kMagic, 8) != 0) {
    throw std::runtime_error("dataset parse error: bad magic in " + path);
  }
  uint32_t version = io::get_u32(is, "version");
  if (version != io::kVersion) {
    throw std::runtime_error("dataset parse error: unsupported version " +
                             std::to_string(version));
  }
  Dataset ds;
  ds.spec.vocab_size = static_cast<int>(io::get_u32(is, "vocab_size"));
  ds.spec.feature_dim = static_cast<int>(io::get_u32(is, "feature_dim"));
  ds.spec.dur_min = static_cast<int>(io::get_u32(is, "dur_min"));
  ds.spec.dur_max = static_cast<int>(io::get_u32(is, "dur_max"));
  ds.spec.len_min = static_cast<int>(io::get_u32(is, "len_min"));
  ds.spec.len_max = static_cast<int>(io::get_u32(is, "len_max"));
  ds.spec.noise_std = io::get_f64(is, "noise_std");
  ds.spec.prototype_seed = io::get_u64(is, "prototype_seed");
  uint64_t count = io::get_u64(is, "record count");
  ds.utterances.reserve(count);
  for (uint64_t r = 0; r < count; ++r) {
    uint32_t frames = io::get_u32(is, "frame count");
    uint32_t len = io::get_u32(is, "token count");
    if (frames == 0) throw std::runtime_error("dataset parse error: empty utterance");
    Utterance u;
    u.frames = Array({static_cast<int>(frames), ds.spec.feature_dim});
    for (auto& v : u.frames.data()) v = io::get_f64(is, "frame data");
    u.tokens.resize(len);
    for (auto& t : u.tokens) t = static_cast<int>(io::get_u32(is, "token"));
    u.boundaries.resize(len);
    for (auto& [s, e] : u.boundaries) {
      s = static_cast<int>(io::get_u32(is, "boundary start"));
      e = static_cast<int>(io::get_u32(is, "boundary end"));
    }
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

}  // namespace cifnar::synth
