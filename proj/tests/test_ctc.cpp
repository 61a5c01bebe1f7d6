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

#include <catch2/catch_amalgamated.hpp>

#include "cifnar/ctc.hpp"
#include "cifnar/rng.hpp"

using namespace cifnar;

namespace {

Array random_logits(Rng& rng, int u, int classes) {
  Array a({u, classes});
  for (auto& v : a.data()) v = rng.uniform(-2.0, 2.0);
  return a;
}

}  // namespace

TEST_CASE("ctc_loss: single frame, uniform logits") {
  Tape t;
  Var logits = t.input("logits", Array::zeros({1, 2}));
  auto r = ctc::loss(t, logits, {1});
  REQUIRE(r.reachable);
  CHECK(t.value(r.loss).at(0) == Catch::Approx(-std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("ctc_loss: empty target is the all-blank path") {
  Tape t;
  Rng rng(5);
  Array logits = random_logits(rng, 2, 4);
  Var lv = t.input("logits", logits);
  auto r = ctc::loss(t, lv, {});
  REQUIRE(r.reachable);
  Array post = ctc::posteriors(logits);
  double expect = -std::log(post.at(0, 0)) - std::log(post.at(1, 0));
  CHECK(t.value(r.loss).at(0) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("brute force: trivial and unreachable cases") {
  CHECK(ctc::brute_force_nll(Array::zeros({1, 2}), {1}).nll ==
        Catch::Approx(-std::log(0.5)).epsilon(1e-12));
  // "1,1" cannot fit in two frames: collapsing needs a separating blank
  auto bf = ctc::brute_force_nll(Array::zeros({2, 2}), {1, 1});
  CHECK_FALSE(bf.reachable);
  CHECK(ctc::min_frames({1, 1}) == 3);

  Tape t;
  Rng rng(17);
  Array logits = random_logits(rng, 3, 3);
  auto r = ctc::loss(t, t.input("l", logits), {1, 2});
  auto oracle = ctc::brute_force_nll(logits, {1, 2});
  REQUIRE(r.reachable);
  REQUIRE(oracle.reachable);
  CHECK(t.value(r.loss).at(0) == Catch::Approx(oracle.nll).margin(1e-9));
}

TEST_CASE("ctc_loss matches brute force on random instances") {
  Rng rng(20260810);
  int checked = 0;
  for (int rep = 0; rep < 60; ++rep) {
    int u = rng.uniform_int(1, 8);
    int v = rng.uniform_int(1, 3);
    int l = rng.uniform_int(0, 4);
    std::vector<int> target(l);
    for (auto& x : target) x = rng.uniform_int(1, v);
    Array logits = random_logits(rng, u, v + 1);

    Tape t;
    auto r = ctc::loss(t, t.input("l", logits), target);
    auto oracle = ctc::brute_force_nll(logits, target);
    REQUIRE(r.reachable == oracle.reachable);
    if (r.reachable) {
      CHECK(t.value(r.loss).at(0) == Catch::Approx(oracle.nll).margin(1e-9));
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("ctc_loss is permutation-sensitive") {
  Rng rng(31);
  int seen = 0;
  while (seen < 10) {
    int u = rng.uniform_int(4, 8);
    std::vector<int> target = {rng.uniform_int(1, 3), rng.uniform_int(1, 3),
                               rng.uniform_int(1, 3)};
    std::vector<int> reversed(target.rbegin(), target.rend());
    if (target == reversed) continue;
    Array logits = random_logits(rng, u, 4);
    Tape t;
    auto fwd = ctc::loss(t, t.input("l", logits), target);
    Tape t2;
    auto rev = ctc::loss(t2, t2.input("l", logits), reversed);
    if (!fwd.reachable || !rev.reachable) continue;
    CHECK(t.value(fwd.loss).at(0) != t2.value(rev.loss).at(0));
    ++seen;
  }
}

TEST_CASE("ctc_loss gradient at T = 6") {
  Rng rng(47);
  Tape t;
  Var logits = t.input("logits", random_logits(rng, 6, 4));
  auto r = ctc::loss(t, logits, {2, 1, 3});
  REQUIRE(r.reachable);
  CHECK(t.grad_check(r.loss, 1e-5) <= 1e-4);
}

TEST_CASE("posteriors: uniform, saturated, normalized rows") {
  Array logits = Array::zeros({1, 4});
  Array p = ctc::posteriors(logits);
  for (int j = 0; j < 4; ++j) CHECK(p.at(0, j) == Catch::Approx(0.25).epsilon(1e-12));

  Array hot({1, 3}, {0.0, 1000.0, 0.0});
  CHECK(ctc::posteriors(hot).at(0, 1) == Catch::Approx(1.0).epsilon(1e-12));

  Rng rng(3);
  Array r = random_logits(rng, 7, 5);
  Array pr = ctc::posteriors(r);
  for (int u = 0; u < 7; ++u) {
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += pr.at(u, j);
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("extract_spikes reproduces the documented boundary sequence") {
  // Construct posteriors whose spike indicator is [0,0,1,0,0,1,0,1,0].
  std::vector<int> spikes = {0, 0, 1, 0, 0, 1, 0, 1, 0};
  Array post({9, 3});
  for (int u = 0; u < 9; ++u) {
    if (spikes[u]) {
      post.at(u, 0) = 0.1;
      post.at(u, 1) = 0.8;
      post.at(u, 2) = 0.1;
    } else {
      post.at(u, 0) = 0.8;
      post.at(u, 1) = 0.1;
      post.at(u, 2) = 0.1;
    }
  }
  auto sb = ctc::extract_spikes(post, 0.5);
  CHECK(sb.spikes == spikes);
  CHECK(sb.boundaries == std::vector<int>{0, 2, 5, 7});
  CHECK(sb.spike_count == 3);
}

TEST_CASE("extract_spikes: degenerate outputs") {
  Array post({4, 3});
  for (int u = 0; u < 4; ++u) {
    post.at(u, 0) = 0.9;
    post.at(u, 1) = 0.05;
    post.at(u, 2) = 0.05;
  }
  auto sb = ctc::extract_spikes(post, 0.5);
  CHECK(sb.spike_count == 0);
  CHECK(sb.boundaries == std::vector<int>{0});

  Array near_uniform = Array::full({5, 4}, 0.25);
  auto sb2 = ctc::extract_spikes(near_uniform, 0.999);
  CHECK(sb2.boundaries == std::vector<int>{0});
}

TEST_CASE("spike properties: ordering and theta monotonicity") {
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    int u = rng.uniform_int(1, 20);
    Array logits = random_logits(rng, u, rng.uniform_int(2, 5));
    Array post = ctc::posteriors(logits);
    int prev_count = u + 1;
    for (double theta : {0.2, 0.4, 0.6, 0.8}) {
      auto sb = ctc::extract_spikes(post, theta);
      CHECK(sb.boundaries.front() == 0);
      for (size_t i = 1; i < sb.boundaries.size(); ++i) {
        CHECK(sb.boundaries[i] > sb.boundaries[i - 1]);
      }
      // entries after the sentinel are the spike frames (frame 0 merges in)
      std::vector<int> expect = {0};
      for (int f = 1; f < u; ++f) {
        if (sb.spikes[f]) expect.push_back(f);
      }
      CHECK(sb.boundaries == expect);
      CHECK(sb.spike_count <= prev_count);
      prev_count = sb.spike_count;
    }
  }
}

TEST_CASE("spike csv dump has one row per frame") {
  Rng rng(9);
  Array post = ctc::posteriors(random_logits(rng, 6, 4));
  auto sb = ctc::extract_spikes(post, 0.5);
  std::ostringstream os;
  ctc::write_spike_csv(os, post, sb);
  std::string text = os.str();
  int lines = 0;
  for (char c : text) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 7);  // header + 6 frames
  CHECK(text.rfind("frame_index,p_blank,p_max_nonblank,argmax_token,is_spike", 0) == 0);
}
