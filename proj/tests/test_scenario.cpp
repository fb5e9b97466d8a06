// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The isac-crlb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include <catch_amalgamated.hpp>

#include "isac/oracles.hpp"
#include "isac/scenario.hpp"

using namespace isac;
using Catch::Approx;

TEST_CASE("coherence time for the mobility classes", "[scenario]") {
  CHECK(coherence_time(28e9, 5.0) == Approx(1.0707e-3).epsilon(1e-3));
  CHECK(coherence_time(60e9, 50.0) == Approx(49.96e-6).epsilon(1e-3));
  CHECK(coherence_time(28e9, 50.0) == Approx(107.07e-6).epsilon(1e-3));
  CHECK(std::isinf(coherence_time(28e9, 0.0)));
  CHECK_THROWS(coherence_time(0.0, 1.0));
  CHECK_THROWS(coherence_time(28e9, -1.0));
}

TEST_CASE("symbol start times", "[scenario]") {
  const double ts = 8.53e-6, tl = 853e-6;
  CHECK(symbol_start_time(1, 1, tl, ts) == 0.0);
  CHECK(symbol_start_time(2, 1, tl, ts) == Approx(853e-6));
  CHECK(symbol_start_time(1, 2, tl, ts) == Approx(8.53e-6));
  CHECK_THROWS_AS(symbol_start_time(0, 1, tl, ts), std::out_of_range);
  CHECK_THROWS_AS(symbol_start_time(1, 0, tl, ts), std::out_of_range);
}

TEST_CASE("effective slots", "[scenario]") {
  Scenario s;
  CHECK(effective_slots(s) == s.n_slots);  // static UE
  s.ue_velocity = {5.0, 0.0};
  CHECK(effective_slots(s) == 1);

  // Halving P never lowers L_eff.
  Scenario d;
  d.n_slots = 8;
  d.symbols_per_slot = 10;
  for (double v : {1.0, 5.0, 15.0, 30.0, 60.0}) {
    d.ue_velocity = {v, 0.0};
    const int l_full = effective_slots(d);
    Scenario h = d;
    h.symbols_per_slot = 5;
    CHECK(effective_slots(h) >= l_full);
  }
}

TEST_CASE("desk-scale effective slots shrink with speed", "[scenario]") {
  Scenario s;
  s.n_slots = 8;
  s.symbols_per_slot = 10;
  std::vector<int> l;
  for (double v : {5.0, 15.0, 30.0}) {
    s.ue_velocity = {0.0, v};
    l.push_back(effective_slots(s));
  }
  CHECK(l == std::vector<int>{8, 4, 2});
}

TEST_CASE("monostatic parameters", "[scenario]") {
  Scenario s;
  s.ue_position = {100.0, 0.0};
  const auto p = derive_ms_params(s, 7);
  CHECK(p.delay[0] == Approx(200.0 / kSpeedOfLight).epsilon(1e-14));
  CHECK(p.delay[0] == Approx(667.1e-9).epsilon(1e-4));
  CHECK(p.theta[0] == Approx(0.0).margin(1e-15));

  // Broadside UE moving tangentially: no radial Doppler.
  s.ue_velocity = {0.0, 12.0};
  CHECK(derive_ms_params(s, 7).doppler == Approx(0.0).margin(1e-9));

  s.pt_positions = {{30.0, 40.0}};
  const auto a = derive_ms_params(s, 99), b = derive_ms_params(s, 99);
  CHECK(a.gain == b.gain);
  CHECK(a.flatten().size() == 9);
}

TEST_CASE("bistatic parameters", "[scenario]") {
  Scenario s;
  s.pt_positions = {{20.0, -30.0}, {60.0, 25.0}};
  const auto p = derive_bp_params(s, 3);
  for (double nu : p.doppler) CHECK(nu == 0.0);

  Scenario t = s;
  t.clock_bias_s = s.clock_bias_s + 1e-6;
  const auto q = derive_bp_params(t, 3);
  for (int k = 0; k < 3; ++k) CHECK(q.delay[k] - p.delay[k] == Approx(1e-6).epsilon(1e-9));

  // NLoS longer than LoS.
  for (int k = 1; k < 3; ++k) CHECK(p.delay[k] > p.delay[0]);

  Scenario z;
  CHECK(derive_bp_params(z, 1).flatten().size() == 6);
}

TEST_CASE("flattened lengths for K = 0..6", "[scenario]") {
  Rng rng(11);
  for (int K = 0; K <= 6; ++K) {
    const Scenario s = oracle::random_scene(rng, K);
    CHECK(derive_ms_params(s, 1).flatten().size() == 4 * K + 5);
    CHECK(derive_bp_params(s, 1).flatten().size() == 6 * K + 6);
  }
}

TEST_CASE("Doppler sign and zero conditions", "[scenario]") {
  Scenario s;
  s.ue_position = {30.0, 40.0};
  s.ue_velocity = {3.0, 4.0};
  const double ms = derive_ms_params(s, 0).doppler;
  const double bp = derive_bp_params(s, 0).doppler[0];
  CHECK(ms > 0.0);  // receding UE
  CHECK(bp < 0.0);
  CHECK(ms == Approx(-2.0 * bp));
  s.ue_velocity = -s.ue_velocity;
  CHECK(derive_ms_params(s, 0).doppler == Approx(-ms));
  CHECK(derive_bp_params(s, 0).doppler[0] == Approx(-bp));
  s.ue_velocity = {-4.0, 3.0};
  CHECK(derive_ms_params(s, 0).doppler == Approx(0.0).margin(1e-9));
  CHECK(derive_bp_params(s, 0).doppler[0] == Approx(0.0).margin(1e-9));
}

TEST_CASE("geometry and scenario validation", "[scenario]") {
  Scenario s;
  s.ue_position = s.bs_position;
  CHECK_THROWS_AS(derive_ms_params(s, 0), GeometryError);
  Scenario t;
  t.pt_positions = {t.bs_position};
  CHECK_THROWS_AS(derive_bp_params(t, 0), GeometryError);
  Scenario u;
  u.power_budget_w = -1.0;
  CHECK_THROWS_AS(u.validate(), ScenarioError);
  Scenario v;
  v.n_bs = 0;
  CHECK_THROWS_AS(v.validate(), ScenarioError);
}

TEST_CASE("shadowing draws from the stream", "[scenario]") {
  Scenario s;
  s.noise.shadowing = true;
  const auto a = derive_ms_params(s, 5), b = derive_ms_params(s, 5), c = derive_ms_params(s, 6);
  CHECK(a.gain == b.gain);
  CHECK(std::abs(a.gain[0]) != std::abs(c.gain[0]));
}

TEST_CASE("noise power and budgets", "[scenario]") {
  Scenario s;
  // -173 dBm/Hz, 10 dB NF, 120 MHz / 1024.
  const double expect = 10.0 * std::pow(10.0, -20.3) * 120e6 / 1024;
  CHECK(s.noise_power() == Approx(expect).epsilon(1e-12));
  CHECK(s.beam_budget() == Approx(1e-5 / 1024));
  CHECK(s.symbol_duration() == Approx(8.533e-6).epsilon(1e-3));
}

TEST_CASE("threshold validation", "[scenario]") {
  ThresholdSet t;
  CHECK_NOTHROW(t.validate());
  t.peb_pt_bp = 0.0;
  CHECK_THROWS(t.validate());
  ThresholdSet w;
  w.w_peb_ue_ms = -1.0;
  CHECK_THROWS(w.validate());
}
