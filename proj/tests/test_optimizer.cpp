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

#include "isac/optimizer.hpp"
#include "isac/oracles.hpp"

using namespace isac;
using Catch::Approx;

namespace {

Scenario desk_scene(int K, std::uint64_t seed) {
  Rng rng(seed);
  Scenario s = oracle::random_scene(rng, K);
  s.n_bs = 16;
  s.n_ue = 4;
  s.n_slots = 8;
  s.symbols_per_slot = 10;
  return s;
}

SubcarrierSet desk_subcarriers(const Scenario& s) { return decimated_subcarriers(s.n_subcarriers, 64); }

SequentialSetup desk_setup(int K, std::uint64_t seed) {
  SequentialSetup st;
  st.scenario = desk_scene(K, seed);
  st.stream = seed;
  st.subcarriers = desk_subcarriers(st.scenario);
  return st;
}

double beam_energy(const MatrixXcd& F, const VectorXcd& a) { return (a.adjoint() * F).squaredNorm(); }

}  // namespace

TEST_CASE("project_power examples", "[optimizer]") {
  Rng rng(1);
  const MatrixXcd F = oracle::random_beamformer(rng, 4, 3, 2.0);
  const Beamformer p = project_power(F, 1.0);
  CHECK(p.trace_power() == Approx(1.0).epsilon(1e-14));
  CHECK((p.F - F / std::sqrt(2.0)).norm() < 1e-14);
  const MatrixXcd G = F * 0.5;
  CHECK(project_power(G, 1.0).F == G);
  CHECK(project_power(MatrixXcd::Zero(4, 3), 1.0).F.isZero(0.0));
  CHECK_THROWS(project_power(F, 0.0));
}

TEST_CASE("codebook examples", "[optimizer]") {
  Scenario s = desk_scene(0, 2);
  CHECK(codebook(s).size() == 2);
  s = desk_scene(2, 3);
  const auto cb = codebook(s);
  REQUIRE(cb.size() == 6);
  for (const auto& b : cb) CHECK(b.norm() == Approx(1.0).epsilon(1e-12));
  Eigen::JacobiSVD<MatrixXcd> svd(codebook_matrix(s));
  CHECK(svd.singularValues().minCoeff() > 1e-6);
  // Endfire and single-antenna derivative beams carry no energy.
  Scenario one = desk_scene(0, 4);
  one.n_bs = 1;
  CHECK(codebook(one).size() == 1);
}

TEST_CASE("solver config validation", "[optimizer]") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.rho_grid.size() == 21);
  CHECK(c.resolved_restarts() == 1);
  c.mode = SolverMode::freeform;
  CHECK(c.resolved_restarts() == 8);
  c.tolerance = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.rho_grid = {0.2, 1.3};
  CHECK_THROWS(c.validate());
}

TEST_CASE("single-antenna BS: the only free variable is the power", "[optimizer]") {
  Scenario s = desk_scene(0, 5);
  s.n_bs = 1;
  const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
  const ChannelFimModel model(derive_ms_params(s, 1), s, grid, desk_subcarriers(s), {});
  // Delay-only bound 1 / I_tau; it falls with power so the optimum is the full budget.
  const int it = ms_channel_index(0).at("tau").offset;
  const BeamObjective obj = [&](const MatrixXcd& F, MatrixXcd* g) {
    const double I = model.evaluate(F)(it, it);
    if (g) {
      MatrixXd E = MatrixXd::Zero(model.dim(), model.dim());
      E(it, it) = -1.0 / (I * I);
      *g = model.gradient(F, E);
    }
    return 1.0 / I;
  };
  SolverConfig cfg;
  const SearchSpace sp = make_space(s, cfg, std::vector<bool>(s.n_slots, true));
  MatrixXcd Z0 = sp.uniform_start() * 0.3;
  const auto r = projected_gradient(obj, sp, Z0, cfg);
  CHECK(r.F.squaredNorm() == Approx(s.beam_budget()).epsilon(1e-6));
}

// UE and targets at equal range so that path loss does not decide the split.
Scenario equal_range_scene(double range) {
  Scenario s = desk_scene(0, 12);
  const auto at = [&](double deg) { return Vec2(range * std::cos(deg * kPi / 180), range * std::sin(deg * kPi / 180)); };
  s.ue_position = at(0.0);
  s.pt_positions = {at(25.0), at(-25.0)};
  s.ue_velocity = {0.0, 8.0};
  return s;
}

TEST_CASE("P1 at alpha = 0 favours the UE beam", "[optimizer]") {
  for (double range : {20.0, 40.0, 80.0}) {
    const Scenario s = equal_range_scene(range);
    P1Setup ps;
    ps.subcarriers = desk_subcarriers(s);
    const auto out = solve_p1(s, 0.0, {}, ps);
    REQUIRE(out.converged);
    const auto p = derive_ms_params(s, 0);
    const MatrixXcd& F = out.beamformers[0].F;
    const double ue = beam_energy(F, steering_vector(s.n_bs, p.theta[0]));
    for (int k = 1; k <= 2; ++k) CHECK(ue >= beam_energy(F, steering_vector(s.n_bs, p.theta[k])));
    CHECK(out.beamformers[0].feasible(1e-9));
    const double base = P1Problem(s, 0.0, ps)(uniform_beamformer(s).F, nullptr);
    CHECK(out.objective <= base);
  }
}

TEST_CASE("P1 at alpha = 1 gives the UE less LoS energy than alpha = 0", "[optimizer]") {
  for (double range : {20.0, 40.0, 80.0}) {
    const Scenario s = equal_range_scene(range);
    P1Setup ps;
    ps.subcarriers = desk_subcarriers(s);
    const auto a0 = solve_p1(s, 0.0, {}, ps);
    const auto a1 = solve_p1(s, 1.0, {}, ps);
    REQUIRE(a0.converged);
    REQUIRE(a1.converged);
    const VectorXcd a = steering_vector(s.n_bs, derive_ms_params(s, 0).theta[0]);
    const auto share = [&](const MatrixXcd& F) { return beam_energy(F, a) / F.squaredNorm(); };
    CHECK(share(a1.beamformers[0].F) < share(a0.beamformers[0].F));
  }
}

TEST_CASE("P1 reports non-convergence on a singular objective", "[optimizer]") {
  Scenario s = desk_scene(0, 13);
  s.n_bs = 1;  // no angle information at all
  const auto out = solve_p1(s, 0.0, {});
  CHECK_FALSE(out.converged);
  CHECK(out.beamformers[0].feasible(1e-9));
}

TEST_CASE("accepted iterates never increase the objective", "[optimizer]") {
  const Scenario s = desk_scene(2, 14);
  P1Setup ps;
  ps.subcarriers = desk_subcarriers(s);
  const P1Problem prob(s, 0.5, ps);
  std::vector<double> trail;
  const BeamObjective obj = [&](const MatrixXcd& F, MatrixXcd* g) {
    const double v = prob(F, g);
    if (g) trail.push_back(v);
    return v;
  };
  for (SolverMode mode : {SolverMode::codebook, SolverMode::freeform}) {
    trail.clear();
    SolverConfig cfg;
    cfg.mode = mode;
    const SearchSpace sp = make_space(s, cfg, std::vector<bool>(s.n_slots, true));
    const auto r = projected_gradient(obj, sp, sp.uniform_start(), cfg);
    REQUIRE(trail.size() > 2);
    for (std::size_t i = 1; i < trail.size(); ++i) CHECK(trail[i] < trail[i - 1]);
    CHECK(r.F.squaredNorm() <= s.beam_budget() * (1 + 1e-9));
  }
}

TEST_CASE("best of restarts beats every single restart", "[optimizer]") {
  const Scenario s = desk_scene(1, 15);
  P1Setup ps;
  ps.subcarriers = desk_subcarriers(s);
  const P1Problem prob(s, 0.3, ps);
  SolverConfig cfg;
  cfg.mode = SolverMode::freeform;
  cfg.restarts = 4;
  cfg.max_iters = 40;
  const SearchSpace sp = make_space(s, cfg, std::vector<bool>(s.n_slots, true));
  const auto best = minimize(std::cref(prob), sp, cfg);
  for (int r = 0; r < 4; ++r) {
    const MatrixXcd Z0 = r == 0 ? sp.uniform_start() : sp.random_start(mix_seed(cfg.seed, r));
    CHECK(best.value <= projected_gradient(std::cref(prob), sp, Z0, cfg).value);
  }
}

TEST_CASE("codebook solver matches an exhaustive power split", "[optimizer]") {
  // K = 0: two beams (LoS and its derivative) in one slot.
  Scenario s = desk_scene(0, 16);
  s.n_slots = 1;
  s.symbols_per_slot = 20;
  s.ue_velocity = {3.0, -2.0};
  P1Setup ps;
  ps.subcarriers = desk_subcarriers(s);
  const P1Problem prob(s, 0.0, ps);
  const MatrixXcd U = codebook_matrix(s);
  REQUIRE(U.cols() == 2);
  const double cap = s.beam_budget();
  const auto at = [&](double split) {
    MatrixXcd z(2, 1);
    z << std::sqrt(split), std::sqrt(1.0 - split);
    const double pw = (U * z).squaredNorm();
    return prob(U * z * std::sqrt(cap / pw), nullptr);
  };
  double grid_best = kInf, step_var = 0.0;
  double prev = at(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double v = at(i * 1e-3);
    grid_best = std::min(grid_best, v);
    if (std::isfinite(v) && std::isfinite(prev)) step_var = std::max(step_var, std::abs(v - prev));
    prev = v;
  }
  const auto out = solve_p1(s, 0.0, {}, ps);
  INFO("solver " << out.objective << " grid " << grid_best << " step " << step_var);
  CHECK(out.objective <= grid_best + step_var);
}

TEST_CASE("greedy MS stage", "[optimizer]") {
  SequentialSetup st = desk_setup(2, 21);
  SolverConfig cfg;
  SECTION("unreachable-free thresholds return at the first iterate") {
    st.thresholds.peb_ue_ms = st.thresholds.peb_pt_ms = 1e30;
    const auto r = solve_greedy_fms(st, 0.5, cfg);
    CHECK(r.value == 0.0);
    CHECK(r.iterations == 0);
    CHECK(r.converged);
  }
  SECTION("beats the uniform baseline and tightening never helps") {
    const SequentialProblem prob(st, 0.5);
    const auto r = solve_greedy_fms(prob, cfg);
    const Beamformer base = uniform_beamformer(st.scenario, prob.ms_slots());
    CHECK(r.value <= prob.ms_loss(base.F, nullptr));
    CHECK(r.F.feasible(1e-9));
    SequentialSetup tight = st;
    tight.thresholds.peb_ue_ms *= 0.5;
    const SequentialProblem tprob(tight, 0.5);
    const auto rt = solve_greedy_fms(tprob, cfg);
    CHECK(rt.value >= prob.ms_loss(rt.F.F, nullptr));
    CHECK(rt.value >= r.value * (1 - 1e-3));
  }
}

TEST_CASE("separate design", "[optimizer]") {
  SequentialSetup st = desk_setup(1, 31);
  SolverConfig cfg;
  SECTION("rho = 0 leaves the single target unresolved by MS") {
    cfg.rho_grid = {0.0};
    const auto out = solve_p2_separate(st, cfg);
    CHECK(out.objective >= kSingularPenalty);
  }
  SECTION("rho = 1 keeps the posterior at the prior") {
    cfg.rho_grid = {1.0};
    const auto out = solve_p2_separate(st, cfg);
    REQUIRE(out.beamformers.size() == 2);
    const SequentialProblem prob(st, 1.0);
    const auto r = prob.evaluate(out.beamformers[0].F, out.beamformers[1].F);
    CHECK(r.posterior_fim.matrix == r.prior_fim.matrix);
  }
  SECTION("reported loss is the minimum over the grid") {
    st = desk_setup(2, 32);
    cfg.rho_grid = linear_grid(0.1, 0.9, 5);
    const auto out = solve_p2_separate(st, cfg);
    REQUIRE(out.per_rho.size() == 5);
    double m = kInf;
    for (const auto& p : out.per_rho) m = std::min(m, p.loss);
    CHECK(out.objective == m);
    const SequentialProblem prob(st, out.rho_star);
    CHECK(prob.evaluate(out.beamformers[0].F, out.beamformers[1].F).loss ==
          Approx(out.objective).epsilon(1e-12));
    for (const auto& b : out.beamformers) CHECK(b.feasible(1e-9));
  }
}

TEST_CASE("shared design", "[optimizer]") {
  SECTION("single-beam codebook: shared and separate coincide") {
    SequentialSetup st = desk_setup(0, 41);
    st.scenario.n_bs = 1;
    SolverConfig cfg;
    cfg.rho_grid = linear_grid(0.0, 1.0, 5);
    const auto a = solve_p3_shared(st, cfg);
    const auto b = solve_p2_separate(st, cfg);
    CHECK(a.objective == Approx(b.objective).epsilon(1e-6));
  }
  SECTION("consistent argmin and deterministic across thread counts") {
    const SequentialSetup st = desk_setup(2, 42);
    SolverConfig cfg;
    cfg.rho_grid = linear_grid(0.2, 0.8, 4);
    const auto a = solve_p3_shared(st, cfg);
    cfg.threads = 3;
    const auto b = solve_p3_shared(st, cfg);
    REQUIRE(a.beamformers.size() == 1);
    CHECK(a.beamformers[0].F == b.beamformers[0].F);
    CHECK(a.objective == b.objective);
    CHECK(a.rho_star == b.rho_star);
    const SequentialProblem prob(st, a.rho_star);
    CHECK(prob.evaluate(a.beamformers[0].F, a.beamformers[0].F).loss == Approx(a.objective).epsilon(1e-12));
    CHECK(a.beamformers[0].feasible(1e-9));
  }
}

TEST_CASE("freeform restarts are deterministic under threading", "[optimizer]") {
  const Scenario s = desk_scene(1, 51);
  P1Setup ps;
  ps.subcarriers = desk_subcarriers(s);
  SolverConfig cfg;
  cfg.mode = SolverMode::freeform;
  cfg.max_iters = 30;
  cfg.seed = 77;
  const auto a = solve_p1(s, 0.4, cfg, ps);
  cfg.threads = 4;
  const auto b = solve_p1(s, 0.4, cfg, ps);
  CHECK(a.beamformers[0].F == b.beamformers[0].F);
  CHECK(a.objective == b.objective);
}
