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
//
// Numerical self-checks against independent oracles. Used by the
// `validate` subcommand and by the acceptance binary.

#pragma once

#include <chrono>

#include "isac/experiments.hpp"
#include "isac/oracles.hpp"

namespace isac::selfcheck {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = kInf;  // measured error or statistic
  double limit = 0.0;   // pass threshold on value
  double seconds = 0.0;
  std::string detail;
};

namespace detail {

inline double max_abs_rel(const MatrixXd& A, const MatrixXd& B) {
  return (A - B).cwiseAbs().maxCoeff() / B.cwiseAbs().maxCoeff();
}

template <class Body>
CheckResult timed(std::string name, double limit, Body body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = std::move(name);
  r.limit = limit;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.value = kInf;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.passed = std::isfinite(r.value) && r.value <= limit && r.detail.rfind("exception", 0) != 0;
  return r;
}

}  // namespace detail

/// Random desk-scale scene (16 x 4 antennas, 8 slots of 10 symbols).
inline Scenario desk_scenario(int K, std::uint64_t seed) {
  Rng rng(seed);
  Scenario base;
  apply_desk_profile(base);
  return oracle::random_scene(rng, K, base);
}

inline MatrixXcd full_power_beams(const Scenario& s, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_beamformer(rng, s.n_bs, s.n_slots, s.beam_budget());
}

/// Analytic MS and BP Jacobians against central differences of the
/// parameter maps; worst row-relative error.
inline CheckResult jacobians(int n_scenarios, std::uint64_t seed, double tol = 1e-5) {
  return detail::timed("jacobian_fd", tol, [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < n_scenarios; ++i) {
      const Scenario s = oracle::random_scene(rng, i % 5);
      worst = std::max(worst, oracle::row_rel_error(ms_jacobian(s).matrix, oracle::numeric_ms_jacobian(s)));
      worst = std::max(worst, oracle::row_rel_error(bp_jacobian(s).matrix, oracle::numeric_bp_jacobian(s)));
    }
    r.value = worst;
    r.detail = std::to_string(n_scenarios) + " scenarios, K = 0..4";
  });
}

/// Fast channel FIM against the numeric-derivative Slepian-Bangs sum.
inline CheckResult fim_oracle(int K, std::uint64_t seed, double tol = 1e-5) {
  return detail::timed("fim_brute_force", tol, [&](CheckResult& r) {
    const Scenario s = desk_scenario(K, seed);
    const MatrixXcd F = full_power_beams(s, seed + 1);
    const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
    const auto sc = decimated_subcarriers(s.n_subcarriers, kDeskSubcarriers);
    double worst = 0.0;
    for (bool exact : {false, true}) {
      const auto pm = derive_ms_params(s, seed);
      const auto pb = derive_bp_params(s, seed);
      const ChannelFimModel mm(pm, s, grid, sc, {exact}), mb(pb, s, grid, sc, {exact});
      worst = std::max(worst, oracle::fim_rel_error(mm.evaluate(F), oracle::brute_force_fim(pm, s, F, grid, sc, exact)));
      worst = std::max(worst, oracle::fim_rel_error(mb.evaluate(F), oracle::brute_force_fim(pb, s, F, grid, sc, exact)));
    }
    r.value = worst;
    r.detail = "K = " + std::to_string(K) + ", MS and BP, both coupling modes";
  });
}

/// I(A) + I(B) = I(A u B) for disjoint symbol grids.
inline CheckResult additivity(std::uint64_t seed, double tol = 1e-12) {
  return detail::timed("fim_additivity", tol, [&](CheckResult& r) {
    const Scenario s = desk_scenario(2, seed);
    const MatrixXcd F = full_power_beams(s, seed);
    const auto full = full_grid(s.n_slots, s.symbols_per_slot);
    SymbolGrid a, b;
    for (const auto& si : full) ((si.slot + si.symbol) % 3 == 0 ? a : b).push_back(si);
    const auto sc = decimated_subcarriers(s.n_subcarriers, kDeskSubcarriers);
    double worst = 0.0;
    const auto pm = derive_ms_params(s, seed);
    const auto pb = derive_bp_params(s, seed);
    worst = std::max(worst, detail::max_abs_rel(ChannelFimModel(pm, s, a, sc).evaluate(F) +
                                                    ChannelFimModel(pm, s, b, sc).evaluate(F),
                                                ChannelFimModel(pm, s, full, sc).evaluate(F)));
    worst = std::max(worst, detail::max_abs_rel(ChannelFimModel(pb, s, a, sc).evaluate(F) +
                                                    ChannelFimModel(pb, s, b, sc).evaluate(F),
                                                ChannelFimModel(pb, s, full, sc).evaluate(F)));
    r.value = worst;
  });
}

/// FIM(sqrt(c) F) = c FIM(F).
inline CheckResult power_linearity(std::uint64_t seed, double tol = 1e-12) {
  return detail::timed("fim_power_linearity", tol, [&](CheckResult& r) {
    const Scenario s = desk_scenario(2, seed);
    const MatrixXcd F = full_power_beams(s, seed);
    const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
    const auto sc = decimated_subcarriers(s.n_subcarriers, kDeskSubcarriers);
    const ChannelFimModel mm(derive_ms_params(s, seed), s, grid, sc);
    const ChannelFimModel mb(derive_bp_params(s, seed), s, grid, sc);
    double worst = 0.0;
    for (double c : {0.1, 0.5, 3.0})
      for (const ChannelFimModel* m : {&mm, &mb})
        worst = std::max(worst, detail::max_abs_rel(m->evaluate(std::sqrt(c) * F), c * m->evaluate(F)));
    r.value = worst;
  });
}

/// Schur-marginalize then invert equals invert then take the sub-block.
inline CheckResult schur_identity(std::uint64_t seed, double tol = 1e-9) {
  return detail::timed("schur_identity", tol, [&](CheckResult& r) {
    const Scenario s = desk_scenario(2, seed);
    const Beamformer F{full_power_beams(s, seed), s.beam_budget()};
    const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
    const auto sc = decimated_subcarriers(s.n_subcarriers, kDeskSubcarriers);
    const auto pos = position_fim(channel_fim(derive_bp_params(s, seed), s, F, grid, sc), bp_jacobian(s));
    const auto red = marginalize_nuisance(pos, bp_nuisance_labels());
    const auto inv_full = linalg::symmetric_pinv(pos.matrix);
    if (inv_full.singular()) throw std::runtime_error("test FIM is singular");
    const MatrixXd sub = inv_full.inverse.topLeftCorner(red.dim(), red.dim());
    r.value = oracle::fim_rel_error(linalg::symmetric_pinv(red.matrix).inverse, sub);
  });
}

/// Beamformer gradient of a weighted FIM against a central difference.
inline CheckResult fim_gradient(std::uint64_t seed, double tol = 1e-6) {
  return detail::timed("fim_gradient_fd", tol, [&](CheckResult& r) {
    const Scenario s = desk_scenario(2, seed);
    const MatrixXcd F = full_power_beams(s, seed);
    const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
    const auto sc = decimated_subcarriers(s.n_subcarriers, 16);
    Rng rng(seed + 17);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (bool exact : {false, true}) {
      const ChannelFimModel m(derive_bp_params(s, seed), s, grid, sc, {exact});
      const MatrixXd I0 = m.evaluate(F);
      MatrixXd G(m.dim(), m.dim());
      for (int i = 0; i < m.dim(); ++i)
        for (int j = 0; j <= i; ++j) G(i, j) = G(j, i) = g(rng) / std::sqrt(std::abs(I0(i, i) * I0(j, j)) + 1e-300);
      const MatrixXcd grad = m.gradient(F, G);
      const MatrixXcd dF = oracle::random_beamformer(rng, s.n_bs, s.n_slots, 1e-6 * F.squaredNorm());
      const double fd = (G.cwiseProduct(m.evaluate(F + dF)).sum() - G.cwiseProduct(m.evaluate(F - dF)).sum()) / 2.0;
      const double an = (grad.adjoint() * dF).trace().real();
      worst = std::max(worst, std::abs(fd - an) / std::abs(an));
    }
    r.value = worst;
  });
}

struct CoherenceRow {
  const char* mobility;
  double carrier_hz, speed, listed_s;
};

inline const std::vector<CoherenceRow>& coherence_rows() {
  static const std::vector<CoherenceRow> rows{{"pedestrian", 28e9, 5.0, 1.0e-3},
                                              {"vehicle (urban)", 28e9, 30.0, 180e-6},
                                              {"high-speed vehicle", 28e9, 50.0, 100e-6},
                                              {"UAV", 60e9, 50.0, 50e-6}};
  return rows;
}

/// Worst relative deviation from the listed coherence times.
inline CheckResult coherence_table(double tol = 0.1) {
  return detail::timed("coherence_table", tol, [&](CheckResult& r) {
    double worst = 0.0;
    std::ostringstream os;
    for (const auto& row : coherence_rows()) {
      const double t = coherence_time(row.carrier_hz, row.speed);
      const double e = std::abs(t - row.listed_s) / row.listed_s;
      worst = std::max(worst, e);
      os << row.mobility << ' ' << fmt_num(t * 1e6) << " us; ";
    }
    r.value = worst;
    r.detail = os.str();
  });
}

/// Two-beam single-slot P1 instance: codebook solver against a 1e-3 power
/// split grid. value = solver - grid_best - largest adjacent grid change.
inline CheckResult codebook_vs_grid(std::uint64_t seed, double resolution = 1e-3) {
  return detail::timed("codebook_vs_grid", 0.0, [&](CheckResult& r) {
    Scenario s = desk_scenario(0, seed);
    s.n_slots = 1;
    s.symbols_per_slot = 20;
    if (s.ue_velocity.norm() < 1.0) s.ue_velocity = {3.0, -2.0};
    P1Setup ps;
    ps.subcarriers = decimated_subcarriers(s.n_subcarriers, kDeskSubcarriers);
    const P1Problem prob(s, 0.0, ps);
    const MatrixXcd U = codebook_matrix(s);
    if (U.cols() != 2) throw std::runtime_error("toy codebook must have two beams");
    const double cap = s.beam_budget();
    const auto at = [&](double split) {
      MatrixXcd z(2, 1);
      z << std::sqrt(split), std::sqrt(1.0 - split);
      const MatrixXcd f = U * z;
      return prob(f * std::sqrt(cap / f.squaredNorm()), nullptr);
    };
    const int n = static_cast<int>(std::lround(1.0 / resolution));
    double best = at(0.0), prev = best, step = 0.0;
    for (int i = 1; i <= n; ++i) {
      const double v = at(i * resolution);
      best = std::min(best, v);
      if (std::isfinite(v) && std::isfinite(prev)) step = std::max(step, std::abs(v - prev));
      prev = v;
    }
    const auto out = solve_p1(s, 0.0, {}, ps);
    r.value = out.objective - best - step;
    r.detail = "solver " + fmt_num(out.objective) + ", grid " + fmt_num(best) + ", grid step " + fmt_num(step);
  });
}

/// The `validate` suite at reduced sizes.
inline std::vector<CheckResult> run_all(std::uint64_t seed = 1) {
  return {jacobians(25, seed),     fim_oracle(1, seed + 1), additivity(seed + 2),   power_linearity(seed + 3),
          schur_identity(seed + 4), fim_gradient(seed + 5), coherence_table(),       codebook_vs_grid(seed + 6)};
}

}  // namespace isac::selfcheck
