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
// Beamformer design by projected gradient with backtracking.
//
// Power model: every active slot column obeys ||f_l||^2 <= P_B / (M L), so
// tr(F F^H) <= P_B / M for any set of active slots, and two phases that
// split the frame never draw more than one frame's worth of energy.

#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "isac/parallel.hpp"
#include "isac/sequential.hpp"

namespace isac {

enum class SolverMode { codebook, freeform };

inline std::vector<double> linear_grid(double lo, double hi, int n) {
  std::vector<double> g(std::max(n, 1));
  if (n <= 1) {
    g[0] = lo;
    return g;
  }
  for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  return g;
}

struct SolverConfig {
  SolverMode mode = SolverMode::codebook;
  int max_iters = 300;
  double step_init = 0.1;   // fraction of sqrt(budget)
  double tolerance = 1e-6;  // relative objective change
  int restarts = -1;        // < 0: 1 (codebook) or 8 (freeform)
  std::vector<double> rho_grid = linear_grid(0.0, 1.0, 21);
  std::uint64_t seed = 1;
  int threads = 1;  // restarts and rho points

  int resolved_restarts() const {
    if (restarts >= 0) return std::max(restarts, 1);
    return mode == SolverMode::codebook ? 1 : 8;
  }
  void validate() const {
    if (!(tolerance > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
    if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
    if (!(step_init > 0.0)) throw std::invalid_argument("step_init must be positive");
    if (rho_grid.empty()) throw std::invalid_argument("rho grid must be non-empty");
    for (double r : rho_grid)
      if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("rho grid values must lie in [0, 1]");
  }
};

struct RhoPoint {
  double rho = 0.0;
  double loss = kInf;
  bool ok = false;
  std::string error;
  int iterations = 0;
  double wall_time_s = 0.0;
  BoundReport bounds;  // posterior bounds of this point's beamformers
};

struct OptimizationOutcome {
  std::vector<Beamformer> beamformers;  // one (P1, P3) or two (P2: MS, BP)
  double rho_star = std::numeric_limits<double>::quiet_NaN();
  double objective = kInf;
  double trace_used = 0.0;
  int iterations = 0;
  bool converged = false;
  double wall_time_s = 0.0;
  std::vector<RhoPoint> per_rho;
};

/// Scales F onto tr(F F^H) <= budget when it exceeds it.
inline Beamformer project_power(const MatrixXcd& F, double budget) {
  if (!(budget > 0.0)) throw std::invalid_argument("budget must be positive");
  const double tr = F.squaredNorm();
  if (tr <= budget) return {F, budget};
  return {F * std::sqrt(budget / tr), budget};
}

/// Unit-norm beams toward every path and their angle derivatives. Columns
/// with no energy (derivative at N_B = 1 or at endfire) are dropped.
inline std::vector<VectorXcd> codebook(const Scenario& s) {
  const auto p = derive_ms_params(s, 0);
  std::vector<VectorXcd> beams;
  for (double th : p.theta) beams.push_back(steering_vector(s.n_bs, th).normalized());
  for (double th : p.theta) {
    const VectorXcd d = steering_derivative(s.n_bs, th);
    if (d.norm() > 1e-12 * std::sqrt(static_cast<double>(s.n_bs))) beams.push_back(d.normalized());
  }
  return beams;
}

inline MatrixXcd codebook_matrix(const Scenario& s) {
  const auto beams = codebook(s);
  MatrixXcd U(s.n_bs, beams.size());
  for (std::size_t b = 0; b < beams.size(); ++b) U.col(b) = beams[b];
  return U;
}

// ---------------------------------------------------------------------------
// Generic projected-gradient search

/// Objective on F; fills *grad with dJ/dF (dJ = Re tr(G^H dF)) when non-null.
using BeamObjective = std::function<double(const MatrixXcd&, MatrixXcd*)>;

struct SearchSpace {
  SolverMode mode = SolverMode::codebook;
  MatrixXcd U;              // codebook (N_B x B)
  std::vector<bool> active; // per slot
  double slot_cap = 0.0;    // per-slot power
  int n_bs = 0;

  int slots() const { return static_cast<int>(active.size()); }

  MatrixXcd to_beamformer(const MatrixXcd& Z) const { return mode == SolverMode::codebook ? MatrixXcd(U * Z) : Z; }

  MatrixXcd pull_gradient(const MatrixXcd& G) const {
    if (mode == SolverMode::freeform) return G;
    return (U.adjoint() * G).real().cast<cplx>();
  }

  void project(MatrixXcd& Z) const {
    if (mode == SolverMode::codebook) Z = Z.real().cwiseMax(0.0).cast<cplx>();
    for (int l = 0; l < slots(); ++l) {
      if (!active[l]) {
        Z.col(l).setZero();
        continue;
      }
      const double pw = mode == SolverMode::codebook ? (U * Z.col(l)).squaredNorm() : Z.col(l).squaredNorm();
      if (pw > slot_cap) Z.col(l) *= std::sqrt(slot_cap / pw);
    }
  }

  /// Equal weight on every beam plus one emphasised beam that rotates with
  /// the slot, at full power in every active slot. A slot-invariant pattern
  /// would fold each AoD into its path gain on the downlink.
  MatrixXcd uniform_start() const {
    const int B = static_cast<int>(U.cols());
    MatrixXcd Z = MatrixXcd::Zero(B, slots());
    for (int l = 0; l < slots(); ++l) {
      if (!active[l] || B == 0) continue;
      VectorXcd z = VectorXcd::Ones(B);
      if (B > 1) z(l % B) += 1.0;
      const double pw = (U * z).squaredNorm();
      if (pw > 0.0) Z.col(l) = z * std::sqrt(slot_cap / pw);
    }
    if (mode == SolverMode::freeform) return U * Z;
    return Z;
  }

  MatrixXcd random_start(std::uint64_t stream) const {
    Rng rng = make_rng(stream);
    MatrixXcd Z;
    if (mode == SolverMode::codebook) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Z = MatrixXcd::Zero(U.cols(), slots());
      for (Eigen::Index i = 0; i < Z.rows(); ++i)
        for (Eigen::Index j = 0; j < Z.cols(); ++j) Z(i, j) = u(rng);
    } else {
      std::normal_distribution<double> g(0.0, 1.0);
      Z = MatrixXcd::Zero(n_bs, slots());
      for (Eigen::Index i = 0; i < Z.rows(); ++i)
        for (Eigen::Index j = 0; j < Z.cols(); ++j) Z(i, j) = cplx(g(rng), g(rng));
    }
    // Scale every active slot to full power.
    for (int l = 0; l < slots(); ++l) {
      if (!active[l]) {
        Z.col(l).setZero();
        continue;
      }
      const double pw = mode == SolverMode::codebook ? (U * Z.col(l)).squaredNorm() : Z.col(l).squaredNorm();
      if (pw > 0.0) Z.col(l) *= std::sqrt(slot_cap / pw);
    }
    return Z;
  }
};

struct SearchResult {
  MatrixXcd F;
  double value = kInf;
  int iterations = 0;
  bool converged = false;
};

inline SearchResult projected_gradient(const BeamObjective& obj, const SearchSpace& space,
                                       MatrixXcd Z, const SolverConfig& cfg) {
  space.project(Z);
  SearchResult r;
  MatrixXcd G;
  double f = obj(space.to_beamformer(Z), &G);
  if (!std::isfinite(f)) {
    r.F = space.to_beamformer(Z);
    return r;  // not converged: singular at the start
  }
  const double radius = std::sqrt(space.slot_cap * std::max(1, space.slots()));
  double s = std::min(cfg.step_init, 1.0);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const MatrixXcd gz = space.pull_gradient(G);
    const double gn = gz.norm();
    if (!(gn > 0.0) || !std::isfinite(gn)) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    double rel = 0.0;
    while (s >= 1e-10) {
      MatrixXcd Zn = Z - (s * radius / gn) * gz;
      space.project(Zn);
      const double fn = obj(space.to_beamformer(Zn), nullptr);
      if (std::isfinite(fn) && fn < f) {
        rel = (f - fn) / std::max(std::abs(f), 1e-300);
        Z = std::move(Zn);
        f = obj(space.to_beamformer(Z), &G);
        s = std::min(1.0, 2.0 * s);
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    r.iterations = it + 1;
    if (!accepted || rel < cfg.tolerance) {
      r.converged = true;
      break;
    }
  }
  if (r.iterations == 0 && cfg.max_iters == 0) r.converged = false;
  r.F = space.to_beamformer(Z);
  r.value = f;
  return r;
}

/// Best-of-restarts search. Restart 0 starts from the uniform allocation.
inline SearchResult minimize(const BeamObjective& obj, const SearchSpace& space, const SolverConfig& cfg) {
  const int R = cfg.resolved_restarts();
  std::vector<SearchResult> runs(R);
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    const MatrixXcd Z0 = r == 0 ? space.uniform_start() : space.random_start(mix_seed(cfg.seed, r));
    runs[r] = projected_gradient(obj, space, Z0, cfg);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].value < runs[best].value) best = r;
  SearchResult out = runs[best];
  out.iterations = 0;
  for (const auto& x : runs) out.iterations += x.iterations;
  return out;
}

inline SearchSpace make_space(const Scenario& s, const SolverConfig& cfg, std::vector<bool> active) {
  SearchSpace sp;
  sp.mode = cfg.mode;
  sp.U = codebook_matrix(s);
  sp.active = std::move(active);
  sp.slot_cap = s.beam_budget() / s.n_slots;
  sp.n_bs = s.n_bs;
  return sp;
}

// ---------------------------------------------------------------------------
// P1: weighted raw traces

struct P1Setup {
  std::uint64_t stream = 0;
  SubcarrierSet subcarriers;  // empty: all
  FimOptions fim;
};

/// Raw trace over `labels` of the (pseudo-)inverse and its FIM gradient.
/// Infinite when a block in `must_resolve` is singular.
inline double raw_trace_term(const FimMatrix& fim, const std::vector<std::string>& labels,
                             const std::vector<std::string>& must_resolve, MatrixXd* grad) {
  const auto inv = linalg::symmetric_pinv(fim.matrix, kConditionLimit);
  for (const auto& l : must_resolve) {
    const auto& e = fim.index.at(l);
    if (inv.touches(e.offset, e.size)) return kInf;
  }
  double tr = 0.0;
  if (grad) grad->setZero(fim.dim(), fim.dim());
  for (const auto& l : labels) {
    const auto& e = fim.index.at(l);
    tr += inv.inverse.diagonal().segment(e.offset, e.size).sum();
    if (grad) {
      const MatrixXd Sb = inv.inverse.middleCols(e.offset, e.size);
      grad->noalias() -= Sb * Sb.transpose();
    }
  }
  return tr;
}

class P1Problem {
 public:
  P1Problem(const Scenario& s, double alpha, const P1Setup& setup) : s_(s), alpha_(alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
    const auto sc = setup.subcarriers.empty() ? all_subcarriers(s.n_subcarriers) : setup.subcarriers;
    if (alpha < 1.0) ms_.emplace(s, setup.stream, Modality::ms, grid, sc, setup.fim);
    if (alpha > 0.0) bp_.emplace(s, setup.stream, Modality::bp, grid, sc, setup.fim);
    const int K = s.num_targets();
    all_ = {"p_U", "v_U"};
    for (int k = 1; k <= K; ++k) all_.push_back(pt_label(k));
    ms_resolve_ = {"p_U"};
    for (int k = 1; k <= K; ++k) ms_resolve_.push_back(pt_label(k));
  }

  /// (1 - alpha) tr(S_MS[eta_p]) + alpha tr(S_BP[p_U, v_U]). Only the radial
  /// UE velocity is observable monostatically, so the MS velocity block is
  /// pseudo-inverted rather than required to be regular.
  double operator()(const MatrixXcd& F, MatrixXcd* grad) const {
    double value = 0.0;
    if (grad) grad->setZero(F.rows(), F.cols());
    if (ms_) {
      const auto ev = ms_->evaluate(F);
      MatrixXd g;
      const double t = raw_trace_term(ev.reduced.fim, all_, ms_resolve_, grad ? &g : nullptr);
      if (!std::isfinite(t)) return kInf;
      value += (1.0 - alpha_) * t;
      if (grad) *grad += (1.0 - alpha_) * ms_->backprop(F, ev, g);
    }
    if (bp_) {
      const auto ev = bp_->evaluate(F);
      MatrixXd g;
      const double t = raw_trace_term(ev.reduced.fim, {"p_U", "v_U"}, {"p_U", "v_U"}, grad ? &g : nullptr);
      if (!std::isfinite(t)) return kInf;
      value += alpha_ * t;
      if (grad) *grad += alpha_ * bp_->backprop(F, ev, g);
    }
    return value;
  }

 private:
  Scenario s_;
  double alpha_;
  std::optional<StageModel> ms_, bp_;
  std::vector<std::string> all_, ms_resolve_;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline OptimizationOutcome solve_p1(const Scenario& s, double alpha, const SolverConfig& cfg,
                                    const P1Setup& setup = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const P1Problem prob(s, alpha, setup);
  const SearchSpace space = make_space(s, cfg, std::vector<bool>(s.n_slots, true));
  const SearchResult r = minimize(std::cref(prob), space, cfg);
  OptimizationOutcome out;
  out.beamformers = {Beamformer{r.F, s.beam_budget()}};
  out.objective = r.value;
  out.trace_used = r.F.squaredNorm();
  out.iterations = r.iterations;
  out.converged = r.converged && std::isfinite(r.value);
  out.wall_time_s = detail::seconds_since(t0);
  return out;
}

/// Uniform-allocation beamformer over all slots (the solvers' first iterate).
inline Beamformer uniform_beamformer(const Scenario& s, std::vector<bool> active = {}) {
  if (active.empty()) active.assign(s.n_slots, true);
  SolverConfig cfg;
  cfg.mode = SolverMode::codebook;
  const SearchSpace sp = make_space(s, cfg, std::move(active));
  return {sp.to_beamformer(sp.uniform_start()), s.beam_budget()};
}

// ---------------------------------------------------------------------------
// Sequential designs

struct StageSolve {
  Beamformer F;
  double value = kInf;
  int iterations = 0;
  bool converged = false;
};

/// F_MS minimising the MS-stage terms on the MS symbols.
inline StageSolve solve_greedy_fms(const SequentialProblem& prob, const SolverConfig& cfg) {
  const Scenario& s = prob.setup().scenario;
  StageSolve out;
  out.F = {MatrixXcd::Zero(s.n_bs, s.n_slots), s.beam_budget()};
  if (!prob.has_ms()) {
    out.value = prob.ms_loss(out.F.F, nullptr);
    out.converged = true;
    return out;
  }
  const SearchSpace sp = make_space(s, cfg, prob.ms_slots());
  const auto r = minimize([&](const MatrixXcd& F, MatrixXcd* g) { return prob.ms_loss(F, g); }, sp, cfg);
  out.F.F = r.F;
  out.value = r.value;
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

inline StageSolve solve_greedy_fms(const SequentialSetup& setup, double rho, const SolverConfig& cfg) {
  return solve_greedy_fms(SequentialProblem(setup, rho), cfg);
}

namespace detail {

template <class PerRho>
OptimizationOutcome rho_search(const SequentialSetup& setup, const SolverConfig& cfg, PerRho&& per_rho) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = cfg.rho_grid.size();
  struct Slot {
    RhoPoint point;
    std::vector<Beamformer> beams;
    bool converged = false;
  };
  std::vector<Slot> slots(n);
  SolverConfig inner = cfg;
  inner.threads = 1;
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    Slot& sl = slots[i];
    sl.point.rho = cfg.rho_grid[i];
    const auto t_rho = std::chrono::steady_clock::now();
    try {
      const SequentialProblem prob(setup, cfg.rho_grid[i]);
      per_rho(prob, inner, sl.point, sl.beams, sl.converged);
      sl.point.ok = std::isfinite(sl.point.loss);
    } catch (const std::exception& e) {
      sl.point.ok = false;
      sl.point.error = e.what();
    }
    sl.point.wall_time_s = seconds_since(t_rho);
  });
  OptimizationOutcome out;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < n; ++i) {
    out.per_rho.push_back(slots[i].point);
    out.iterations += slots[i].point.iterations;
    if (!slots[i].point.ok) continue;
    // Ties: smaller rho wins.
    const auto better = [&](std::size_t a, std::size_t b) {
      if (slots[a].point.loss != slots[b].point.loss) return slots[a].point.loss < slots[b].point.loss;
      return slots[a].point.rho < slots[b].point.rho;
    };
    if (!best || better(i, *best)) best = i;
  }
  if (!best) throw std::runtime_error("no rho grid point produced a finite loss");
  out.rho_star = slots[*best].point.rho;
  out.objective = slots[*best].point.loss;
  out.beamformers = slots[*best].beams;
  out.converged = slots[*best].converged;
  for (const auto& b : out.beamformers) out.trace_used = std::max(out.trace_used, b.trace_power());
  out.wall_time_s = seconds_since(t0);
  return out;
}

}  // namespace detail

/// Separate design: per rho, greedy F_MS, then F_BP against the fixed prior.
inline OptimizationOutcome solve_p2_separate(const SequentialSetup& setup, const SolverConfig& cfg) {
  return detail::rho_search(setup, cfg, [](const SequentialProblem& prob, const SolverConfig& c,
                                           RhoPoint& pt, std::vector<Beamformer>& beams, bool& conv) {
    const Scenario& s = prob.setup().scenario;
    const StageSolve ms = solve_greedy_fms(prob, c);
    const FimMatrix prior = prob.prior_fim(ms.F.F);
    Beamformer bp{MatrixXcd::Zero(s.n_bs, s.n_slots), s.beam_budget()};
    bool bp_conv = true;
    int bp_iters = 0;
    if (prob.has_bp()) {
      const SearchSpace sp = make_space(s, c, prob.bp_slots());
      const auto r = minimize(
          [&](const MatrixXcd& F, MatrixXcd* g) { return prob.bp_loss_given_prior(prior, F, g); }, sp, c);
      bp.F = r.F;
      bp_conv = r.converged;
      bp_iters = r.iterations;
    }
    const auto res = prob.evaluate(ms.F.F, bp.F);
    pt.loss = res.loss;
    pt.bounds = res.bounds_posterior;
    pt.iterations = ms.iterations + bp_iters;
    beams = {ms.F, bp};
    conv = ms.converged && bp_conv;
  });
}

/// Shared design: one beamformer for both phases, per rho.
inline OptimizationOutcome solve_p3_shared(const SequentialSetup& setup, const SolverConfig& cfg) {
  return detail::rho_search(setup, cfg, [](const SequentialProblem& prob, const SolverConfig& c,
                                           RhoPoint& pt, std::vector<Beamformer>& beams, bool& conv) {
    const Scenario& s = prob.setup().scenario;
    std::vector<bool> active = prob.ms_slots();
    const auto bp = prob.bp_slots();
    for (std::size_t l = 0; l < active.size(); ++l) active[l] = active[l] || bp[l];
    const SearchSpace sp = make_space(s, c, active);
    const auto r = minimize([&](const MatrixXcd& F, MatrixXcd* g) { return prob.shared_loss(F, g); }, sp, c);
    const auto res = prob.evaluate(r.F, r.F);
    pt.loss = res.loss;
    pt.bounds = res.bounds_posterior;
    pt.iterations = r.iterations;
    beams = {Beamformer{r.F, s.beam_budget()}};
    conv = r.converged;
  });
}

}  // namespace isac
