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
// Two-phase operation: an MS prefix, a feedback gap and a BP suffix share
// one pilot budget; the MS result becomes a prior for BP.

#pragma once

#include <optional>

#include "isac/fisher.hpp"

namespace isac {

struct AllocationPolicy {
  int total_symbols = 0;
  int feedback_symbols = 0;
  double rho = 0.5;

  void validate() const {
    if (total_symbols < 1) throw std::invalid_argument("total symbol count must be >= 1");
    if (feedback_symbols < 0) throw std::invalid_argument("feedback symbol count must be >= 0");
    if (feedback_symbols >= total_symbols)
      throw std::invalid_argument("feedback symbols must be fewer than the total");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
  }
  int allocable() const { return total_symbols - feedback_symbols; }
  int ms_symbols() const { return static_cast<int>(std::lround(rho * allocable())); }
  int bp_symbols() const { return allocable() - ms_symbols(); }
};

/// Symbols needed to send the upper triangle of the (2K+4)^2 MS covariance.
inline int feedback_cost(int K, double bits_per_entry = 32.0, double bits_per_symbol = 100.0) {
  if (K < 0) throw std::invalid_argument("K must be >= 0");
  if (!(bits_per_entry > 0.0) || !(bits_per_symbol > 0.0))
    throw std::invalid_argument("bit counts must be positive");
  const double n = 2.0 * K + 4.0;
  const double entries = n * (n + 1.0) / 2.0;
  const double sym = std::ceil(entries * bits_per_entry / bits_per_symbol);
  return std::max(1, static_cast<int>(sym));
}

/// MS prefix and BP suffix of the time-ordered (l, p) grid; feedback sits between.
inline std::pair<SymbolGrid, SymbolGrid> partition_symbols(const AllocationPolicy& policy, int L,
                                                           int P) {
  policy.validate();
  if (policy.total_symbols != L * P)
    throw std::invalid_argument("total symbols must equal L * P");
  const SymbolGrid all = full_grid(L, P);
  const int n_ms = policy.ms_symbols();
  const int n_bp = policy.bp_symbols();
  SymbolGrid ms(all.begin(), all.begin() + n_ms);
  SymbolGrid bp(all.end() - n_bp, all.end());
  return {ms, bp};
}

inline FimMatrix posterior_fim(const FimMatrix& prior, const FimMatrix& likelihood) {
  if (!(prior.index == likelihood.index)) throw IndexMapError("prior and likelihood labels differ");
  FimMatrix out = prior;
  out.matrix = prior.matrix + likelihood.matrix;
  out.symbol_count = prior.symbol_count + likelihood.symbol_count;
  out.degenerate_marginal = prior.degenerate_marginal || likelihood.degenerate_marginal;
  return out;
}

inline FimMatrix zero_shared_fim(int K) {
  FimMatrix f;
  f.index = shared_index(K);
  f.matrix = MatrixXd::Zero(f.index.dim(), f.index.dim());
  return f;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kSingularPenalty = 1e6;

/// One deviation term w * (max(0, b - g) / g)^2, or its two-sided variant.
inline double deviation(double b, bool singular, double gamma, double w, bool two_sided) {
  if (w == 0.0) return 0.0;
  if (singular || !std::isfinite(b)) return kSingularPenalty * w;
  const double d = two_sided ? (b - gamma) : std::max(0.0, b - gamma);
  return w * (d / gamma) * (d / gamma);
}

inline double deviation_slope(double b, bool singular, double gamma, double w, bool two_sided) {
  if (w == 0.0 || singular || !std::isfinite(b)) return 0.0;
  const double d = two_sided ? (b - gamma) : std::max(0.0, b - gamma);
  return 2.0 * w * d / (gamma * gamma);
}

struct BoundTerm {
  std::string label;  // block in the FIM index map
  double gamma;
  double weight;
};

inline std::vector<BoundTerm> ms_stage_terms(const ThresholdSet& t, int K) {
  std::vector<BoundTerm> v{{"p_U", t.peb_ue_ms, t.w_peb_ue_ms}};
  for (int k = 1; k <= K; ++k) v.push_back({pt_label(k), t.peb_pt_ms, t.w_peb_pt_ms});
  return v;
}

inline std::vector<BoundTerm> posterior_terms(const ThresholdSet& t, int K) {
  std::vector<BoundTerm> v{{"p_U", t.peb_ue_bp, t.w_peb_ue_bp}, {"v_U", t.veb_ue_bp, t.w_veb_ue_bp}};
  for (int k = 1; k <= K; ++k) v.push_back({pt_label(k), t.peb_pt_bp, t.w_peb_pt_bp});
  return v;
}

namespace detail {

inline std::pair<double, bool> bound_of(const BoundReport& r, const std::string& label) {
  if (label == "p_U") return {r.peb_ue, r.singular_ue_pos};
  if (label == "v_U") return {r.veb_ue, r.singular_ue_vel};
  const int k = std::stoi(label.substr(2));
  if (k < 1 || k > static_cast<int>(r.peb_pt.size())) return {kInf, true};
  return {r.peb_pt[k - 1], r.singular_pt[k - 1]};
}

}  // namespace detail

inline double terms_value(const BoundReport& r, const std::vector<BoundTerm>& terms, bool two_sided) {
  double v = 0.0;
  for (const auto& t : terms) {
    const auto [b, sing] = detail::bound_of(r, t.label);
    v += deviation(b, sing, t.gamma, t.weight, two_sided);
  }
  return v;
}

/// Threshold-deviation loss over the MS-stage and posterior bounds.
inline double loss(const BoundReport& bounds_ms, const BoundReport& bounds_posterior,
                   const ThresholdSet& thresholds) {
  thresholds.validate();
  const int K = static_cast<int>(std::max(bounds_ms.peb_pt.size(), bounds_posterior.peb_pt.size()));
  return terms_value(bounds_ms, ms_stage_terms(thresholds, K), thresholds.two_sided) +
         terms_value(bounds_posterior, posterior_terms(thresholds, K), thresholds.two_sided);
}

struct TermEvaluation {
  double value = 0.0;
  BoundReport report;
  MatrixXd gradient;  // d value / d FIM (symmetric), when requested
};

/// Value of a set of bound terms on a FIM and its gradient w.r.t. the FIM.
/// Uses d tr(S_B) = -tr(S E_B S dA) with S the (pseudo-)inverse; penalised
/// terms are locally constant.
inline TermEvaluation evaluate_terms(const FimMatrix& fim, const std::vector<BoundTerm>& terms,
                                     bool two_sided, bool want_gradient) {
  TermEvaluation ev;
  ev.report = crb_extract(fim);
  const MatrixXd& S = ev.report.covariance;
  if (want_gradient) ev.gradient = MatrixXd::Zero(fim.dim(), fim.dim());
  for (const auto& t : terms) {
    const auto [b, sing] = detail::bound_of(ev.report, t.label);
    ev.value += deviation(b, sing, t.gamma, t.weight, two_sided);
    if (!want_gradient) continue;
    const double slope = deviation_slope(b, sing, t.gamma, t.weight, two_sided);
    if (slope == 0.0 || !(b > 0.0)) continue;
    const auto& e = fim.index.at(t.label);
    const MatrixXd Sb = S.middleCols(e.offset, e.size);
    ev.gradient.noalias() -= (slope / (2.0 * b)) * (Sb * Sb.transpose());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Sequential problem for one realization and one rho

struct SequentialResult {
  FimMatrix prior_fim;
  FimMatrix posterior_fim;
  BoundReport bounds_ms;
  BoundReport bounds_posterior;
  double loss = kInf;
};

struct SequentialSetup {
  Scenario scenario;
  std::uint64_t stream = 0;  // channel-gain stream
  ThresholdSet thresholds;
  SubcarrierSet subcarriers;
  FimOptions fim;
  int feedback_symbols = -1;  // < 0: feedback_cost(K)
  double bits_per_entry = 32.0;
  double bits_per_symbol = 100.0;

  int resolved_feedback() const {
    return feedback_symbols >= 0
               ? feedback_symbols
               : feedback_cost(scenario.num_targets(), bits_per_entry, bits_per_symbol);
  }
};

class SequentialProblem {
 public:
  SequentialProblem(const SequentialSetup& setup, double rho) : setup_(setup) {
    const Scenario& s = setup.scenario;
    K_ = s.num_targets();
    policy_ = {s.total_symbols(), setup.resolved_feedback(), rho};
    std::tie(ms_grid_, bp_grid_) = partition_symbols(policy_, s.n_slots, s.symbols_per_slot);
    const SubcarrierSet sc =
        setup.subcarriers.empty() ? all_subcarriers(s.n_subcarriers) : setup.subcarriers;
    if (!ms_grid_.empty()) ms_.emplace(s, setup.stream, Modality::ms, ms_grid_, sc, setup.fim);
    if (!bp_grid_.empty()) bp_.emplace(s, setup.stream, Modality::bp, bp_grid_, sc, setup.fim);
  }

  const AllocationPolicy& policy() const { return policy_; }
  const SymbolGrid& ms_grid() const { return ms_grid_; }
  const SymbolGrid& bp_grid() const { return bp_grid_; }
  bool has_ms() const { return ms_.has_value(); }
  bool has_bp() const { return bp_.has_value(); }
  int num_targets() const { return K_; }
  const SequentialSetup& setup() const { return setup_; }

  /// Slots (1-based) with at least one symbol of the phase.
  static std::vector<bool> active_slots(const SymbolGrid& g, int L) {
    std::vector<bool> a(L, false);
    for (const auto& si : g) a[si.slot - 1] = true;
    return a;
  }
  std::vector<bool> ms_slots() const { return active_slots(ms_grid_, setup_.scenario.n_slots); }
  std::vector<bool> bp_slots() const { return active_slots(bp_grid_, setup_.scenario.n_slots); }

  FimMatrix prior_fim(const MatrixXcd& F_ms) const {
    return ms_ ? ms_->shared_fim(F_ms) : zero_shared_fim(K_);
  }
  FimMatrix likelihood_fim(const MatrixXcd& F_bp) const {
    return bp_ ? bp_->shared_fim(F_bp) : zero_shared_fim(K_);
  }

  SequentialResult evaluate(const MatrixXcd& F_ms, const MatrixXcd& F_bp) const {
    SequentialResult r;
    r.prior_fim = prior_fim(F_ms);
    r.posterior_fim = posterior_fim(r.prior_fim, likelihood_fim(F_bp));
    r.bounds_ms = crb_extract(r.prior_fim);
    r.bounds_posterior = crb_extract(r.posterior_fim);
    r.loss = loss(r.bounds_ms, r.bounds_posterior, setup_.thresholds);
    return r;
  }

  /// MS-stage terms only, as a function of F_MS.
  double ms_loss(const MatrixXcd& F, MatrixXcd* grad) const {
    const auto terms = ms_stage_terms(setup_.thresholds, K_);
    if (!ms_) {
      if (grad) grad->setZero(F.rows(), F.cols());
      return evaluate_terms(zero_shared_fim(K_), terms, setup_.thresholds.two_sided, false).value;
    }
    const auto ev = ms_->evaluate(F);
    const auto te = evaluate_terms(ev.reduced.fim, terms, setup_.thresholds.two_sided, grad != nullptr);
    if (grad) *grad = ms_->backprop(F, ev, te.gradient);
    return te.value;
  }

  /// Full loss with the prior fixed, as a function of F_BP.
  double bp_loss_given_prior(const FimMatrix& prior, const MatrixXcd& F, MatrixXcd* grad) const {
    const bool two = setup_.thresholds.two_sided;
    const double ms_part =
        evaluate_terms(prior, ms_stage_terms(setup_.thresholds, K_), two, false).value;
    const auto post_terms = posterior_terms(setup_.thresholds, K_);
    if (!bp_) {
      if (grad) grad->setZero(F.rows(), F.cols());
      return ms_part + evaluate_terms(prior, post_terms, two, false).value;
    }
    const auto ev = bp_->evaluate(F);
    const FimMatrix post = posterior_fim(prior, ev.reduced.fim);
    const auto te = evaluate_terms(post, post_terms, two, grad != nullptr);
    if (grad) *grad = bp_->backprop(F, ev, te.gradient);
    return ms_part + te.value;
  }

  /// Full loss with one beamformer driving both phases.
  double shared_loss(const MatrixXcd& F, MatrixXcd* grad) const {
    const bool two = setup_.thresholds.two_sided;
    std::optional<StageModel::Evaluation> ems, ebp;
    FimMatrix prior = zero_shared_fim(K_), like = zero_shared_fim(K_);
    if (ms_) {
      ems = ms_->evaluate(F);
      prior = ems->reduced.fim;
    }
    if (bp_) {
      ebp = bp_->evaluate(F);
      like = ebp->reduced.fim;
    }
    const FimMatrix post = posterior_fim(prior, like);
    const auto t_ms = evaluate_terms(prior, ms_stage_terms(setup_.thresholds, K_), two, grad != nullptr);
    const auto t_post = evaluate_terms(post, posterior_terms(setup_.thresholds, K_), two, grad != nullptr);
    if (grad) {
      grad->setZero(F.rows(), F.cols());
      if (ms_) *grad += ms_->backprop(F, *ems, t_ms.gradient + t_post.gradient);
      if (bp_) *grad += bp_->backprop(F, *ebp, t_post.gradient);
    }
    return t_ms.value + t_post.value;
  }

 private:
  SequentialSetup setup_;
  int K_ = 0;
  AllocationPolicy policy_;
  SymbolGrid ms_grid_, bp_grid_;
  std::optional<StageModel> ms_, bp_;
};

}  // namespace isac
