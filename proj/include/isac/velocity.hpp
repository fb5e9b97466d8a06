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
// Monostatic UE velocity bounds from two observation epochs.

#pragma once

#include "isac/fisher.hpp"

namespace isac {

using Eigen::Matrix2d;

struct TwoEpochConfig {
  double epoch_gap = 0.0;     // seconds; <= 0 selects one CPI (L_eff slots)
  std::uint64_t stream = 0;   // gain phases, shared by both epochs
  SubcarrierSet subcarriers;  // empty: all
  FimOptions fim;
};

struct VelocityBound {
  double veb = kInf;  // m/s
  bool singular = true;
  double epoch_gap = 0.0;
  int effective_slots = 0;
};

namespace detail {

inline std::vector<int> concat_indices(const IndexMap& m, const std::vector<std::string>& labels) {
  std::vector<int> out;
  for (const auto& l : labels) {
    const auto v = m.indices(l);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

struct EpochPlan {
  Scenario first, second;
  double gap = 0.0;
  int l_eff = 0;
  SymbolGrid grid;
  SubcarrierSet subcarriers;
};

inline EpochPlan plan_epochs(const Scenario& s, const TwoEpochConfig& cfg) {
  s.validate();
  EpochPlan p;
  p.l_eff = effective_slots(s);
  p.gap = cfg.epoch_gap > 0.0 ? cfg.epoch_gap : p.l_eff * s.slot_duration();
  p.grid = full_grid(p.l_eff, s.symbols_per_slot);
  p.subcarriers = cfg.subcarriers.empty() ? all_subcarriers(s.n_subcarriers) : cfg.subcarriers;
  p.first = s;
  p.second = s;
  p.second.ue_position = s.ue_position + s.ue_velocity * p.gap;
  return p;
}

/// UE position covariance of a static MS model: no Doppler among the channel
/// parameters and no velocity among the unknowns.
inline std::pair<Matrix2d, bool> static_ms_position_covariance(const Scenario& s, const Beamformer& F,
                                                               const SymbolGrid& grid,
                                                               const SubcarrierSet& sc, const TwoEpochConfig& cfg) {
  const int K = s.num_targets();
  const FimMatrix ch = channel_fim(derive_ms_params(s, cfg.stream), s, F, grid, sc, cfg.fim);
  const JacobianMatrix jac = ms_jacobian(s);
  const auto rows = concat_indices(ch.index, {"theta", "tau", "beta_re", "beta_im"});
  std::vector<std::string> geo{"p_U"};
  for (int k = 1; k <= K; ++k) geo.push_back(pt_label(k));
  const auto keep = concat_indices(jac.cols, geo);
  const auto nuis = concat_indices(jac.cols, {"beta_re", "beta_im"});
  std::vector<int> cols = keep;
  cols.insert(cols.end(), nuis.begin(), nuis.end());
  const MatrixXd J = linalg::take(jac.matrix, rows, cols);
  const MatrixXd I = J.transpose() * linalg::take(ch.matrix, rows, rows) * J;
  std::vector<int> k_local(keep.size()), n_local(nuis.size());
  for (std::size_t i = 0; i < keep.size(); ++i) k_local[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < nuis.size(); ++i) n_local[i] = static_cast<int>(keep.size() + i);
  const auto sr = linalg::schur_complement(I, k_local, n_local);
  const auto inv = linalg::symmetric_pinv(sr.reduced, kConditionLimit);
  const bool singular = sr.degenerate || inv.touches(0, 2);
  return {inv.inverse.topLeftCorner<2, 2>(), singular};
}

/// Equivalent Doppler information of the UE echo after all other channel
/// parameters are marginalized.
inline double doppler_information(const Scenario& s, const Beamformer& F, const SymbolGrid& grid,
                                  const SubcarrierSet& sc, const TwoEpochConfig& cfg) {
  const FimMatrix ch = channel_fim(derive_ms_params(s, cfg.stream), s, F, grid, sc, cfg.fim);
  const auto keep = ch.index.indices("nu");
  const auto nuis = concat_indices(ch.index, {"theta", "tau", "beta_re", "beta_im"});
  const auto sr = linalg::schur_complement(ch.matrix, keep, nuis);
  return sr.degenerate ? 0.0 : std::max(0.0, sr.reduced(0, 0));
}

}  // namespace detail

/// Velocity bound from radial Doppler information I_i along LoS directions u_i.
inline VelocityBound doppler_velocity_bound(const std::vector<double>& info, const std::vector<Vec2>& dirs,
                                            double carrier_hz) {
  if (info.size() != dirs.size()) throw std::invalid_argument("one direction per Doppler measurement");
  const double g = 2.0 * carrier_hz / kSpeedOfLight;
  Matrix2d J = Matrix2d::Zero();
  for (std::size_t i = 0; i < info.size(); ++i) {
    const Vec2 u = dirs[i].normalized();
    J += info[i] * g * g * (u * u.transpose());
  }
  VelocityBound b;
  const auto inv = linalg::symmetric_pinv(J, kConditionLimit);
  b.singular = inv.singular() || !(J.trace() > 0.0);
  b.veb = b.singular ? kInf : std::sqrt(inv.inverse.trace());
  return b;
}

/// Finite difference of two static position fixes.
inline VelocityBound snapshot_ms_veb(const Scenario& s, const TwoEpochConfig& cfg, const Beamformer& F) {
  const auto plan = detail::plan_epochs(s, cfg);
  const auto [S1, sing1] = detail::static_ms_position_covariance(plan.first, F, plan.grid, plan.subcarriers, cfg);
  const auto [S2, sing2] = detail::static_ms_position_covariance(plan.second, F, plan.grid, plan.subcarriers, cfg);
  VelocityBound b;
  b.epoch_gap = plan.gap;
  b.effective_slots = plan.l_eff;
  b.singular = sing1 || sing2;
  b.veb = b.singular ? kInf : std::sqrt((S1 + S2).trace()) / plan.gap;
  return b;
}

/// Two radial Doppler measurements along the LoS directions of both epochs.
inline VelocityBound extended_ms_veb(const Scenario& s, const TwoEpochConfig& cfg, const Beamformer& F) {
  const auto plan = detail::plan_epochs(s, cfg);
  std::vector<double> info;
  std::vector<Vec2> dirs;
  for (const Scenario* e : {&plan.first, &plan.second}) {
    info.push_back(detail::doppler_information(*e, F, plan.grid, plan.subcarriers, cfg));
    dirs.push_back(e->ue_position - e->bs_position);
  }
  VelocityBound b = doppler_velocity_bound(info, dirs, s.carrier_hz);
  b.epoch_gap = plan.gap;
  b.effective_slots = plan.l_eff;
  return b;
}

}  // namespace isac
