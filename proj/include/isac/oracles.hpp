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
// Independent numerical references: FIMs from central differences of the
// observation itself, Jacobians from central differences of the parameter
// derivation, and a random-scene generator for property checks. None of
// this shares code with the analytic paths beyond the signal model.

#pragma once

#include <functional>

#include "isac/fisher.hpp"

namespace isac::oracle {

/// Max over (i,j) of |A_ij - B_ij| / sqrt(B_ii B_jj); scale-free across units.
inline double fim_rel_error(const MatrixXd& A, const MatrixXd& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw DimensionError("fim_rel_error shapes");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      const double s = std::sqrt(std::abs(B(i, i) * B(j, j)));
      const double d = std::abs(A(i, j) - B(i, j));
      if (s > 0.0) {
        worst = std::max(worst, d / s);
      } else if (d > 0.0) {
        worst = kInf;
      }
    }
  return worst;
}

/// Row-scaled max error: max_ij |A_ij - B_ij| / max_j |B_ij|.
inline double row_rel_error(const MatrixXd& A, const MatrixXd& B) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double s = B.row(i).cwiseAbs().maxCoeff();
    const double d = (A.row(i) - B.row(i)).cwiseAbs().maxCoeff();
    if (s > 0.0) {
      worst = std::max(worst, d / s);
    } else if (d > 1e-300) {
      worst = kInf;
    }
  }
  return worst;
}

namespace detail {

inline MsChannelParams unflatten_ms(const VectorXd& v, int n) {
  MsChannelParams p;
  p.theta.resize(n);
  p.delay.resize(n);
  p.gain.resize(n);
  for (int k = 0; k < n; ++k) {
    p.theta[k] = v(k);
    p.delay[k] = v(n + k);
    p.gain[k] = {v(2 * n + 1 + k), v(3 * n + 1 + k)};
  }
  p.doppler = v(2 * n);
  return p;
}

inline BpChannelParams unflatten_bp(const VectorXd& v, int n) {
  BpChannelParams p;
  p.theta.resize(n);
  p.psi.resize(n);
  p.delay.resize(n);
  p.doppler.resize(n);
  p.gain.resize(n);
  for (int k = 0; k < n; ++k) {
    p.theta[k] = v(k);
    p.psi[k] = v(n + k);
    p.delay[k] = v(2 * n + k);
    p.doppler[k] = v(3 * n + k);
    p.gain[k] = {v(4 * n + k), v(5 * n + k)};
  }
  return p;
}

// Per-parameter step: keeps the largest phase excursion near 1e-4 rad.
inline double step_for(const std::string& label, double value, const Scenario& s, int n_rx) {
  const double tmax = s.slot_duration() * s.n_slots;
  if (label == "theta") return 1e-4 / (kPi * s.n_bs);
  if (label == "psi") return 1e-4 / (kPi * std::max(n_rx, 1));
  if (label == "tau") return 1e-4 / (2.0 * kPi * s.subcarrier_spacing() * s.n_subcarriers);
  if (label == "nu") return 1e-4 / (2.0 * kPi * tmax);
  return 1e-3 * std::max(std::abs(value), 1e-300);
}

inline MatrixXd brute_force(const VectorXd& xi, const IndexMap& index,
                            const std::function<VectorXcd(const VectorXd&, int, int, int)>& mu,
                            const std::function<int(int)>& path_of, const Scenario& s,
                            const SymbolGrid& grid, const SubcarrierSet& sc, bool exact, int n_rx,
                            double gain_scale) {
  const int d = static_cast<int>(xi.size());
  std::vector<double> h(d);
  for (const auto& e : index.entries())
    for (int i = 0; i < e.size; ++i) {
      const double v = xi(e.offset + i);
      h[e.offset + i] = (e.label == "beta_re" || e.label == "beta_im")
                            ? 1e-3 * gain_scale
                            : step_for(e.label, v, s, n_rx);
    }
  MatrixXd I = MatrixXd::Zero(d, d);
  std::vector<VectorXcd> D(d);
  for (const auto& si : grid)
    for (int m : sc) {
      for (int i = 0; i < d; ++i) {
        VectorXd xp = xi, xm = xi;
        xp(i) += h[i];
        xm(i) -= h[i];
        D[i] = (mu(xp, si.slot, si.symbol, m) - mu(xm, si.slot, si.symbol, m)) / (2.0 * h[i]);
      }
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          if (!exact && path_of(i) != path_of(j)) continue;
          I(i, j) += D[i].dot(D[j]).real();  // dot() conjugates the first argument
        }
    }
  I *= 2.0 / s.noise_power();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) I(i, j) = I(j, i);
  return I;
}

}  // namespace detail

/// Numeric-derivative FIM of the MS observation H(xi) f_l.
inline MatrixXd brute_force_fim(const MsChannelParams& p, const Scenario& s, const MatrixXcd& F,
                                const SymbolGrid& grid, const SubcarrierSet& sc, bool exact = false) {
  const int n = p.num_paths();
  auto mu = [&](const VectorXd& x, int l, int q, int m) {
    return noiseless_obs(ms_channel(detail::unflatten_ms(x, n), s, l, q, m), F, l);
  };
  auto path_of = [n](int i) {
    if (i < 2 * n) return i % n;
    if (i == 2 * n) return 0;
    return (i - 2 * n - 1) % n;
  };
  double gscale = 0.0;
  for (const auto& g : p.gain) gscale = std::max(gscale, std::abs(g));
  return detail::brute_force(p.flatten(), ms_channel_index(n - 1), mu, path_of, s, grid, sc, exact,
                             s.n_bs, gscale);
}

/// Numeric-derivative FIM of the BP observation W^H H(xi) f_l.
inline MatrixXd brute_force_fim(const BpChannelParams& p, const Scenario& s, const MatrixXcd& F,
                                const SymbolGrid& grid, const SubcarrierSet& sc, bool exact = false) {
  const int n = p.num_paths();
  const Combiner W = Combiner::for_scenario(s);
  auto mu = [&](const VectorXd& x, int l, int q, int m) {
    return noiseless_obs(bp_channel(detail::unflatten_bp(x, n), s, l, q, m), F, l, 1.0, W);
  };
  auto path_of = [n](int i) { return i % n; };
  double gscale = 0.0;
  for (const auto& g : p.gain) gscale = std::max(gscale, std::abs(g));
  return detail::brute_force(p.flatten(), bp_channel_index(n - 1), mu, path_of, s, grid, sc, exact,
                             s.n_ue, gscale);
}

namespace detail {

// Applies a perturbation of one geometric position-domain coordinate.
inline Scenario perturbed(const Scenario& s, const std::string& label, int comp, double delta) {
  Scenario t = s;
  if (label == "p_U") {
    t.ue_position(comp) += delta;
  } else if (label == "v_U") {
    t.ue_velocity(comp) += delta;
  } else if (label == "dphi") {
    t.orientation_offset_rad += delta;
  } else if (label == "dt") {
    t.clock_bias_s += delta;
  } else {
    const int k = std::stoi(label.substr(2));
    t.pt_positions[k - 1](comp) += delta;
  }
  return t;
}

inline double geom_step(const std::string& label) {
  if (label == "v_U") return 1e-2;
  if (label == "dphi") return 1e-6;
  if (label == "dt") return 1e-9;
  return 1e-4;
}

template <class Derive, class Flatten>
MatrixXd numeric_jacobian(const Scenario& s, const IndexMap& rows, const IndexMap& cols,
                          Derive derive, Flatten flatten) {
  MatrixXd J = MatrixXd::Zero(rows.dim(), cols.dim());
  for (const auto& e : cols.entries()) {
    if (e.label == "beta_re" || e.label == "beta_im") {
      // Gains are free parameters in both vectors: identity block.
      const auto& r = rows.at(e.label);
      for (int i = 0; i < e.size; ++i) J(r.offset + i, e.offset + i) = 1.0;
      continue;
    }
    for (int c = 0; c < e.size; ++c) {
      const double h = geom_step(e.label);
      const VectorXd xp = flatten(derive(perturbed(s, e.label, c, h)));
      const VectorXd xm = flatten(derive(perturbed(s, e.label, c, -h)));
      VectorXd d = (xp - xm) / (2.0 * h);
      for (const auto& r : rows.entries()) {
        if (r.label == "beta_re" || r.label == "beta_im") {
          d.segment(r.offset, r.size).setZero();
        } else if (r.label == "theta" || r.label == "psi") {
          for (int i = 0; i < r.size; ++i)
            d(r.offset + i) = wrap_angle(xp(r.offset + i) - xm(r.offset + i)) / (2.0 * h);
        }
      }
      J.col(e.offset + c) = d;
    }
  }
  return J;
}

}  // namespace detail

/// Central differences of derive_ms_params over the geometric coordinates.
inline MatrixXd numeric_ms_jacobian(const Scenario& s) {
  const int K = s.num_targets();
  return detail::numeric_jacobian(
      s, ms_channel_index(K), ms_position_index(K),
      [](const Scenario& t) { return derive_ms_params(t, 0); },
      [](const MsChannelParams& p) { return p.flatten(); });
}

inline MatrixXd numeric_bp_jacobian(const Scenario& s) {
  const int K = s.num_targets();
  return detail::numeric_jacobian(
      s, bp_channel_index(K), bp_position_index(K),
      [](const Scenario& t) { return derive_bp_params(t, 0); },
      [](const BpChannelParams& p) { return p.flatten(); });
}

/// Random well-separated scene with K targets and a random UE velocity.
inline Scenario random_scene(Rng& rng, int K, Scenario base = {}) {
  std::uniform_real_distribution<double> range(5.0, 100.0), ang(-kPi / 3, kPi / 3),
      speed(0.0, 30.0), dir(-kPi, kPi);
  auto place = [&]() {
    const double r = range(rng), a = ang(rng) + base.bs_orientation;
    return Vec2(base.bs_position + r * Vec2(std::cos(a), std::sin(a)));
  };
  for (;;) {
    base.ue_position = place();
    base.pt_positions.clear();
    for (int k = 0; k < K; ++k) base.pt_positions.push_back(place());
    bool ok = true;
    for (int k = 0; k < K && ok; ++k) {
      ok = (base.pt_positions[k] - base.ue_position).norm() > 1.0;
      for (int j = 0; j < k && ok; ++j) ok = (base.pt_positions[k] - base.pt_positions[j]).norm() > 1.0;
    }
    if (ok) break;
  }
  const double sp = speed(rng), d = dir(rng);
  base.ue_velocity = sp * Vec2(std::cos(d), std::sin(d));
  return base;
}

/// Random complex matrix, scaled to the given Frobenius norm squared.
inline MatrixXcd random_beamformer(Rng& rng, int rows, int cols, double power) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXcd F(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) F(i, j) = cplx(g(rng), g(rng));
  return F * std::sqrt(power / F.squaredNorm());
}

}  // namespace isac::oracle
