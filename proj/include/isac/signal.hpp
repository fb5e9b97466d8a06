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

#pragma once

#include <optional>

#include "isac/scenario.hpp"

namespace isac {

/// Half-wavelength ULA response, element i = exp(j pi i sin(angle)).
inline VectorXcd steering_vector(int n, double angle) {
  if (n < 1) throw std::invalid_argument("array size must be >= 1");
  VectorXcd a(n);
  const double s = std::sin(angle);
  for (int i = 0; i < n; ++i) a(i) = std::polar(1.0, kPi * i * s);
  return a;
}

/// d/d(angle) of steering_vector.
inline VectorXcd steering_derivative(int n, double angle) {
  VectorXcd a = steering_vector(n, angle);
  const double c = std::cos(angle);
  for (int i = 0; i < n; ++i) a(i) *= cplx(0.0, kPi * i * c);
  return a;
}

/// Transmit beamformers, one column per slot, with the budget they were built for.
struct Beamformer {
  MatrixXcd F;
  double budget = 0.0;  // watts per subcarrier, bound on tr(F F^H)

  double trace_power() const { return F.squaredNorm(); }
  bool feasible(double rel_tol = 1e-12) const {
    return trace_power() <= budget * (1.0 + rel_tol);
  }
};

/// UE analog combiner with orthonormal columns.
struct Combiner {
  MatrixXcd W;

  static Combiner identity(int n_ue) { return {MatrixXcd::Identity(n_ue, n_ue)}; }

  static Combiner dft(int n_ue) {
    MatrixXcd W(n_ue, n_ue);
    const double norm = 1.0 / std::sqrt(static_cast<double>(n_ue));
    for (int r = 0; r < n_ue; ++r)
      for (int c = 0; c < n_ue; ++c) W(r, c) = std::polar(norm, -2.0 * kPi * r * c / n_ue);
    return {W};
  }

  static Combiner for_scenario(const Scenario& s) {
    return s.combiner == CombinerKind::dft ? dft(s.n_ue) : identity(s.n_ue);
  }
};

/// Round-trip channel at subcarrier m for symbol (slot, symbol), 1-based.
inline MatrixXcd ms_channel(const MsChannelParams& p, const Scenario& s, int slot, int symbol,
                            int m) {
  const double df = s.subcarrier_spacing();
  const double t = symbol_start_time(slot, symbol, s.slot_duration(), s.symbol_duration());
  MatrixXcd H = MatrixXcd::Zero(s.n_bs, s.n_bs);
  for (int k = 0; k < p.num_paths(); ++k) {
    double phase = -2.0 * kPi * m * df * p.delay[k];
    if (k == 0) phase += 2.0 * kPi * p.doppler * t;
    const VectorXcd a = steering_vector(s.n_bs, p.theta[k]);
    H.noalias() += (p.gain[k] * std::polar(1.0, phase)) * (a * a.adjoint());
  }
  return H;
}

/// BS -> UE channel (N_U x N_B) at subcarrier m for symbol (slot, symbol).
inline MatrixXcd bp_channel(const BpChannelParams& p, const Scenario& s, int slot, int symbol,
                            int m) {
  const double df = s.subcarrier_spacing();
  const double t = symbol_start_time(slot, symbol, s.slot_duration(), s.symbol_duration());
  MatrixXcd H = MatrixXcd::Zero(s.n_ue, s.n_bs);
  for (int k = 0; k < p.num_paths(); ++k) {
    const double phase = -2.0 * kPi * m * df * p.delay[k] + 2.0 * kPi * p.doppler[k] * t;
    const VectorXcd au = steering_vector(s.n_ue, p.psi[k]);
    const VectorXcd ab = steering_vector(s.n_bs, p.theta[k]);
    H.noalias() += (p.gain[k] * std::polar(1.0, phase)) * (au * ab.adjoint());
  }
  return H;
}

/// Noise-free observation H f_l s, or W^H H f_l s when a combiner is given.
inline VectorXcd noiseless_obs(const MatrixXcd& H, const MatrixXcd& F, int slot, cplx pilot = 1.0,
                               const std::optional<Combiner>& combiner = std::nullopt) {
  if (std::abs(std::abs(pilot) - 1.0) > 1e-12)
    throw std::invalid_argument("pilot must be unit-modulus");
  if (slot < 1 || slot > F.cols()) throw DimensionError("slot index outside beamformer columns");
  if (H.cols() != F.rows()) throw DimensionError("channel columns do not match beamformer rows");
  VectorXcd y = H * F.col(slot - 1) * pilot;
  if (combiner) {
    if (combiner->W.rows() != H.rows()) throw DimensionError("combiner rows do not match channel");
    return combiner->W.adjoint() * y;
  }
  return y;
}

}  // namespace isac
