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
// Scene geometry, radio configuration and the mapping from the scene to the
// channel-domain parameters seen by the monostatic (BS echo) and bistatic
// (BS -> UE downlink) links.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "isac/types.hpp"

namespace isac {

struct NoiseModel {
  double psd_dbm_hz = -173.0;
  double noise_figure_db = 10.0;
  double path_loss_exponent = 3.5;
  double shadow_sigma_db = 8.0;
  bool shadowing = false;
};

enum class CombinerKind { identity, dft };

/// Everything needed to derive channel parameters for one realization.
/// Defaults are the full-scale reference configuration.
struct Scenario {
  Vec2 bs_position{0.0, 0.0};
  double bs_orientation = 0.0;  // broadside direction in the global frame [rad]
  Vec2 ue_position{40.0, 10.0};
  Vec2 ue_velocity{0.0, 0.0};
  std::vector<Vec2> pt_positions;

  int n_bs = 64;
  int n_ue = 16;
  double carrier_hz = 28e9;
  double bandwidth_hz = 120e6;
  int n_subcarriers = 1024;
  int n_slots = 16;
  int symbols_per_slot = 100;
  double power_budget_w = 1e-5;  // -20 dBm
  double clock_bias_s = 1e-6;
  double orientation_offset_rad = 110.0 * kPi / 180.0;
  NoiseModel noise;
  double rcs_ue_m2 = 10.0;
  double rcs_pt_m2 = 10.0;
  CombinerKind combiner = CombinerKind::identity;

  int num_targets() const { return static_cast<int>(pt_positions.size()); }
  double wavelength() const { return kSpeedOfLight / carrier_hz; }
  double subcarrier_spacing() const { return bandwidth_hz / n_subcarriers; }
  // No cyclic prefix: T_sym = M / B.
  double symbol_duration() const { return n_subcarriers / bandwidth_hz; }
  double slot_duration() const { return symbols_per_slot * symbol_duration(); }
  int total_symbols() const { return n_slots * symbols_per_slot; }
  /// Beamformer budget tr(F F^H) <= P_B / M.
  double beam_budget() const { return power_budget_w / n_subcarriers; }
  /// sigma^2 = F * N0 * delta_f, in watts.
  double noise_power() const {
    return db_to_linear(noise.noise_figure_db) * dbm_to_watts(noise.psd_dbm_hz) *
           subcarrier_spacing();
  }

  /// Position of path k in the monostatic indexing (k = 0 is the UE).
  const Vec2& entity(int k) const { return k == 0 ? ue_position : pt_positions.at(k - 1); }

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ScenarioError(what);
    };
    require(n_bs >= 1 && n_ue >= 1, "antenna counts must be >= 1");
    require(n_subcarriers >= 1 && n_slots >= 1 && symbols_per_slot >= 1,
            "subcarrier, slot and symbol counts must be >= 1");
    require(power_budget_w > 0.0, "power budget must be positive");
    require(carrier_hz > 0.0, "carrier frequency must be positive");
    require(bandwidth_hz > 0.0, "bandwidth must be positive");
    require(rcs_ue_m2 > 0.0 && rcs_pt_m2 > 0.0, "radar cross sections must be positive");
    require(noise_power() > 0.0, "noise power must be positive");
    constexpr double kMinSeparation = 1e-6;
    if ((ue_position - bs_position).norm() < kMinSeparation)
      throw GeometryError("UE coincides with the BS");
    for (std::size_t k = 0; k < pt_positions.size(); ++k) {
      if ((pt_positions[k] - bs_position).norm() < kMinSeparation)
        throw GeometryError("passive target " + std::to_string(k + 1) + " coincides with the BS");
      if ((pt_positions[k] - ue_position).norm() < kMinSeparation)
        throw GeometryError("passive target " + std::to_string(k + 1) + " coincides with the UE");
    }
  }
};

/// Coherence time lambda / (2 v_rel). Returns +infinity for a static link.
inline double coherence_time(double carrier_hz, double relative_speed) {
  if (carrier_hz <= 0.0) throw std::invalid_argument("carrier frequency must be positive");
  if (relative_speed < 0.0) throw std::invalid_argument("relative speed must be non-negative");
  if (relative_speed == 0.0) return kInf;
  return kSpeedOfLight / carrier_hz / (2.0 * relative_speed);
}

/// Start time of pilot symbol (slot, symbol), both 1-based.
inline double symbol_start_time(int slot, int symbol, double slot_duration, double symbol_duration) {
  if (slot < 1 || symbol < 1) throw std::out_of_range("slot and symbol indices are 1-based");
  return (slot - 1) * slot_duration + (symbol - 1) * symbol_duration;
}

/// Number of leading slots whose last symbol ends inside the coherence time. At least 1.
inline int effective_slots(const Scenario& s) {
  const double tc = coherence_time(s.carrier_hz, s.ue_velocity.norm());
  if (!std::isfinite(tc)) return s.n_slots;
  const double t_slot = s.slot_duration();
  int l_eff = 1;
  for (int l = s.n_slots; l >= 1; --l) {
    const double end = symbol_start_time(l, s.symbols_per_slot, t_slot, s.symbol_duration()) +
                       s.symbol_duration();
    if (end <= tc * (1.0 + 1e-12)) {
      l_eff = l;
      break;
    }
  }
  return l_eff;
}

// ---------------------------------------------------------------------------
// Channel-domain parameters

/// Monostatic parameters. Path 0 is the UE echo, paths 1..K the passive targets.
struct MsChannelParams {
  std::vector<double> theta;  // AOD == AOA at the BS, relative to broadside
  std::vector<double> delay;  // round-trip delay
  double doppler = 0.0;       // round-trip Doppler of the UE echo
  std::vector<cplx> gain;

  int num_paths() const { return static_cast<int>(theta.size()); }

  /// [theta; tau; nu_0; Re beta; Im beta], length 4K+5.
  VectorXd flatten() const {
    const int n = num_paths();
    VectorXd v(4 * n + 1);
    for (int k = 0; k < n; ++k) {
      v(k) = theta[k];
      v(n + k) = delay[k];
      v(2 * n + 1 + k) = gain[k].real();
      v(3 * n + 1 + k) = gain[k].imag();
    }
    v(2 * n) = doppler;
    return v;
  }
};

/// Bistatic parameters. Path 0 is the LoS, paths 1..K bounce off the targets.
struct BpChannelParams {
  std::vector<double> theta;    // AOD at the BS
  std::vector<double> psi;      // AOA in the UE frame
  std::vector<double> delay;    // includes the clock bias
  std::vector<double> doppler;  // one-way Doppler at the UE
  std::vector<cplx> gain;

  int num_paths() const { return static_cast<int>(theta.size()); }

  /// [theta; psi; tau; nu; Re beta; Im beta], length 6K+6.
  VectorXd flatten() const {
    const int n = num_paths();
    VectorXd v(6 * n);
    for (int k = 0; k < n; ++k) {
      v(k) = theta[k];
      v(n + k) = psi[k];
      v(2 * n + k) = delay[k];
      v(3 * n + k) = doppler[k];
      v(4 * n + k) = gain[k].real();
      v(5 * n + k) = gain[k].imag();
    }
    return v;
  }
};

namespace detail {

inline double bearing(const Vec2& d) { return std::atan2(d.y(), d.x()); }

// Amplitude at 1 m in free space.
inline double reference_amplitude(const Scenario& s) { return s.wavelength() / (4.0 * kPi); }

inline cplx draw_gain(double amplitude, const Scenario& s, Rng& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  const double ph = phase(rng);
  if (s.noise.shadowing) {
    std::normal_distribution<double> shadow(0.0, s.noise.shadow_sigma_db);
    amplitude *= std::pow(10.0, shadow(rng) / 20.0);
  }
  return std::polar(amplitude, ph);
}

}  // namespace detail

/// Monostatic echo amplitude from the radar equation for a target at range r.
inline double monostatic_amplitude(const Scenario& s, double range, double rcs) {
  return detail::reference_amplitude(s) * std::sqrt(rcs / (4.0 * kPi)) / (range * range);
}

/// Log-distance LoS amplitude, free space at 1 m with exponent n beyond.
inline double bistatic_los_amplitude(const Scenario& s, double range) {
  return detail::reference_amplitude(s) * std::pow(range, -0.5 * s.noise.path_loss_exponent);
}

/// Reflected bistatic amplitude: BS->target and target->UE segments.
inline double bistatic_nlos_amplitude(const Scenario& s, double r_in, double r_out, double rcs) {
  return detail::reference_amplitude(s) * std::sqrt(rcs / (4.0 * kPi)) / (r_in * r_out);
}

/// Derives the monostatic parameters. Gain phases (and shadowing, when enabled)
/// come from the stream; everything else is a function of the scenario.
inline MsChannelParams derive_ms_params(const Scenario& s, std::uint64_t stream) {
  s.validate();
  Rng rng = make_rng(stream);
  const int n = s.num_targets() + 1;
  MsChannelParams p;
  p.theta.resize(n);
  p.delay.resize(n);
  p.gain.resize(n);
  for (int k = 0; k < n; ++k) {
    const Vec2 d = s.entity(k) - s.bs_position;
    const double r = d.norm();
    p.theta[k] = wrap_angle(detail::bearing(d) - s.bs_orientation);
    p.delay[k] = 2.0 * r / kSpeedOfLight;
    const double rcs = k == 0 ? s.rcs_ue_m2 : s.rcs_pt_m2;
    p.gain[k] = detail::draw_gain(monostatic_amplitude(s, r, rcs), s, rng);
  }
  const Vec2 u = (s.ue_position - s.bs_position).normalized();
  p.doppler = 2.0 * s.carrier_hz / kSpeedOfLight * s.ue_velocity.dot(u);
  return p;
}

inline BpChannelParams derive_bp_params(const Scenario& s, std::uint64_t stream) {
  s.validate();
  Rng rng = make_rng(stream);
  const int n = s.num_targets() + 1;
  const double nu_scale = s.carrier_hz / kSpeedOfLight;
  BpChannelParams p;
  p.theta.resize(n);
  p.psi.resize(n);
  p.delay.resize(n);
  p.doppler.resize(n);
  p.gain.resize(n);

  const Vec2 d0 = s.ue_position - s.bs_position;
  const double r0 = d0.norm();
  p.theta[0] = wrap_angle(detail::bearing(d0) - s.bs_orientation);
  p.psi[0] = wrap_angle(detail::bearing(-d0) - s.orientation_offset_rad);
  p.delay[0] = r0 / kSpeedOfLight + s.clock_bias_s;
  p.doppler[0] = -nu_scale * s.ue_velocity.dot(d0 / r0);
  p.gain[0] = detail::draw_gain(bistatic_los_amplitude(s, r0), s, rng);

  for (int k = 1; k < n; ++k) {
    const Vec2& pt = s.pt_positions[k - 1];
    const Vec2 d_in = pt - s.bs_position;
    const Vec2 d_out = s.ue_position - pt;
    const double r_in = d_in.norm();
    const double r_out = d_out.norm();
    p.theta[k] = wrap_angle(detail::bearing(d_in) - s.bs_orientation);
    p.psi[k] = wrap_angle(detail::bearing(-d_out) - s.orientation_offset_rad);
    p.delay[k] = (r_in + r_out) / kSpeedOfLight + s.clock_bias_s;
    p.doppler[k] = -nu_scale * s.ue_velocity.dot(d_out / r_out);
    p.gain[k] = detail::draw_gain(bistatic_nlos_amplitude(s, r_in, r_out, s.rcs_pt_m2), s, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------

/// Per-term error-bound targets and weights of the sequential loss.
struct ThresholdSet {
  double peb_ue_ms = 0.5;   // m
  double peb_ue_bp = 0.1;   // m
  double peb_pt_ms = 1.0;   // m
  double peb_pt_bp = 0.2;   // m
  double veb_ue_bp = 10.0;  // m/s

  double w_peb_ue_ms = 1.0;
  double w_peb_pt_ms = 1.0;
  double w_peb_ue_bp = 1.0;
  double w_veb_ue_bp = 1.0;
  double w_peb_pt_bp = 1.0;

  bool two_sided = false;

  void validate() const {
    for (double g : {peb_ue_ms, peb_ue_bp, peb_pt_ms, peb_pt_bp, veb_ue_bp})
      if (!(g > 0.0)) throw std::invalid_argument("thresholds must be positive");
    for (double w : {w_peb_ue_ms, w_peb_pt_ms, w_peb_ue_bp, w_veb_ue_bp, w_peb_pt_bp})
      if (!(w >= 0.0)) throw std::invalid_argument("weights must be non-negative");
  }
};

}  // namespace isac
