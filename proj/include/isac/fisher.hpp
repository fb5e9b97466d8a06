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
// Channel-domain Fisher information, the geometry Jacobians and bound
// extraction.
//
// Every derivative of the noise-free observation for path k has the form
//   d mu / d xi_i = phi_k(m, t) * w_i(m, t) * X_i * z_k(l),
// with z_k(l) = [a_B(theta_k), a_B'(theta_k)]^H f_l, a fixed N_rx x 2 matrix
// X_i and a scalar weight w_i in {1, -j 2 pi m df, j 2 pi t}. The FIM is
// therefore a sum over slots of 2x2 bilinear forms in z, whose kernels only
// depend on the symbol grid; ChannelFimModel precomputes them once so that
// evaluating the FIM, or its gradient w.r.t. the beamformer, is cheap.

#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "isac/linalg.hpp"
#include "isac/signal.hpp"

namespace isac {

// ---------------------------------------------------------------------------
// Index maps

/// Ordered parameter labels, each owning a contiguous row range.
class IndexMap {
 public:
  struct Entry {
    std::string label;
    int offset = 0;
    int size = 0;
    bool operator==(const Entry&) const = default;
  };

  IndexMap() = default;
  IndexMap(std::initializer_list<std::pair<std::string, int>> items) {
    for (const auto& [l, n] : items) add(l, n);
  }

  IndexMap& add(const std::string& label, int size) {
    if (size < 0) throw std::invalid_argument("negative block size");
    if (contains(label)) throw IndexMapError("duplicate label " + label);
    entries_.push_back({label, dim_, size});
    dim_ += size;
    return *this;
  }

  int dim() const { return dim_; }
  const std::vector<Entry>& entries() const { return entries_; }
  bool contains(const std::string& label) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.label == label; });
  }
  const Entry& at(const std::string& label) const {
    for (const auto& e : entries_)
      if (e.label == label) return e;
    throw IndexMapError("unknown label " + label);
  }
  std::vector<int> indices(const std::string& label) const {
    const Entry& e = at(label);
    std::vector<int> idx(e.size);
    for (int i = 0; i < e.size; ++i) idx[i] = e.offset + i;
    return idx;
  }

  bool operator==(const IndexMap&) const = default;

 private:
  std::vector<Entry> entries_;
  int dim_ = 0;
};

inline std::string pt_label(int k) { return "p_" + std::to_string(k); }

inline IndexMap ms_channel_index(int K) {
  return IndexMap{{"theta", K + 1}, {"tau", K + 1}, {"nu", 1}, {"beta_re", K + 1}, {"beta_im", K + 1}};
}

inline IndexMap bp_channel_index(int K) {
  return IndexMap{{"theta", K + 1}, {"psi", K + 1},     {"tau", K + 1},
                  {"nu", K + 1},    {"beta_re", K + 1}, {"beta_im", K + 1}};
}

/// Shared vector [p_U; v_U; p_1..p_K].
inline IndexMap shared_index(int K) {
  IndexMap m{{"p_U", 2}, {"v_U", 2}};
  for (int k = 1; k <= K; ++k) m.add(pt_label(k), 2);
  return m;
}

inline IndexMap ms_position_index(int K) {
  IndexMap m = shared_index(K);
  m.add("beta_re", K + 1).add("beta_im", K + 1);
  return m;
}

inline IndexMap bp_position_index(int K) {
  IndexMap m = shared_index(K);
  m.add("dphi", 1).add("dt", 1).add("beta_re", K + 1).add("beta_im", K + 1);
  return m;
}

// ---------------------------------------------------------------------------
// Value types

struct FimMatrix {
  MatrixXd matrix;
  IndexMap index;
  long symbol_count = 0;
  bool degenerate_marginal = false;  // a singular nuisance block was pseudo-inverted

  int dim() const { return static_cast<int>(matrix.rows()); }
};

struct JacobianMatrix {
  MatrixXd matrix;
  IndexMap rows;  // channel-domain labels
  IndexMap cols;  // position-domain labels
};

struct BoundReport {
  double peb_ue = kInf;
  double veb_ue = kInf;
  std::vector<double> peb_pt;
  bool singular_ue_pos = true;
  bool singular_ue_vel = true;
  std::vector<bool> singular_pt;
  double condition_number = kInf;
  double raw_trace = kInf;     // tr over [p_U; v_U; p_1..p_K] of the (pseudo-)inverse
  double raw_trace_ue = kInf;  // tr over [p_U; v_U]
  MatrixXd covariance;         // (pseudo-)inverse over the full index map

  bool any_singular() const {
    return singular_ue_pos || singular_ue_vel ||
           std::any_of(singular_pt.begin(), singular_pt.end(), [](bool b) { return b; });
  }
};

enum class Modality { ms, bp };

struct SymbolIndex {
  int slot = 1;    // 1-based
  int symbol = 1;  // 1-based
  bool operator==(const SymbolIndex&) const = default;
};
using SymbolGrid = std::vector<SymbolIndex>;

/// All L*P symbols in time order.
inline SymbolGrid full_grid(int n_slots, int symbols_per_slot) {
  SymbolGrid g;
  g.reserve(static_cast<std::size_t>(n_slots) * symbols_per_slot);
  for (int l = 1; l <= n_slots; ++l)
    for (int p = 1; p <= symbols_per_slot; ++p) g.push_back({l, p});
  return g;
}

/// Subcarrier indices (1-based) entering the FIM sums.
using SubcarrierSet = std::vector<int>;

inline SubcarrierSet all_subcarriers(int M) {
  SubcarrierSet s(M);
  for (int m = 0; m < M; ++m) s[m] = m + 1;
  return s;
}

/// Evenly strided subset of size min(count, M) spanning the band.
inline SubcarrierSet decimated_subcarriers(int M, int count) {
  if (count <= 0 || count >= M) return all_subcarriers(M);
  SubcarrierSet s(count);
  for (int i = 0; i < count; ++i)
    s[i] = 1 + static_cast<int>((static_cast<long long>(i) * M) / count);
  return s;
}

struct FimOptions {
  bool exact_coupling = false;  // keep inter-path blocks
  double ridge = 0.0;           // > 0: ridge * lambda_max * I on nuisance blocks instead of a pseudo-inverse
};

// ---------------------------------------------------------------------------
// Channel FIM

class ChannelFimModel {
 public:
  enum class Weight { one, freq, time };

  ChannelFimModel(const MsChannelParams& p, const Scenario& s, const SymbolGrid& grid,
                  const SubcarrierSet& subcarriers, FimOptions opt = {})
      : modality_(Modality::ms), n_bs_(s.n_bs), dim_(4 * p.num_paths() + 1) {
    check_inputs(s, subcarriers);
    const int n = p.num_paths();
    paths_.resize(n);
    for (int k = 0; k < n; ++k) {
      paths_[k].delay = p.delay[k];
      paths_[k].doppler = k == 0 ? p.doppler : 0.0;
      paths_[k].A = steering_pair(s.n_bs, p.theta[k]);
    }
    for (int k = 0; k < n; ++k) {
      const VectorXcd a = steering_vector(s.n_bs, p.theta[k]);
      const VectorXcd ad = steering_derivative(s.n_bs, p.theta[k]);
      const cplx b = p.gain[k];
      const VectorXcd zero = VectorXcd::Zero(s.n_bs);
      add_param(k, k, Weight::one, b * ad, b * a);
      add_param(n + k, k, Weight::freq, b * a, zero);
      if (k == 0) add_param(2 * n, 0, Weight::time, b * a, zero);
      add_param(2 * n + 1 + k, k, Weight::one, a, zero);
      add_param(3 * n + 1 + k, k, Weight::one, cplx(0, 1) * a, zero);
    }
    build(s, grid, subcarriers, opt);
  }

  ChannelFimModel(const BpChannelParams& p, const Scenario& s, const SymbolGrid& grid,
                  const SubcarrierSet& subcarriers, FimOptions opt = {})
      : modality_(Modality::bp), n_bs_(s.n_bs), dim_(6 * p.num_paths()) {
    check_inputs(s, subcarriers);
    const int n = p.num_paths();
    const MatrixXcd W = Combiner::for_scenario(s).W;
    paths_.resize(n);
    for (int k = 0; k < n; ++k) {
      paths_[k].delay = p.delay[k];
      paths_[k].doppler = p.doppler[k];
      paths_[k].A = steering_pair(s.n_bs, p.theta[k]);
    }
    for (int k = 0; k < n; ++k) {
      const VectorXcd b = W.adjoint() * steering_vector(s.n_ue, p.psi[k]);
      const VectorXcd bd = W.adjoint() * steering_derivative(s.n_ue, p.psi[k]);
      const cplx g = p.gain[k];
      const VectorXcd zero = VectorXcd::Zero(b.size());
      add_param(k, k, Weight::one, zero, g * b);
      add_param(n + k, k, Weight::one, g * bd, zero);
      add_param(2 * n + k, k, Weight::freq, g * b, zero);
      add_param(3 * n + k, k, Weight::time, g * b, zero);
      add_param(4 * n + k, k, Weight::one, b, zero);
      add_param(5 * n + k, k, Weight::one, cplx(0, 1) * b, zero);
    }
    build(s, grid, subcarriers, opt);
  }

  Modality modality() const { return modality_; }
  int dim() const { return dim_; }
  int num_slots_required() const { return slots_.empty() ? 0 : slots_.back().slot; }
  long symbol_count() const { return symbol_count_; }

  /// FIM for beamformer F (N_B x L, column l-1 used in slot l).
  MatrixXd evaluate(const MatrixXcd& F) const {
    check_beamformer(F);
    MatrixXd I = MatrixXd::Zero(dim_, dim_);
    std::vector<Eigen::Vector2cd> z(paths_.size());
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const auto f = F.col(slots_[s].slot - 1);
      for (std::size_t k = 0; k < paths_.size(); ++k) z[k] = paths_[k].A.adjoint() * f;
      const auto& Ws = slots_[s].kernels;
      for (std::size_t q = 0; q < pairs_.size(); ++q) {
        const Pair& pr = pairs_[q];
        I(pr.i, pr.j) += (z[pr.ki].adjoint() * Ws[q] * z[pr.kj]).value().real();
      }
    }
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < i; ++j) I(i, j) = I(j, i);
    return I;
  }

  /// Gradient of sum_ij G_ij I_ij(F) for symmetric G, as the complex matrix g
  /// with dL = Re tr(g^H dF).
  MatrixXcd gradient(const MatrixXcd& F, const MatrixXd& G) const {
    check_beamformer(F);
    if (G.rows() != dim_ || G.cols() != dim_) throw DimensionError("gradient weight shape");
    MatrixXcd g = MatrixXcd::Zero(F.rows(), F.cols());
    std::vector<Eigen::Vector2cd> z(paths_.size()), h(paths_.size());
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const int col = slots_[s].slot - 1;
      const auto f = F.col(col);
      for (std::size_t k = 0; k < paths_.size(); ++k) {
        z[k] = paths_[k].A.adjoint() * f;
        h[k].setZero();
      }
      const auto& Ws = slots_[s].kernels;
      for (std::size_t q = 0; q < pairs_.size(); ++q) {
        const Pair& pr = pairs_[q];
        const double w = pr.i == pr.j ? G(pr.i, pr.i) : 2.0 * G(pr.i, pr.j);
        if (w == 0.0) continue;
        h[pr.ki] += w * (Ws[q] * z[pr.kj]);
        h[pr.kj] += w * (Ws[q].adjoint() * z[pr.ki]);
      }
      for (std::size_t k = 0; k < paths_.size(); ++k) g.col(col) += paths_[k].A * h[k];
    }
    return g;
  }

 private:
  struct PathInfo {
    double delay = 0.0;
    double doppler = 0.0;
    Eigen::Matrix<cplx, Eigen::Dynamic, 2> A;  // [a, a']
  };
  struct ParamInfo {
    int path = 0;
    Weight weight = Weight::one;
    Eigen::Matrix<cplx, Eigen::Dynamic, 2> X;
  };
  struct Pair {
    int i, j, ki, kj;
    Eigen::Matrix2cd Q;  // X_i^H X_j
  };
  struct SlotKernels {
    int slot = 0;
    std::vector<Eigen::Matrix2cd> kernels;  // one per pair
  };

  static Eigen::Matrix<cplx, Eigen::Dynamic, 2> steering_pair(int n, double theta) {
    Eigen::Matrix<cplx, Eigen::Dynamic, 2> A(n, 2);
    A.col(0) = steering_vector(n, theta);
    A.col(1) = steering_derivative(n, theta);
    return A;
  }

  static void check_inputs(const Scenario& s, const SubcarrierSet& sc) {
    if (!(s.noise_power() > 0.0)) throw std::invalid_argument("noise power must be positive");
    if (sc.empty()) throw std::invalid_argument("subcarrier set must be non-empty");
    for (int m : sc)
      if (m < 1 || m > s.n_subcarriers) throw std::out_of_range("subcarrier index outside 1..M");
  }

  void check_beamformer(const MatrixXcd& F) const {
    if (F.rows() != n_bs_) throw DimensionError("beamformer rows must equal N_B");
    if (F.cols() < num_slots_required()) throw DimensionError("beamformer has too few slot columns");
  }

  void add_param(int index, int path, Weight w, const VectorXcd& x, const VectorXcd& y) {
    if (static_cast<int>(params_.size()) <= index) params_.resize(index + 1);
    ParamInfo& p = params_[index];
    p.path = path;
    p.weight = w;
    p.X.resize(x.size(), 2);
    p.X.col(0) = x;
    p.X.col(1) = y;
  }

  static int freq_power(Weight w) { return w == Weight::freq ? 1 : 0; }
  static int time_power(Weight w) { return w == Weight::time ? 1 : 0; }

  // conj(w_i) * w_j with the m / t powers stripped.
  static cplx weight_coef(Weight a, Weight b, double df) {
    const double tp = 2.0 * kPi;
    const cplx j(0.0, 1.0);
    auto w = [&](Weight x) -> cplx {
      switch (x) {
        case Weight::freq: return -j * tp * df;
        case Weight::time: return j * tp;
        default: return 1.0;
      }
    };
    return std::conj(w(a)) * w(b);
  }

  void build(const Scenario& s, const SymbolGrid& grid, const SubcarrierSet& sc, FimOptions opt) {
    if (grid.empty()) throw std::invalid_argument("symbol grid must be non-empty");
    const double df = s.subcarrier_spacing();
    const double sigma2 = s.noise_power();
    const double t_slot = s.slot_duration(), t_sym = s.symbol_duration();

    for (int i = 0; i < dim_; ++i)
      for (int j = i; j < dim_; ++j) {
        const int ki = params_[i].path, kj = params_[j].path;
        if (!opt.exact_coupling && ki != kj) continue;
        Pair pr{i, j, ki, kj, params_[i].X.adjoint() * params_[j].X};
        if (pr.Q.isZero(0.0)) continue;
        pairs_.push_back(pr);
      }

    std::map<int, std::vector<double>> times;
    for (const auto& si : grid) {
      if (si.slot < 1 || si.slot > s.n_slots || si.symbol < 1 || si.symbol > s.symbols_per_slot)
        throw std::out_of_range("symbol grid entry outside 1..L x 1..P");
      times[si.slot].push_back(symbol_start_time(si.slot, si.symbol, t_slot, t_sym));
    }
    symbol_count_ = static_cast<long>(grid.size());

    // Frequency moments per path pair: S[a] = sum_m m^a exp(-j 2 pi m df (tau_j - tau_i)).
    const int np = static_cast<int>(paths_.size());
    std::vector<std::array<cplx, 3>> S(np * np);
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < np; ++b) {
        if (!opt.exact_coupling && a != b) continue;
        const double dtau = paths_[b].delay - paths_[a].delay;
        std::array<cplx, 3> acc{};
        for (int m : sc) {
          const cplx e = dtau == 0.0 ? cplx(1.0) : std::polar(1.0, -2.0 * kPi * m * df * dtau);
          const double md = m;
          acc[0] += e;
          acc[1] += md * e;
          acc[2] += md * md * e;
        }
        S[a * np + b] = acc;
      }

    for (const auto& [slot, ts] : times) {
      SlotKernels sk;
      sk.slot = slot;
      std::vector<std::array<cplx, 3>> T(np * np);
      for (int a = 0; a < np; ++a)
        for (int b = 0; b < np; ++b) {
          if (!opt.exact_coupling && a != b) continue;
          const double dnu = paths_[b].doppler - paths_[a].doppler;
          std::array<cplx, 3> acc{};
          for (double t : ts) {
            const cplx e = dnu == 0.0 ? cplx(1.0) : std::polar(1.0, 2.0 * kPi * dnu * t);
            acc[0] += e;
            acc[1] += t * e;
            acc[2] += t * t * e;
          }
          T[a * np + b] = acc;
        }
      sk.kernels.reserve(pairs_.size());
      for (const Pair& pr : pairs_) {
        const Weight wi = params_[pr.i].weight, wj = params_[pr.j].weight;
        const int fa = freq_power(wi) + freq_power(wj);
        const int tb = time_power(wi) + time_power(wj);
        const cplx moment = weight_coef(wi, wj, df) * S[pr.ki * np + pr.kj][fa] *
                            T[pr.ki * np + pr.kj][tb];
        sk.kernels.push_back((2.0 / sigma2) * moment * pr.Q);
      }
      slots_.push_back(std::move(sk));
    }
  }

  Modality modality_;
  int n_bs_;
  int dim_;
  long symbol_count_ = 0;
  std::vector<PathInfo> paths_;
  std::vector<ParamInfo> params_;
  std::vector<Pair> pairs_;
  std::vector<SlotKernels> slots_;
};

/// Channel-domain FIM, MS variant.
inline FimMatrix channel_fim(const MsChannelParams& p, const Scenario& s, const Beamformer& F,
                             const SymbolGrid& grid, const SubcarrierSet& subcarriers,
                             FimOptions opt = {}) {
  if (!F.feasible(1e-9)) throw std::invalid_argument("beamformer violates its power budget");
  ChannelFimModel model(p, s, grid, subcarriers, opt);
  return {model.evaluate(F.F), ms_channel_index(p.num_paths() - 1), model.symbol_count()};
}

/// Channel-domain FIM, BP variant.
inline FimMatrix channel_fim(const BpChannelParams& p, const Scenario& s, const Beamformer& F,
                             const SymbolGrid& grid, const SubcarrierSet& subcarriers,
                             FimOptions opt = {}) {
  if (!F.feasible(1e-9)) throw std::invalid_argument("beamformer violates its power budget");
  ChannelFimModel model(p, s, grid, subcarriers, opt);
  return {model.evaluate(F.F), bp_channel_index(p.num_paths() - 1), model.symbol_count()};
}

// ---------------------------------------------------------------------------
// Jacobians

namespace detail {

// Gradient of atan2(d) w.r.t. d.
inline Vec2 bearing_grad(const Vec2& d) { return Vec2(-d.y(), d.x()) / d.squaredNorm(); }

// Gradient of v . (d / |d|) w.r.t. d.
inline Vec2 radial_grad(const Vec2& d, const Vec2& v) {
  const double r = d.norm();
  const Vec2 u = d / r;
  return (v - u * u.dot(v)) / r;
}

inline void put(MatrixXd& J, int row, int col, const Vec2& g) {
  J(row, col) = g.x();
  J(row, col + 1) = g.y();
}

inline int shared_col(const IndexMap& m, int k) {
  return m.at(k == 0 ? std::string("p_U") : pt_label(k)).offset;
}

}  // namespace detail

/// d xi_MS / d eta_MS.
inline JacobianMatrix ms_jacobian(const Scenario& s) {
  s.validate();
  const int K = s.num_targets();
  JacobianMatrix jac{MatrixXd::Zero(4 * K + 5, 4 * K + 6), ms_channel_index(K), ms_position_index(K)};
  MatrixXd& J = jac.matrix;
  const int n = K + 1;
  const int c_v = jac.cols.at("v_U").offset;
  const int c_br = jac.cols.at("beta_re").offset, c_bi = jac.cols.at("beta_im").offset;
  for (int k = 0; k < n; ++k) {
    const Vec2 d = s.entity(k) - s.bs_position;
    const int col = detail::shared_col(jac.cols, k);
    detail::put(J, k, col, detail::bearing_grad(d));
    detail::put(J, n + k, col, (2.0 / kSpeedOfLight) * d.normalized());
    J(2 * n + 1 + k, c_br + k) = 1.0;
    J(3 * n + 1 + k, c_bi + k) = 1.0;
  }
  const Vec2 d0 = s.ue_position - s.bs_position;
  const double scale = 2.0 * s.carrier_hz / kSpeedOfLight;
  detail::put(J, 2 * n, c_v, scale * d0.normalized());
  detail::put(J, 2 * n, 0, scale * detail::radial_grad(d0, s.ue_velocity));
  return jac;
}

/// d xi_BP / d eta_BP.
inline JacobianMatrix bp_jacobian(const Scenario& s) {
  s.validate();
  const int K = s.num_targets();
  JacobianMatrix jac{MatrixXd::Zero(6 * K + 6, 4 * K + 8), bp_channel_index(K), bp_position_index(K)};
  MatrixXd& J = jac.matrix;
  const int n = K + 1;
  const int c_u = 0;
  const int c_v = jac.cols.at("v_U").offset;
  const int c_phi = jac.cols.at("dphi").offset, c_dt = jac.cols.at("dt").offset;
  const int c_br = jac.cols.at("beta_re").offset, c_bi = jac.cols.at("beta_im").offset;
  const double nu_scale = s.carrier_hz / kSpeedOfLight;
  const Vec2& v = s.ue_velocity;

  for (int k = 0; k < n; ++k) {
    const int r_theta = k, r_psi = n + k, r_tau = 2 * n + k, r_nu = 3 * n + k;
    J(r_psi, c_phi) = -1.0;
    J(r_tau, c_dt) = 1.0;
    J(4 * n + k, c_br + k) = 1.0;
    J(5 * n + k, c_bi + k) = 1.0;
    if (k == 0) {
      const Vec2 d = s.ue_position - s.bs_position;
      detail::put(J, r_theta, c_u, detail::bearing_grad(d));
      // psi_0 = bearing(p_B - p_U) - dphi
      detail::put(J, r_psi, c_u, -detail::bearing_grad(-d));
      detail::put(J, r_tau, c_u, d.normalized() / kSpeedOfLight);
      detail::put(J, r_nu, c_v, -nu_scale * d.normalized());
      detail::put(J, r_nu, c_u, -nu_scale * detail::radial_grad(d, v));
    } else {
      const Vec2& pt = s.pt_positions[k - 1];
      const int c_k = jac.cols.at(pt_label(k)).offset;
      const Vec2 d_in = pt - s.bs_position;
      const Vec2 d_out = s.ue_position - pt;
      detail::put(J, r_theta, c_k, detail::bearing_grad(d_in));
      // psi_k = bearing(p_k - p_U) - dphi
      const Vec2 gpsi = detail::bearing_grad(-d_out);
      detail::put(J, r_psi, c_k, gpsi);
      detail::put(J, r_psi, c_u, -gpsi);
      detail::put(J, r_tau, c_k, (d_in.normalized() - d_out.normalized()) / kSpeedOfLight);
      detail::put(J, r_tau, c_u, d_out.normalized() / kSpeedOfLight);
      const Vec2 gnu = -nu_scale * detail::radial_grad(d_out, v);
      detail::put(J, r_nu, c_v, -nu_scale * d_out.normalized());
      detail::put(J, r_nu, c_u, gnu);
      detail::put(J, r_nu, c_k, -gnu);
    }
  }
  return jac;
}

/// J^T I J.
inline FimMatrix position_fim(const FimMatrix& chan, const JacobianMatrix& jac) {
  if (!(chan.index == jac.rows) || chan.matrix.rows() != jac.matrix.rows())
    throw IndexMapError("channel FIM labels do not match Jacobian rows");
  FimMatrix out;
  out.matrix = linalg::symmetrize(jac.matrix.transpose() * chan.matrix * jac.matrix);
  out.index = jac.cols;
  out.symbol_count = chan.symbol_count;
  return out;
}

// ---------------------------------------------------------------------------
// Marginalization and bounds

struct Marginalization {
  FimMatrix fim;
  linalg::SchurResult schur;
  std::vector<int> keep, nuisance;
};

inline Marginalization marginalize_detailed(const FimMatrix& fim,
                                            const std::vector<std::string>& nuisance_labels,
                                            double ridge = 0.0) {
  for (const auto& l : nuisance_labels)
    if (!fim.index.contains(l)) throw IndexMapError("nuisance label not in FIM: " + l);
  Marginalization out;
  IndexMap kept;
  for (const auto& e : fim.index.entries()) {
    const bool is_nuis =
        std::find(nuisance_labels.begin(), nuisance_labels.end(), e.label) != nuisance_labels.end();
    for (int i = 0; i < e.size; ++i) (is_nuis ? out.nuisance : out.keep).push_back(e.offset + i);
    if (!is_nuis) kept.add(e.label, e.size);
  }
  if (out.keep.empty()) throw std::invalid_argument("every parameter is marked as nuisance");
  out.schur = linalg::schur_complement(fim.matrix, out.keep, out.nuisance, 1e-10, ridge);
  out.fim.matrix = out.schur.reduced;
  out.fim.index = kept;
  out.fim.symbol_count = fim.symbol_count;
  out.fim.degenerate_marginal = fim.degenerate_marginal || out.schur.degenerate;
  return out;
}

/// Equivalent FIM on the non-nuisance labels, in their original order.
inline FimMatrix marginalize_nuisance(const FimMatrix& fim,
                                      const std::vector<std::string>& nuisance_labels,
                                      double ridge = 0.0) {
  return marginalize_detailed(fim, nuisance_labels, ridge).fim;
}

inline std::vector<std::string> ms_nuisance_labels() { return {"beta_re", "beta_im"}; }
inline std::vector<std::string> bp_nuisance_labels() { return {"dphi", "dt", "beta_re", "beta_im"}; }

inline constexpr double kConditionLimit = 1e12;

/// PEB/VEB per block from the (pseudo-)inverse. Blocks touched by the null
/// space of an ill-conditioned FIM are reported unbounded.
inline BoundReport crb_extract(const FimMatrix& fim) {
  BoundReport r;
  const auto inv = linalg::symmetric_pinv(fim.matrix, kConditionLimit);
  r.condition_number = inv.condition;
  r.covariance = inv.inverse;
  auto block = [&](const std::string& label, double& bound, bool& singular) {
    if (!fim.index.contains(label)) return;
    const auto& e = fim.index.at(label);
    singular = inv.touches(e.offset, e.size);
    const double tr = inv.inverse.diagonal().segment(e.offset, e.size).sum();
    bound = singular ? kInf : std::sqrt(std::max(tr, 0.0));
  };
  block("p_U", r.peb_ue, r.singular_ue_pos);
  block("v_U", r.veb_ue, r.singular_ue_vel);
  for (int k = 1; fim.index.contains(pt_label(k)); ++k) {
    double b = kInf;
    bool sing = true;
    block(pt_label(k), b, sing);
    r.peb_pt.push_back(b);
    r.singular_pt.push_back(sing);
  }
  auto trace_of = [&](const std::vector<std::string>& labels) {
    double t = 0.0;
    for (const auto& l : labels) {
      if (!fim.index.contains(l)) continue;
      const auto& e = fim.index.at(l);
      t += inv.inverse.diagonal().segment(e.offset, e.size).sum();
    }
    return t;
  };
  r.raw_trace_ue = trace_of({"p_U", "v_U"});
  std::vector<std::string> all{"p_U", "v_U"};
  for (std::size_t k = 1; k <= r.peb_pt.size(); ++k) all.push_back(pt_label(static_cast<int>(k)));
  r.raw_trace = trace_of(all);
  return r;
}

inline BoundReport crb_extract(const FimMatrix& fim, const Scenario& /*scenario*/) {
  return crb_extract(fim);
}

// ---------------------------------------------------------------------------
// Stage evaluation: beamformer -> FIM over [p_U; v_U; p_1..p_K], with the
// reverse pass needed by the optimizers.

class StageModel {
 public:
  struct Evaluation {
    MatrixXd channel;        // channel-domain FIM
    Marginalization reduced; // shared-parameter FIM and Schur data
  };

  StageModel(const Scenario& s, std::uint64_t stream, Modality mod, const SymbolGrid& grid,
             const SubcarrierSet& subcarriers, FimOptions opt = {})
      : modality_(mod),
        model_(mod == Modality::ms ? ChannelFimModel(derive_ms_params(s, stream), s, grid, subcarriers, opt)
                                   : ChannelFimModel(derive_bp_params(s, stream), s, grid, subcarriers, opt)),
        jac_(mod == Modality::ms ? ms_jacobian(s) : bp_jacobian(s)),
        ridge_(opt.ridge) {}

  Modality modality() const { return modality_; }
  const JacobianMatrix& jacobian() const { return jac_; }
  const ChannelFimModel& model() const { return model_; }

  Evaluation evaluate(const MatrixXcd& F) const {
    Evaluation ev;
    ev.channel = model_.evaluate(F);
    FimMatrix chan{ev.channel, jac_.rows, model_.symbol_count()};
    const FimMatrix pos = position_fim(chan, jac_);
    ev.reduced = marginalize_detailed(
        pos, modality_ == Modality::ms ? ms_nuisance_labels() : bp_nuisance_labels(), ridge_);
    return ev;
  }

  FimMatrix shared_fim(const MatrixXcd& F) const { return evaluate(F).reduced.fim; }

  /// Given G = dLoss/d(shared FIM) (symmetric), returns dLoss/dF.
  MatrixXcd backprop(const MatrixXcd& F, const Evaluation& ev, const MatrixXd& G_shared) const {
    const MatrixXd G_pos = linalg::schur_backprop(ev.reduced.schur, G_shared, jac_.matrix.cols(),
                                                  ev.reduced.keep, ev.reduced.nuisance);
    const MatrixXd G_chan = jac_.matrix * G_pos * jac_.matrix.transpose();
    return model_.gradient(F, linalg::symmetrize(G_chan));
  }

 private:
  Modality modality_;
  ChannelFimModel model_;
  JacobianMatrix jac_;
  double ridge_ = 0.0;
};

}  // namespace isac
