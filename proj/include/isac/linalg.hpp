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
// Symmetric PSD helpers. Fisher matrices here mix seconds, radians, hertz,
// metres and raw amplitudes, so every factorization runs on the Jacobi
// equilibrated matrix D^-1/2 M D^-1/2 and maps back.

#pragma once

#include <vector>

#include <Eigen/Eigenvalues>

#include "isac/types.hpp"

namespace isac::linalg {

/// Diagonal scale s with s_i = 1/sqrt(M_ii) (1 where the diagonal is not positive).
inline VectorXd equilibration_scale(const MatrixXd& M) {
  VectorXd s(M.rows());
  for (Eigen::Index i = 0; i < M.rows(); ++i) s(i) = M(i, i) > 0.0 ? 1.0 / std::sqrt(M(i, i)) : 1.0;
  return s;
}

inline MatrixXd symmetrize(const MatrixXd& M) { return 0.5 * (M + M.transpose()); }

/// Generalized inverse of a symmetric PSD matrix with null-space bookkeeping.
struct SymmetricInverse {
  MatrixXd inverse;        // Moore-Penrose pseudo-inverse (exact inverse when regular)
  MatrixXd null_scaled;    // null-space basis in equilibrated coordinates
  double condition = kInf; // of the equilibrated matrix
  int rank = 0;
  bool singular() const { return null_scaled.cols() > 0; }

  /// True when any null direction has weight on rows [offset, offset+size).
  bool touches(Eigen::Index offset, Eigen::Index size, double tol = 1e-6) const {
    if (null_scaled.cols() == 0) return false;
    return null_scaled.middleRows(offset, size).norm() > tol;
  }
};

/// Pseudo-inverse treating eigenvalues below lambda_max / cond_limit of the
/// equilibrated matrix as zero.
inline SymmetricInverse symmetric_pinv(const MatrixXd& M, double cond_limit = 1e12) {
  const Eigen::Index n = M.rows();
  SymmetricInverse out;
  if (n == 0) {
    out.inverse = MatrixXd(0, 0);
    out.null_scaled = MatrixXd(0, 0);
    out.condition = 1.0;
    return out;
  }
  const VectorXd s = equilibration_scale(M);
  const MatrixXd Ms = s.asDiagonal() * symmetrize(M) * s.asDiagonal();

  // Fast path: a comfortably regular matrix needs no eigen-decomposition.
  Eigen::LLT<MatrixXd> llt(Ms);
  if (llt.info() == Eigen::Success && llt.rcond() * static_cast<double>(n) > 1e3 / cond_limit) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Ms, Eigen::EigenvaluesOnly);
    const VectorXd& lam = eig.eigenvalues();
    if (lam(0) > lam(n - 1) / cond_limit) {
      out.inverse = s.asDiagonal() * llt.solve(MatrixXd::Identity(n, n)) * s.asDiagonal();
      out.inverse = symmetrize(out.inverse);
      out.null_scaled = MatrixXd(n, 0);
      out.condition = lam(n - 1) / lam(0);
      out.rank = static_cast<int>(n);
      return out;
    }
  }

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Ms);
  const VectorXd& lam = eig.eigenvalues();
  const MatrixXd& V = eig.eigenvectors();
  const double lmax = lam(n - 1);
  if (!(lmax > 0.0)) {
    out.inverse = MatrixXd::Zero(n, n);
    out.null_scaled = MatrixXd::Identity(n, n);
    out.condition = kInf;
    return out;
  }
  const double tol = lmax / cond_limit;
  Eigen::Index n_null = 0;
  while (n_null < n && lam(n_null) <= tol) ++n_null;
  out.rank = static_cast<int>(n - n_null);
  out.condition = lam(0) > 0.0 ? lmax / lam(0) : kInf;
  out.null_scaled = V.leftCols(n_null);

  const MatrixXd Vr = V.rightCols(n - n_null);
  const VectorXd inv_lam = lam.tail(n - n_null).cwiseInverse();
  MatrixXd G = s.asDiagonal() * (Vr * inv_lam.asDiagonal() * Vr.transpose()) * s.asDiagonal();
  if (n_null > 0) {
    // Project onto the orthogonal complement of the null space in original
    // coordinates; this turns the scaled g-inverse into the Moore-Penrose one.
    const MatrixXd N = s.asDiagonal() * out.null_scaled;
    Eigen::HouseholderQR<MatrixXd> qr(N);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, n_null);
    const MatrixXd P = MatrixXd::Identity(n, n) - Q * Q.transpose();
    G = P * G * P;
  }
  out.inverse = symmetrize(G);
  return out;
}

/// Result of eliminating a set of indices via the Schur complement.
struct SchurResult {
  MatrixXd reduced;   // A - B D^+ B^T over the kept indices
  MatrixXd coupling;  // X = B D^+ (kept x nuisance), needed for back-propagation
  bool degenerate = false;
};

inline MatrixXd take(const MatrixXd& M, const std::vector<int>& rows, const std::vector<int>& cols) {
  MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = M(rows[i], cols[j]);
  return out;
}

/// Schur complement of M onto `keep`, eliminating `nuisance`. A singular
/// nuisance block is inverted on its range (rank tolerance relative to its
/// largest equilibrated eigenvalue) and flagged; `ridge` > 0 instead adds
/// ridge * lambda_max * I before inversion.
inline SchurResult schur_complement(const MatrixXd& M, const std::vector<int>& keep,
                                    const std::vector<int>& nuisance, double rank_tol = 1e-10,
                                    double ridge = 0.0) {
  SchurResult out;
  const MatrixXd A = take(M, keep, keep);
  if (nuisance.empty()) {
    out.reduced = symmetrize(A);
    out.coupling = MatrixXd::Zero(keep.size(), 0);
    return out;
  }
  const MatrixXd B = take(M, keep, nuisance);
  const MatrixXd D = take(M, nuisance, nuisance);
  const Eigen::Index nn = D.rows();

  const VectorXd sd = equilibration_scale(D);
  MatrixXd Ds = sd.asDiagonal() * symmetrize(D) * sd.asDiagonal();
  MatrixXd Ds_inv;
  Eigen::LLT<MatrixXd> llt(Ds);
  if (ridge == 0.0 && llt.info() == Eigen::Success &&
      llt.rcond() * static_cast<double>(nn) > 1e3 * rank_tol) {
    Ds_inv = llt.solve(MatrixXd::Identity(nn, nn));
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Ds);
    VectorXd lam = eig.eigenvalues();
    const MatrixXd& V = eig.eigenvectors();
    const double lmax = std::max(lam(nn - 1), 0.0);
    if (ridge > 0.0) lam.array() += ridge * lmax;
    VectorXd inv = VectorXd::Zero(nn);
    for (Eigen::Index i = 0; i < nn; ++i) {
      if (lmax > 0.0 && (ridge > 0.0 || lam(i) > rank_tol * lmax)) {
        inv(i) = 1.0 / lam(i);
      } else {
        out.degenerate = true;
      }
    }
    Ds_inv = V * inv.asDiagonal() * V.transpose();
  }
  const MatrixXd D_pinv = sd.asDiagonal() * Ds_inv * sd.asDiagonal();
  out.coupling = B * D_pinv;
  out.reduced = symmetrize(A - out.coupling * B.transpose());
  return out;
}

/// Pulls a gradient on the Schur complement back to the full matrix:
/// dE = T dM T^T with T = [I, -X] in (keep, nuisance) ordering.
inline MatrixXd schur_backprop(const SchurResult& sr, const MatrixXd& grad_reduced, Eigen::Index n,
                               const std::vector<int>& keep, const std::vector<int>& nuisance) {
  MatrixXd G = MatrixXd::Zero(n, n);
  const MatrixXd& X = sr.coupling;
  const MatrixXd GX = grad_reduced * X;                // keep x nuis
  const MatrixXd XtGX = X.transpose() * GX;            // nuis x nuis
  for (std::size_t i = 0; i < keep.size(); ++i) {
    for (std::size_t j = 0; j < keep.size(); ++j) G(keep[i], keep[j]) = grad_reduced(i, j);
    for (std::size_t j = 0; j < nuisance.size(); ++j) {
      G(keep[i], nuisance[j]) = -GX(i, j);
      G(nuisance[j], keep[i]) = -GX(i, j);
    }
  }
  for (std::size_t i = 0; i < nuisance.size(); ++i)
    for (std::size_t j = 0; j < nuisance.size(); ++j) G(nuisance[i], nuisance[j]) = XtGX(i, j);
  return G;
}

}  // namespace isac::linalg
