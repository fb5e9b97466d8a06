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

#include "isac/linalg.hpp"

using namespace isac;
using namespace isac::linalg;

namespace {

MatrixXd random_spd(Rng& rng, int n, int rank = -1) {
  std::normal_distribution<double> g;
  if (rank < 0) rank = n;
  MatrixXd A(n, rank);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) A(i, j) = g(rng);
  return A * A.transpose();
}

}  // namespace

TEST_CASE("pseudo-inverse of a regular matrix is the inverse", "[linalg]") {
  Rng rng(1);
  const MatrixXd M = random_spd(rng, 7);
  const auto inv = symmetric_pinv(M);
  CHECK_FALSE(inv.singular());
  CHECK(inv.rank == 7);
  CHECK((inv.inverse * M - MatrixXd::Identity(7, 7)).norm() < 1e-9);
}

TEST_CASE("badly scaled but regular matrices stay regular", "[linalg]") {
  Rng rng(2);
  MatrixXd M = random_spd(rng, 5);
  VectorXd d(5);
  d << 1e-9, 1.0, 1e7, 1e3, 1e-4;
  M = d.asDiagonal() * M * d.asDiagonal();
  const auto inv = symmetric_pinv(M);
  CHECK_FALSE(inv.singular());
  // Residual in equilibrated coordinates: (S^-1 G S^-1)(S M S) - I.
  const VectorXd s = equilibration_scale(M);
  const MatrixXd E = s.cwiseInverse().asDiagonal() * inv.inverse * M * s.asDiagonal() -
                     MatrixXd::Identity(5, 5);
  CHECK(E.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rank-deficient matrices are flagged and Moore-Penrose inverted", "[linalg]") {
  Rng rng(3);
  const MatrixXd M = random_spd(rng, 6, 4);
  const auto inv = symmetric_pinv(M);
  CHECK(inv.singular());
  CHECK(inv.rank == 4);
  const MatrixXd& G = inv.inverse;
  CHECK((M * G * M - M).norm() < 1e-8 * M.norm());
  CHECK((G * M * G - G).norm() < 1e-8 * G.norm());
  CHECK((M * G - (M * G).transpose()).norm() < 1e-8);
}

TEST_CASE("null directions are attributed to the right block", "[linalg]") {
  MatrixXd M = MatrixXd::Identity(4, 4);
  M(3, 3) = 0.0;
  const auto inv = symmetric_pinv(M);
  CHECK(inv.singular());
  CHECK_FALSE(inv.touches(0, 2));
  CHECK(inv.touches(2, 2));
}

TEST_CASE("Schur complement identity", "[linalg]") {
  Rng rng(4);
  const MatrixXd M = random_spd(rng, 8);
  const std::vector<int> keep{0, 2, 5}, nuis{1, 3, 4, 6, 7};
  const auto sr = schur_complement(M, keep, nuis);
  const MatrixXd inv = M.inverse();
  const MatrixXd sub = take(inv, keep, keep);
  CHECK((sr.reduced.inverse() - sub).norm() <= 1e-9 * sub.norm());
  CHECK_FALSE(sr.degenerate);
}

TEST_CASE("Schur with identity nuisance block", "[linalg]") {
  MatrixXd M = MatrixXd::Zero(5, 5);
  M.topLeftCorner(2, 2) << 3.0, 0.5, 0.5, 2.0;
  M.bottomRightCorner(3, 3).setIdentity();
  M.topRightCorner(2, 3).setConstant(0.1);
  M.bottomLeftCorner(3, 2).setConstant(0.1);
  const auto sr = schur_complement(M, {0, 1}, {2, 3, 4});
  MatrixXd expect = M.topLeftCorner(2, 2) - 0.01 * 3.0 * MatrixXd::Ones(2, 2);
  CHECK((sr.reduced - expect).norm() < 1e-14);
}

TEST_CASE("singular nuisance block is flagged", "[linalg]") {
  Rng rng(5);
  MatrixXd M = random_spd(rng, 5);
  M.row(4).setZero();
  M.col(4).setZero();
  const auto sr = schur_complement(M, {0, 1}, {2, 3, 4});
  CHECK(sr.degenerate);
  CHECK(sr.reduced.allFinite());
}

TEST_CASE("Schur back-propagation matches finite differences", "[linalg]") {
  Rng rng(6);
  const MatrixXd M = random_spd(rng, 6);
  const std::vector<int> keep{0, 1, 4}, nuis{2, 3, 5};
  MatrixXd G = random_spd(rng, 3);
  const auto sr = schur_complement(M, keep, nuis);
  const MatrixXd GM = schur_backprop(sr, G, 6, keep, nuis);
  MatrixXd dM = random_spd(rng, 6) * 1e-6;
  const double f0 = (G.cwiseProduct(schur_complement(M + dM, keep, nuis).reduced)).sum();
  const double f1 = (G.cwiseProduct(schur_complement(M - dM, keep, nuis).reduced)).sum();
  const double fd = (f0 - f1) / 2.0;
  const double an = GM.cwiseProduct(dM).sum();
  CHECK(std::abs(fd - an) <= 1e-6 * std::abs(an));
}
