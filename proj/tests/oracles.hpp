#pragma once

// Independent test-side oracles. These must not share the code paths they
// check: the nullity oracle assembles the constraint system explicitly and
// row-reduces it, and the derivative oracle is a central finite difference.

#include <Eigen/SVD>
#include <functional>

#include "equistruct/group.hpp"
#include "equistruct/types.hpp"

namespace equistruct::oracles {

/// Nullity of the stacked equivariance constraints K_g W = W L_g over all
/// non-identity elements, acting on vec(W) (column-major).
inline int constraint_nullity(const RepresentationPair& pair, double tol = 1e-8) {
  const WeightShape shape = pair.shape();
  const int d_out = shape.d_out;
  const int cols = shape.cols();
  const int dim = shape.dim();
  const int blocks = pair.order() - 1;
  if (blocks == 0) return dim;

  Matrix system(Index(blocks) * dim, dim);
  int block = 0;
  for (int g = 0; g < pair.order(); ++g) {
    if (g == pair.group().identity) continue;
    // vec(K W) = (I ⊗ K) vec W, vec(W L) = (L^T ⊗ I) vec W.
    const Matrix& k = pair.out().matrix(g);
    const Matrix& l = pair.in_full(g);
    Matrix constraint = Matrix::Zero(dim, dim);
    for (int c = 0; c < cols; ++c)
      constraint.block(Index(c) * d_out, Index(c) * d_out, d_out, d_out) = k;
    for (int c_in = 0; c_in < cols; ++c_in)
      for (int c_out = 0; c_out < cols; ++c_out)
        constraint.block(Index(c_out) * d_out, Index(c_in) * d_out, d_out, d_out) -=
            l(c_in, c_out) * Matrix::Identity(d_out, d_out);
    system.middleRows(Index(block) * dim, dim) = constraint;
    ++block;
  }
  Eigen::BDCSVD<Matrix> svd(system);
  const Vector& sigma = svd.singularValues();
  if (sigma.size() == 0 || sigma(0) < 1e-12) return dim;
  int rank = 0;
  for (Index i = 0; i < sigma.size(); ++i)
    if (sigma(i) > tol * sigma(0)) ++rank;
  return dim - rank;
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x,
                                 double eps = 1e-5) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

}  // namespace equistruct::oracles
