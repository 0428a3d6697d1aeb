#include "equistruct/symmetrizer.hpp"

#include <Eigen/SVD>
#include <stdexcept>

#include "equistruct/rng.hpp"

namespace equistruct {

std::string to_string(BasisVariant variant) {
  switch (variant) {
    case BasisVariant::kEquivariant: return "equivariant";
    case BasisVariant::kNullspace: return "nullspace";
    case BasisVariant::kRandom: return "random";
    case BasisVariant::kFull: return "full";
  }
  return "?";
}

Matrix symmetrize(const Matrix& weight, const RepresentationPair& pair) {
  pair.check_shape(weight);
  Matrix sum = Matrix::Zero(weight.rows(), weight.cols());
  for (int g = 0; g < pair.order(); ++g) sum += pair.conjugate(g, weight);
  return sum / pair.order();
}

double equivariance_residual(const Matrix& weight, const RepresentationPair& pair) {
  pair.check_shape(weight);
  double residual = 0.0;
  for (int g = 0; g < pair.order(); ++g) {
    double r = (pair.apply_out(g, weight) - pair.apply_in(g, weight))
                   .cwiseAbs()
                   .maxCoeff();
    residual = std::max(residual, r);
  }
  return residual;
}

WeightBasis build_basis(const RepresentationPair& pair, BasisVariant variant,
                        const BasisOptions& options) {
  if (variant == BasisVariant::kFull) return full_basis(pair.shape());
  const WeightShape shape = pair.shape();
  const int dim = shape.dim();
  const int n = options.num_samples > 0 ? options.num_samples : dim + 8;
  if (n < dim)
    throw std::invalid_argument("build_basis: need at least dim(W_total) samples");

  Rng rng(options.seed);
  Matrix stacked(n, dim);
  for (int i = 0; i < n; ++i) {
    Matrix sample(shape.d_out, shape.cols());
    for (Index c = 0; c < sample.cols(); ++c)
      for (Index r = 0; r < sample.rows(); ++r) sample(r, c) = rng.normal();
    if (variant != BasisVariant::kRandom) sample = symmetrize(sample, pair);
    stacked.row(i) = Eigen::Map<const Vector>(sample.data(), dim);
  }

  Eigen::BDCSVD<Matrix> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const Vector& sigma = svd.singularValues();
  const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
  int rank = 0;
  if (sigma_max > 1e-9) {
    for (Index i = 0; i < sigma.size(); ++i)
      if (sigma(i) > options.singular_tol * sigma_max) ++rank;
  }

  WeightBasis basis{shape, variant, {}, options.seed};
  const int first = variant == BasisVariant::kNullspace ? rank : 0;
  const int last = variant == BasisVariant::kNullspace || variant == BasisVariant::kRandom
                       ? dim
                       : rank;
  basis.vectors.reserve(last - first);
  for (int i = first; i < last; ++i) {
    Vector v = svd.matrixV().col(i);
    basis.vectors.push_back(Eigen::Map<const Matrix>(v.data(), shape.d_out, shape.cols()));
  }
  return basis;
}

WeightBasis full_basis(const WeightShape& shape) {
  WeightBasis basis{shape, BasisVariant::kFull, {}, 0};
  basis.vectors.reserve(shape.dim());
  for (int c = 0; c < shape.cols(); ++c)
    for (int r = 0; r < shape.d_out; ++r) {
      Matrix v = Matrix::Zero(shape.d_out, shape.cols());
      v(r, c) = 1.0;
      basis.vectors.push_back(std::move(v));
    }
  return basis;
}

}  // namespace equistruct
