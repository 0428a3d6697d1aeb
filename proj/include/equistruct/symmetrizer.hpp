#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "equistruct/group.hpp"
#include "equistruct/types.hpp"

namespace equistruct {

enum class BasisVariant {
  kEquivariant,  // span of the symmetrized samples
  kNullspace,    // orthogonal complement of the equivariant subspace
  kRandom,       // symmetrization skipped, full-rank basis from raw samples
  kFull,         // canonical indicator basis of the whole space (plain layers)
};

std::string to_string(BasisVariant variant);

/// Orthonormal basis of a weight subspace. Vectors are stored in weight
/// layout (d_out x d_in*spatial); their vectorizations are pairwise
/// orthonormal.
struct WeightBasis {
  WeightShape shape;
  BasisVariant variant = BasisVariant::kFull;
  std::vector<Matrix> vectors;
  std::uint64_t seed = 0;

  int rank() const { return static_cast<int>(vectors.size()); }
};

/// The projection S(W) = (1/|G|) sum_g K_g^{-1} W L_g onto the equivariant
/// weight subspace.
Matrix symmetrize(const Matrix& weight, const RepresentationPair& pair);

/// max over g of the infinity norm of K_g W - W L_g.
double equivariance_residual(const Matrix& weight, const RepresentationPair& pair);

struct BasisOptions {
  int num_samples = 0;  // 0 -> dim(W_total) + 8
  std::uint64_t seed = 0;
  double singular_tol = 1e-6;  // relative to the largest singular value
};

/// Numerical basis construction: sample standard-normal weights, symmetrize
/// (unless variant = random), stack their vectorizations and split the
/// right-singular vectors at the spectrum gap. An empty equivariant basis is
/// a valid result, not an error.
WeightBasis build_basis(const RepresentationPair& pair, BasisVariant variant,
                        const BasisOptions& options = {});

/// Canonical indicator basis of the full weight space; exact and orthonormal.
/// Plain (unconstrained) layers use this, making coefficients plain weights.
WeightBasis full_basis(const WeightShape& shape);

}  // namespace equistruct
