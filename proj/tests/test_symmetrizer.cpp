#include "equistruct/symmetrizer.hpp"

#include <stdexcept>

#include "doctest.h"
#include "equistruct/rng.hpp"
#include "oracles.hpp"

using namespace equistruct;

namespace {

RepresentationPair swap_swap_pair() {
  FiniteGroup c2 = make_cyclic_group(2);
  Representation swap = Representation::permutation(c2, {{0, 1}, {1, 0}});
  return {swap, swap};
}

Matrix random_weight(const WeightShape& shape, Rng& rng) {
  Matrix w(shape.d_out, shape.cols());
  for (Index c = 0; c < w.cols(); ++c)
    for (Index r = 0; r < w.rows(); ++r) w(r, c) = rng.normal();
  return w;
}

}  // namespace

TEST_CASE("symmetrizer on the C2 swap pair, evaluated by hand") {
  RepresentationPair pair = swap_swap_pair();
  Matrix w(2, 2);
  w << 1, 2, 3, 5;
  // S(W) = (W + swap * W * swap) / 2.
  Matrix expected(2, 2);
  expected << 3.0, 2.5, 2.5, 3.0;
  CHECK((symmetrize(w, pair) - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("trivial group leaves weights unchanged") {
  FiniteGroup trivial = make_cyclic_group(1);
  RepresentationPair pair{Representation::identity(trivial, 3),
                          Representation::identity(trivial, 2)};
  Rng rng(1);
  Matrix w = random_weight(pair.shape(), rng);
  CHECK((symmetrize(w, pair) - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("equivariant weights are fixed") {
  RepresentationPair pair = swap_swap_pair();
  Matrix w(2, 2);
  w << 4.0, -1.5, -1.5, 4.0;  // the {[[a,b],[b,a]]} subspace
  CHECK((symmetrize(w, pair) - w).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(equivariance_residual(w, pair) <= 1e-15);
}

TEST_CASE("equivariance residual of a hand case") {
  RepresentationPair pair = swap_swap_pair();
  Matrix w(2, 2);
  w << 1, 0, 0, 0;
  // K W = [[0,0],[1,0]], W L = [[0,1],[0,0]]; the largest entry differs by 1.
  CHECK(equivariance_residual(w, pair) == doctest::Approx(1.0));
}

TEST_CASE("residual rejects mismatched shapes") {
  RepresentationPair pair = swap_swap_pair();
  CHECK_THROWS_AS(equivariance_residual(Matrix::Zero(3, 2), pair),
                  std::invalid_argument);
  CHECK_THROWS_AS(symmetrize(Matrix::Zero(2, 3), pair), std::invalid_argument);
}

TEST_CASE("swap/swap basis ranks: equivariant 2, nullspace 2, random 4") {
  RepresentationPair pair = swap_swap_pair();
  WeightBasis equi = build_basis(pair, BasisVariant::kEquivariant, {0, 42});
  WeightBasis null = build_basis(pair, BasisVariant::kNullspace, {0, 42});
  WeightBasis rand = build_basis(pair, BasisVariant::kRandom, {0, 42});
  CHECK(equi.rank() == 2);
  CHECK(null.rank() == 2);
  CHECK(rand.rank() == 4);
  CHECK(oracles::constraint_nullity(pair) == 2);
  // Every equivariant basis vector lies in {[[a,b],[b,a]]}.
  for (const Matrix& v : equi.vectors) {
    CHECK(v(0, 0) == doctest::Approx(v(1, 1)).epsilon(1e-10));
    CHECK(v(0, 1) == doctest::Approx(v(1, 0)).epsilon(1e-10));
  }
}

TEST_CASE("cartpole first layer has rank 5, matching the constraint oracle") {
  CartPoleReps reps = cartpole_representations();
  RepresentationPair pair = reps.first_layer();
  WeightBasis basis = build_basis(pair, BasisVariant::kEquivariant, {0, 9});
  CHECK(basis.rank() == 5);
  CHECK(oracles::constraint_nullity(pair) == 5);
}

TEST_CASE("equivariant rank equals brute-force nullity on every small shipped pair") {
  CartPoleReps cp = cartpole_representations();
  GridWorldReps gw = gridworld_representations();
  std::vector<RepresentationPair> pairs = {
      cp.first_layer(), cp.hidden_layer(),  cp.policy_head(), cp.value_head(),
      gw.dense_layer(), gw.policy_head(),   gw.value_head()};
  // A small spatial case fits the oracle too: C2 acting by 180-degree filter
  // rotation with a channel swap.
  {
    FiniteGroup c2 = make_cyclic_group(2);
    Representation swap = Representation::permutation(c2, {{0, 1}, {1, 0}});
    pairs.emplace_back(augment_bias(swap), swap,
                       SpatialAction::rotations90(c2, 3, 3), 1);
  }
  for (const RepresentationPair& pair : pairs) {
    CAPTURE(pair.shape().dim());
    REQUIRE(pair.shape().dim() <= 64);
    WeightBasis basis = build_basis(pair, BasisVariant::kEquivariant, {0, 1});
    CHECK(basis.rank() == oracles::constraint_nullity(pair));
  }
}

TEST_CASE("rank is stable across seeds") {
  CartPoleReps reps = cartpole_representations();
  RepresentationPair pair = reps.hidden_layer();
  int rank = build_basis(pair, BasisVariant::kEquivariant, {0, 0}).rank();
  for (std::uint64_t seed = 1; seed < 10; ++seed)
    CHECK(build_basis(pair, BasisVariant::kEquivariant, {0, seed}).rank() == rank);
}

TEST_CASE("basis vectors are orthonormal and variants are orthogonal") {
  GridWorldReps gw = gridworld_representations();
  RepresentationPair pair = gw.policy_head();
  WeightBasis equi = build_basis(pair, BasisVariant::kEquivariant, {0, 5});
  WeightBasis null = build_basis(pair, BasisVariant::kNullspace, {0, 5});
  const int dim = pair.shape().dim();
  CHECK(equi.rank() + null.rank() == dim);
  auto flat = [dim](const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), dim);
  };
  for (int i = 0; i < equi.rank(); ++i)
    for (int j = 0; j < equi.rank(); ++j)
      CHECK(std::abs(flat(equi.vectors[i]).dot(flat(equi.vectors[j])) -
                     (i == j ? 1.0 : 0.0)) <= 1e-8);
  for (const Matrix& ve : equi.vectors)
    for (const Matrix& vn : null.vectors)
      CHECK(std::abs(flat(ve).dot(flat(vn))) <= 1e-8);
}

TEST_CASE("symmetric, fixing and idempotence properties on random weights") {
  CartPoleReps cp = cartpole_representations();
  GridWorldReps gw = gridworld_representations();
  Rng rng(77);
  for (const RepresentationPair& pair :
       {cp.first_layer(), gw.second_conv(), gw.policy_head()}) {
    WeightBasis basis = build_basis(pair, BasisVariant::kEquivariant, {0, 3});
    for (int trial = 0; trial < 100; ++trial) {
      Matrix w = random_weight(pair.shape(), rng);
      Matrix s = symmetrize(w, pair);
      CHECK(equivariance_residual(s, pair) <= 1e-10);
      CHECK((symmetrize(s, pair) - s).cwiseAbs().maxCoeff() <= 1e-12);
    }
    for (int trial = 0; trial < 10; ++trial) {
      Matrix combo = Matrix::Zero(pair.shape().d_out, pair.shape().cols());
      for (const Matrix& v : basis.vectors) combo += rng.normal() * v;
      CHECK((symmetrize(combo, pair) - combo).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(equivariance_residual(combo, pair) <= 1e-10);
    }
  }
}

TEST_CASE("trivial group yields a full-rank basis") {
  FiniteGroup trivial = make_cyclic_group(1);
  RepresentationPair pair{Representation::identity(trivial, 4),
                          Representation::identity(trivial, 3)};
  WeightBasis basis = build_basis(pair, BasisVariant::kEquivariant, {0, 2});
  CHECK(basis.rank() == 12);
}

TEST_CASE("a pair with no equivariant weights yields an empty basis") {
  FiniteGroup c2 = make_cyclic_group(2);
  // L = {1, -1}, K = {1, 1}: the constraint forces W = -W.
  Representation sign(c2, {Matrix::Identity(1, 1), -Matrix::Identity(1, 1)});
  RepresentationPair pair{sign, Representation::identity(c2, 1)};
  WeightBasis equi = build_basis(pair, BasisVariant::kEquivariant, {0, 4});
  WeightBasis null = build_basis(pair, BasisVariant::kNullspace, {0, 4});
  CHECK(equi.rank() == 0);
  CHECK(null.rank() == 1);
  CHECK(oracles::constraint_nullity(pair) == 0);
}

TEST_CASE("too few samples is an error") {
  RepresentationPair pair = swap_swap_pair();
  BasisOptions opt;
  opt.num_samples = 3;  // dim is 4
  CHECK_THROWS_AS(build_basis(pair, BasisVariant::kEquivariant, opt),
                  std::invalid_argument);
}

TEST_CASE("singular threshold is insensitive across the documented range") {
  CartPoleReps reps = cartpole_representations();
  RepresentationPair pair = reps.first_layer();
  for (double tol : {1e-10, 1e-8, 1e-6, 1e-3})
    CHECK(build_basis(pair, BasisVariant::kEquivariant, {0, 8, tol}).rank() == 5);
}

TEST_CASE("gridworld conv bases have the orbit-counting ranks") {
  GridWorldReps gw = gridworld_representations();
  // conv1: one free 7x7 filter copied around the rotation orbit plus the
  // matching bias slot pattern: 2 * 49 entries of freedom.
  WeightBasis conv1 = build_basis(gw.first_conv(), BasisVariant::kEquivariant, {0, 1});
  CHECK(conv1.rank() == 98);
  // conv2: (4*5*25) entries falling in free orbits of size 4.
  WeightBasis conv2 = build_basis(gw.second_conv(), BasisVariant::kEquivariant, {0, 1});
  CHECK(conv2.rank() == 125);
}
