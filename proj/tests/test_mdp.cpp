#include "equistruct/mdp.hpp"

#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "equistruct/rng.hpp"

using namespace equistruct;

namespace {

std::string fixture(const std::string& name) {
  return std::string(EQUISTRUCT_FIXTURE_DIR) + "/" + name;
}

NamedMDP builtin(const std::string& name) {
  for (NamedMDP& f : builtin_symmetric_mdps())
    if (f.name == name) return f;
  throw std::runtime_error("unknown fixture " + name);
}

MDPGroupAction trivial_action(int n_states, int n_actions) {
  MDPGroupAction action;
  action.group = make_cyclic_group(1);
  action.state_map.resize(1);
  action.state_map[0].resize(n_states);
  for (int s = 0; s < n_states; ++s) action.state_map[0][s] = s;
  action.action_map.resize(1);
  action.action_map[0].assign(n_states, std::vector<int>(n_actions));
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) action.action_map[0][s][a] = a;
  return action;
}

}  // namespace

TEST_CASE("orbits partition the state space") {
  for (const NamedMDP& f : builtin_symmetric_mdps()) {
    auto orbits = state_orbits(f.action);
    std::vector<int> seen(f.mdp.n_states, 0);
    for (const auto& orbit : orbits)
      for (int s : orbit) ++seen[s];
    for (int s = 0; s < f.mdp.n_states; ++s) CHECK(seen[s] == 1);
  }
}

TEST_CASE("orbit shapes on the shipped fixtures") {
  NamedMDP mirror = builtin("mirror2");
  CHECK(compute_orbit(0, mirror.action) == std::vector<int>{0, 1});
  CHECK(compute_orbit(0, 1, mirror.action).size() == 2);

  NamedMDP ring = builtin("ring4");
  CHECK(compute_orbit(2, ring.action) == std::vector<int>{0, 1, 2, 3});

  MDPGroupAction trivial = trivial_action(3, 2);
  CHECK(compute_orbit(1, trivial) == std::vector<int>{1});
}

TEST_CASE("symmetry residuals are zero on fixtures and detect perturbations") {
  for (const NamedMDP& f : builtin_symmetric_mdps()) {
    MDPSymmetryReport report = check_mdp_symmetry(f.mdp, f.action);
    CHECK(report.reward_residual == 0.0);
    CHECK(report.transition_residual == 0.0);
  }
  NamedMDP mirror = builtin("mirror2");
  mirror.mdp.reward(0, 0) += 0.1;
  MDPSymmetryReport report = check_mdp_symmetry(mirror.mdp, mirror.action);
  CHECK(report.reward_residual == doctest::Approx(0.1));
}

TEST_CASE("homomorphism construction on the fixtures") {
  NamedMDP mirror = builtin("mirror2");
  MDPHomomorphism hom = build_homomorphism(mirror.mdp, mirror.action);
  CHECK(hom.n_abstract_states == 1);
  CHECK(hom.n_abstract_actions == 2);
  CHECK(hom.sigma(0) == hom.sigma(1));
  // s1's transporter is the swap, so its actions cross over.
  CHECK(hom.alpha(0, 0) == 0);
  CHECK(hom.alpha(1, 0) == 1);

  NamedMDP ring = builtin("ring4");
  CHECK(build_homomorphism(ring.mdp, ring.action).n_abstract_states == 1);

  NamedMDP corridor = builtin("corridor4");
  MDPHomomorphism corridor_hom = build_homomorphism(corridor.mdp, corridor.action);
  CHECK(corridor_hom.n_abstract_states == 2);
  CHECK(corridor_hom.sigma(0) == corridor_hom.sigma(3));
  CHECK(corridor_hom.sigma(1) == corridor_hom.sigma(2));
}

TEST_CASE("asymmetric MDPs are refused with a residual report") {
  NamedMDP mirror = builtin("mirror2");
  mirror.mdp.reward(1, 1) = 5.0;
  CHECK_THROWS_AS(build_homomorphism(mirror.mdp, mirror.action),
                  std::invalid_argument);
}

TEST_CASE("a stabilizer that permutes actions is rejected as ill-defined") {
  // One state fixed by the flip, but the flip swaps its two (equal-reward)
  // actions: the minimum-transporter map cannot represent this reduction.
  TabularMDP mdp;
  mdp.n_states = 1;
  mdp.n_actions = 2;
  mdp.gamma = 0.5;
  mdp.reward = Matrix{{1.0, 1.0}};
  mdp.transition = {Matrix{{1.0}}, Matrix{{1.0}}};
  MDPGroupAction action;
  action.group = make_cyclic_group(2);
  action.state_map = {{0}, {0}};
  action.action_map = {{{0, 1}}, {{1, 0}}};
  CHECK_THROWS_WITH_AS(build_homomorphism(mdp, action),
                       doctest::Contains("ill-defined"), std::invalid_argument);
}

TEST_CASE("reduction on the identity homomorphism reproduces the MDP") {
  NamedMDP mirror = builtin("mirror2");
  MDPHomomorphism identity;
  identity.sigma = IntVector::LinSpaced(2, 0, 1);
  identity.alpha = IntMatrix(2, 2);
  identity.alpha << 0, 1, 0, 1;
  identity.n_abstract_states = 2;
  identity.n_abstract_actions = 2;
  TabularMDP reduced = reduce_mdp(mirror.mdp, identity);
  CHECK((reduced.reward - mirror.mdp.reward).cwiseAbs().maxCoeff() == 0.0);
  for (int a = 0; a < 2; ++a)
    CHECK((reduced.transition[a] - mirror.mdp.transition[a]).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("reduced transition rows stay stochastic") {
  for (const NamedMDP& f : builtin_symmetric_mdps()) {
    MDPHomomorphism hom = build_homomorphism(f.mdp, f.action);
    TabularMDP reduced = reduce_mdp(f.mdp, hom);
    for (const Matrix& t : reduced.transition)
      for (int s = 0; s < reduced.n_states; ++s)
        CHECK(t.row(s).sum() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("mirror MDP with unit rewards reduces to the geometric series value") {
  NamedMDP mirror = builtin("mirror2");
  mirror.mdp.reward.setOnes();
  mirror.mdp.gamma = 0.5;
  MDPHomomorphism hom = build_homomorphism(mirror.mdp, mirror.action);
  TabularMDP reduced = reduce_mdp(mirror.mdp, hom);
  CHECK(reduced.n_states == 1);
  ValueSolution sol = value_iteration(reduced, 1e-12);
  CHECK(sol.v(0) == doctest::Approx(2.0).epsilon(1e-9));  // 1 / (1 - 0.5)
}

TEST_CASE("ill-defined reductions carry a witness") {
  // Merge the two states of a chain whose rewards differ.
  TabularMDP mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.gamma = 0.5;
  mdp.reward = Matrix{{1.0}, {0.0}};
  mdp.transition = {Matrix{{0.5, 0.5}, {0.5, 0.5}}};
  MDPHomomorphism hom;
  hom.sigma = IntVector::Zero(2);
  hom.alpha = IntMatrix::Zero(2, 1);
  hom.n_abstract_states = 1;
  hom.n_abstract_actions = 1;
  CHECK_THROWS_WITH_AS(reduce_mdp(mdp, hom), doctest::Contains("(1, 0)"),
                       std::invalid_argument);
  double disagreement = 0.0;
  reduce_mdp(mdp, hom, /*strict=*/false, 0.0, &disagreement);
  CHECK(disagreement == doctest::Approx(1.0));
}

TEST_CASE("value iteration on closed-form cases") {
  // Absorbing state, reward 1, gamma 0.5: V = 2.
  TabularMDP absorbing;
  absorbing.n_states = 1;
  absorbing.n_actions = 1;
  absorbing.gamma = 0.5;
  absorbing.reward = Matrix{{1.0}};
  absorbing.transition = {Matrix{{1.0}}};
  ValueSolution sol = value_iteration(absorbing, 1e-10);
  CHECK(sol.v(0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(sol.residual <= 1e-10);

  // Deterministic chain s0 -> s1 -> absorbing s2; rewards 0, 1, 0.
  TabularMDP chain;
  chain.n_states = 3;
  chain.n_actions = 1;
  chain.gamma = 0.9;
  chain.reward = Matrix{{0.0}, {1.0}, {0.0}};
  chain.transition = {Matrix{{0, 1, 0}, {0, 0, 1}, {0, 0, 1}}};
  ValueSolution chain_sol = value_iteration(chain, 1e-12);
  CHECK(chain_sol.v(2) == doctest::Approx(0.0));
  CHECK(chain_sol.v(1) == doctest::Approx(1.0));
  CHECK(chain_sol.v(0) == doctest::Approx(0.9 * chain_sol.v(1)).epsilon(1e-10));
  CHECK(chain_sol.q(0, 0) == doctest::Approx(0.9).epsilon(1e-10));
}

TEST_CASE("value iteration reports non-convergence") {
  NamedMDP ring = builtin("ring4");
  CHECK_THROWS_AS(value_iteration(ring.mdp, 1e-12, 3), std::runtime_error);
}

TEST_CASE("lifting splits probability uniformly over preimages") {
  // Hand-built homomorphism merging both actions of a single state.
  MDPHomomorphism hom;
  hom.sigma = IntVector::Zero(1);
  hom.alpha = IntMatrix::Zero(1, 2);
  hom.n_abstract_states = 1;
  hom.n_abstract_actions = 1;
  TabularPolicy abstract;
  abstract.probs = Matrix{{1.0}};
  TabularPolicy lifted = lift_policy(abstract, hom);
  CHECK(lifted.probs(0, 0) == doctest::Approx(0.5));
  CHECK(lifted.probs(0, 1) == doctest::Approx(0.5));

  // Identity homomorphism lifts to the same policy.
  MDPHomomorphism identity;
  identity.sigma = IntVector::LinSpaced(2, 0, 1);
  identity.alpha = IntMatrix(2, 2);
  identity.alpha << 0, 1, 0, 1;
  identity.n_abstract_states = 2;
  identity.n_abstract_actions = 2;
  TabularPolicy pi;
  pi.probs = Matrix{{0.3, 0.7}, {0.9, 0.1}};
  TabularPolicy same = lift_policy(pi, identity);
  CHECK((same.probs - pi.probs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lifted policies are invariant under the group action") {
  Rng rng(31);
  for (const NamedMDP& f : builtin_symmetric_mdps()) {
    MDPHomomorphism hom = build_homomorphism(f.mdp, f.action);
    TabularPolicy abstract;
    abstract.probs = Matrix::Zero(hom.n_abstract_states, hom.n_abstract_actions);
    for (int s = 0; s < hom.n_abstract_states; ++s) {
      for (int a = 0; a < hom.n_abstract_actions; ++a)
        abstract.probs(s, a) = 0.05 + rng.uniform();
      abstract.probs.row(s) /= abstract.probs.row(s).sum();
    }
    TabularPolicy lifted = lift_policy(abstract, hom);
    for (int g = 0; g < f.action.group.order; ++g)
      for (int s = 0; s < f.mdp.n_states; ++s) {
        CHECK(lifted.probs.row(s).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int a = 0; a < f.mdp.n_actions; ++a)
          CHECK(std::abs(lifted.probs(s, a) -
                         lifted.probs(f.action.state(g, s),
                                      f.action.action(g, s, a))) <= 1e-12);
      }
  }
}

TEST_CASE("optimal value equivalence holds on every shipped fixture") {
  for (const NamedMDP& f : builtin_symmetric_mdps()) {
    MDPHomomorphism hom = build_homomorphism(f.mdp, f.action);
    ValueEquivalenceReport report = check_optimal_value_equivalence(f.mdp, hom);
    CAPTURE(f.name);
    CHECK(report.value_gap <= 1e-8);
    CHECK(report.q_gap <= 1e-8);
    CHECK(report.lifted_policy_gap <= 1e-8);
    CHECK(report.reduction_disagreement <= 1e-10);
  }
}

TEST_CASE("a broken homomorphism shows a measurable equivalence gap") {
  // Merging the non-equivalent states of an asymmetric chain.
  TabularMDP mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.gamma = 0.5;
  mdp.reward = Matrix{{1.0}, {0.0}};
  mdp.transition = {Matrix{{1.0, 0.0}, {0.0, 1.0}}};
  MDPHomomorphism hom;
  hom.sigma = IntVector::Zero(2);
  hom.alpha = IntMatrix::Zero(2, 1);
  hom.n_abstract_states = 1;
  hom.n_abstract_actions = 1;
  ValueEquivalenceReport report = check_optimal_value_equivalence(mdp, hom);
  CHECK(report.reduction_disagreement == doctest::Approx(1.0));
  CHECK(report.value_gap > 0.5);
}

TEST_CASE("MDP files round-trip, including the group section") {
  MDPFile loaded = load_mdp(fixture("mirror2.mdp"));
  NamedMDP mirror = builtin("mirror2");
  CHECK(loaded.mdp.n_states == 2);
  CHECK((loaded.mdp.reward - mirror.mdp.reward).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(loaded.group_action.has_value());
  CHECK(loaded.group_action->state_map[1] == std::vector<int>{1, 0});

  const std::string tmp = "mdp_roundtrip.mdp";
  save_mdp(tmp, loaded.mdp, &*loaded.group_action);
  MDPFile again = load_mdp(tmp);
  std::remove(tmp.c_str());
  CHECK((again.mdp.reward - loaded.mdp.reward).cwiseAbs().maxCoeff() == 0.0);
  for (int a = 0; a < 2; ++a)
    CHECK((again.mdp.transition[a] - loaded.mdp.transition[a]).cwiseAbs().maxCoeff() ==
          0.0);
  REQUIRE(again.group_action.has_value());
  CHECK(again.group_action->action_map[1][0] == std::vector<int>{1, 0});
}

TEST_CASE("the broken fixture fails symmetry, the malformed one fails parsing") {
  MDPFile broken = load_mdp(fixture("broken.mdp"));
  REQUIRE(broken.group_action.has_value());
  CHECK_THROWS_AS(build_homomorphism(broken.mdp, *broken.group_action),
                  std::invalid_argument);
  CHECK_THROWS_AS(load_mdp(fixture("malformed.mdp")), std::runtime_error);
  CHECK_THROWS_AS(load_mdp(fixture("missing.mdp")), std::runtime_error);
}

TEST_CASE("trivial fixture reduces to itself") {
  MDPFile trivial = load_mdp(fixture("trivial.mdp"));
  REQUIRE(trivial.group_action.has_value());
  MDPHomomorphism hom = build_homomorphism(trivial.mdp, *trivial.group_action);
  CHECK(hom.n_abstract_states == trivial.mdp.n_states);
  TabularMDP reduced = reduce_mdp(trivial.mdp, hom);
  CHECK((reduced.reward - trivial.mdp.reward).cwiseAbs().maxCoeff() == 0.0);
}
