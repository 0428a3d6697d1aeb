#include "equistruct/verify.hpp"

#include <cmath>
#include <stdexcept>

#include "equistruct/envs.hpp"
#include "equistruct/mdp.hpp"
#include "equistruct/nn.hpp"
#include "equistruct/rl.hpp"
#include "equistruct/symmetrizer.hpp"

namespace equistruct {

Check make_check(const std::string& name, double value, double threshold) {
  return {name, value, threshold, value <= threshold};
}

namespace {

struct NamedPair {
  std::string name;
  RepresentationPair pair;
};

std::vector<NamedPair> shipped_pairs() {
  CartPoleReps cp = cartpole_representations();
  GridWorldReps gw = gridworld_representations();
  return {{"cartpole/first", cp.first_layer()},
          {"cartpole/hidden", cp.hidden_layer()},
          {"cartpole/policy", cp.policy_head()},
          {"cartpole/value", cp.value_head()},
          {"gridworld/conv1", gw.first_conv()},
          {"gridworld/conv2", gw.second_conv()},
          {"gridworld/dense", gw.dense_layer()},
          {"gridworld/policy", gw.policy_head()},
          {"gridworld/value", gw.value_head()}};
}

Matrix random_weight(const WeightShape& shape, Rng& rng) {
  Matrix w(shape.d_out, shape.cols());
  for (Index c = 0; c < w.cols(); ++c)
    for (Index r = 0; r < w.rows(); ++r) w(r, c) = rng.normal();
  return w;
}

}  // namespace

std::vector<Check> verify_symmetrizer() {
  std::vector<Check> checks;
  Rng rng(20240416);
  for (const auto& [name, pair] : shipped_pairs()) {
    double symmetric = 0.0, idempotence = 0.0;
    for (int i = 0; i < 100; ++i) {
      Matrix w = random_weight(pair.shape(), rng);
      Matrix s = symmetrize(w, pair);
      symmetric = std::max(symmetric, equivariance_residual(s, pair));
      idempotence =
          std::max(idempotence, (symmetrize(s, pair) - s).cwiseAbs().maxCoeff());
    }
    checks.push_back(make_check(name + " symmetric property", symmetric, 1e-10));
    checks.push_back(make_check(name + " idempotence", idempotence, 1e-12));

    WeightBasis equi = build_basis(pair, BasisVariant::kEquivariant, {0, 7});
    WeightBasis null = build_basis(pair, BasisVariant::kNullspace, {0, 7});
    double fixing = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Matrix combo = Matrix::Zero(pair.shape().d_out, pair.shape().cols());
      for (const Matrix& v : equi.vectors) combo += rng.normal() * v;
      fixing = std::max(fixing, (symmetrize(combo, pair) - combo).cwiseAbs().maxCoeff());
    }
    checks.push_back(make_check(name + " fixing property", fixing, 1e-10));

    double ortho = 0.0;
    const int dim = pair.shape().dim();
    for (int i = 0; i < equi.rank(); ++i)
      for (int j = 0; j < equi.rank(); ++j) {
        double dot = Eigen::Map<const Vector>(equi.vectors[i].data(), dim)
                         .dot(Eigen::Map<const Vector>(equi.vectors[j].data(), dim));
        ortho = std::max(ortho, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    checks.push_back(make_check(name + " basis orthonormality", ortho, 1e-8));

    double cross = 0.0;
    for (const Matrix& ve : equi.vectors)
      for (const Matrix& vn : null.vectors)
        cross = std::max(cross, std::abs(Eigen::Map<const Vector>(ve.data(), dim)
                                             .dot(Eigen::Map<const Vector>(vn.data(), dim))));
    checks.push_back(make_check(name + " equivariant/nullspace orthogonality", cross, 1e-8));
    checks.push_back(make_check(name + " rank split covers the space",
                                std::abs(equi.rank() + null.rank() - dim), 0.0));
  }
  return checks;
}

std::vector<Check> verify_layers() {
  std::vector<Check> checks;
  Rng rng(20240417);
  CartPoleReps cp = cartpole_representations();
  GridWorldReps gw = gridworld_representations();

  // Layer equivariance over random coefficients and inputs, dense layers.
  struct DenseCase {
    std::string name;
    RepresentationPair pair;
    const Representation* in_rep;  // transformation of the input activations
    const Representation* out_rep;
  };
  std::vector<DenseCase> dense_cases = {
      {"cartpole/first", cp.first_layer(), &cp.state, &cp.intermediate},
      {"cartpole/hidden", cp.hidden_layer(), &cp.intermediate, &cp.intermediate},
      {"cartpole/policy", cp.policy_head(), &cp.intermediate, &cp.policy},
      {"gridworld/dense", gw.dense_layer(), &gw.intermediate, &gw.intermediate},
      {"gridworld/policy", gw.policy_head(), &gw.intermediate, &gw.policy},
  };
  for (const auto& c : dense_cases) {
    WeightBasis basis = build_basis(c.pair, BasisVariant::kEquivariant, {0, 11});
    BasisLayer layer(basis, 3, 2);
    double residual = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      layer.init(InitScheme::kXavier, rng);
      Tensor z(2, 3, c.in_rep->dim());
      for (Index i = 0; i < z.data.size(); ++i)
        z.data(i / z.data.cols(), i % z.data.cols()) = rng.normal();
      Tensor base = layer.forward(z);
      for (int g = 1; g < c.pair.order(); ++g) {
        Tensor moved = layer.forward([&] {
          if (c.in_rep->is_permutation()) return transform_activation(g, z, *c.in_rep, false);
          // CartPole state transformation: plain sign flip.
          Tensor t = z;
          if (g == 1) t.data = -t.data;
          return t;
        }());
        Tensor expected = transform_activation(g, base, *c.out_rep, false);
        residual =
            std::max(residual, (moved.data - expected.data).cwiseAbs().maxCoeff());
      }
    }
    checks.push_back(make_check("layer equivariance " + c.name, residual, 1e-6));
  }

  // Conv layers: rotation + roll of the input matches roll + rotation of the output.
  struct ConvCase {
    std::string name;
    RepresentationPair pair;
    const Representation* in_rep;
    int in_size;
    int stride;
  };
  std::vector<ConvCase> conv_cases = {
      {"gridworld/conv1", gw.first_conv(), &gw.input, 11, 2},
      {"gridworld/conv2", gw.second_conv(), &gw.intermediate, 9, 1},
  };
  for (const auto& c : conv_cases) {
    WeightBasis basis = build_basis(c.pair, BasisVariant::kEquivariant, {0, 3});
    BasisLayer layer(basis, 2, 2, LayerKind::kConv, {c.stride, 0});
    double residual = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      layer.init(InitScheme::kHe, rng);
      Tensor z(1, 2, c.in_rep->dim(), c.in_size, c.in_size);
      for (Index i = 0; i < z.data.cols(); ++i) z.data(0, i) = rng.normal();
      Tensor base = layer.forward(z);
      for (int g = 1; g < 4; ++g) {
        Tensor moved = layer.forward(transform_activation(g, z, *c.in_rep, true));
        Tensor expected = transform_activation(g, base, gw.intermediate, true);
        residual =
            std::max(residual, (moved.data - expected.data).cwiseAbs().maxCoeff());
      }
    }
    checks.push_back(make_check("layer equivariance " + c.name, residual, 1e-6));
  }

  // Affine linearity: f(a z1 + b z2) = a f(z1) + b f(z2) + (1-a-b) f(0).
  {
    WeightBasis basis = build_basis(cp.hidden_layer(), BasisVariant::kEquivariant, {0, 5});
    BasisLayer layer(basis, 4, 3);
    layer.init(InitScheme::kXavier, rng);
    double residual = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Tensor z1(3, 4, 2), z2(3, 4, 2), zero(3, 4, 2);
      for (Index i = 0; i < z1.data.cols(); ++i)
        for (Index b = 0; b < 3; ++b) {
          z1.data(b, i) = rng.normal();
          z2.data(b, i) = rng.normal();
        }
      const double a = rng.normal(), b = rng.normal();
      Tensor mix(3, 4, 2);
      mix.data = a * z1.data + b * z2.data;
      RowMatrix expected = a * layer.forward(z1).data + b * layer.forward(z2).data +
                           (1.0 - a - b) * layer.forward(zero).data;
      residual = std::max(residual,
                          (layer.forward(mix).data - expected).cwiseAbs().maxCoeff());
    }
    checks.push_back(make_check("linear layer affinity", residual, 1e-10));
  }

  // ReLU commutes with repr permutations.
  {
    double residual = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      Tensor z(4, 2, 4);
      for (Index i = 0; i < z.data.size(); ++i)
        z.data(i / z.data.cols(), i % z.data.cols()) = rng.normal();
      for (int g = 0; g < 4; ++g) {
        Tensor lhs = relu(transform_activation(g, z, gw.intermediate, false));
        Tensor rhs = transform_activation(g, relu(z), gw.intermediate, false);
        residual = std::max(residual, (lhs.data - rhs.data).cwiseAbs().maxCoeff());
      }
    }
    checks.push_back(make_check("relu permutation equivariance", residual, 0.0));
  }
  return checks;
}

std::vector<Check> verify_network() {
  std::vector<Check> checks;
  for (const std::string env : {"cartpole", "gridworld"}) {
    NetworkConfig cfg;
    cfg.arch = env == "cartpole" ? Arch::kMlpCartpole : Arch::kCnnGridworld;
    cfg.variant = NetVariant::kEquivariant;
    cfg.seed = 11;
    PolicyValueNet net = build_network(cfg);
    EnvSymmetry symmetry = symmetry_for(env);
    NetEquivarianceReport at_init = check_network_equivariance(net, symmetry, 200, 31);
    checks.push_back(
        make_check(env + " equivariance at init", at_init.max_residual(), 1e-6));

    // Arbitrary coefficient updates must not leave the subspace.
    Rng rng(77);
    for (BasisLayer* layer : net.layers()) {
      Vector c = layer->coefficients();
      for (Index i = 0; i < c.size(); ++i) c(i) += 0.3 * rng.normal();
      layer->set_coefficients(c);
    }
    NetEquivarianceReport perturbed = check_network_equivariance(net, symmetry, 200, 32);
    checks.push_back(make_check(env + " equivariance after coefficient updates",
                                perturbed.max_residual(), 1e-6));
  }

  // Softmax permutation equivariance.
  {
    Rng rng(5);
    double residual = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      RowMatrix logits(1, 5);
      for (int j = 0; j < 5; ++j) logits(0, j) = 3.0 * rng.normal();
      RowMatrix probs = softmax_rows(logits);
      GridWorldReps gw = gridworld_representations();
      for (int g = 0; g < 4; ++g) {
        const auto& perm = gw.policy.perm(g);
        RowMatrix permuted(1, 5);
        for (int j = 0; j < 5; ++j) permuted(0, perm[j]) = logits(0, j);
        RowMatrix probs_perm = softmax_rows(permuted);
        for (int j = 0; j < 5; ++j)
          residual = std::max(residual, std::abs(probs_perm(0, perm[j]) - probs(0, j)));
      }
    }
    checks.push_back(make_check("softmax permutation equivariance", residual, 1e-12));
  }

  // Group-averaged outputs of a plain network are exactly equivariant.
  {
    NetworkConfig cfg;
    cfg.arch = Arch::kPlainMlp;
    cfg.variant = NetVariant::kPlain;
    cfg.seed = 3;
    PolicyValueNet net = build_network(cfg);
    EnvSymmetry symmetry = cartpole_symmetry();
    Rng rng(9);
    double residual = 0.0;
    Tensor obs = symmetry.sample_obs(rng, 100);
    PolicyValueNet::Output base = averaged_forward(net, symmetry, obs);
    for (int g = 1; g < 2; ++g) {
      PolicyValueNet::Output moved =
          averaged_forward(net, symmetry, symmetry.transform_obs(g, obs));
      const auto& perm = symmetry.policy_rep.perm(g);
      for (Index b = 0; b < obs.batch(); ++b) {
        for (int a = 0; a < 2; ++a)
          residual =
              std::max(residual, std::abs(base.probs(b, a) - moved.probs(b, perm[a])));
        residual = std::max(residual, std::abs(base.value(b) - moved.value(b)));
      }
    }
    checks.push_back(make_check("averaged plain policy equivariance", residual, 1e-6));
  }
  return checks;
}

std::vector<Check> verify_mdp() {
  std::vector<Check> checks;
  Rng rng(20240418);
  for (const NamedMDP& fixture : builtin_symmetric_mdps()) {
    MDPSymmetryReport sym = check_mdp_symmetry(fixture.mdp, fixture.action);
    checks.push_back(
        make_check(fixture.name + " symmetry residual", sym.max_residual(), 1e-12));

    auto orbits = state_orbits(fixture.action);
    int covered = 0;
    for (const auto& orbit : orbits) covered += static_cast<int>(orbit.size());
    checks.push_back(make_check(fixture.name + " orbits partition the states",
                                std::abs(covered - fixture.mdp.n_states), 0.0));

    MDPHomomorphism hom = build_homomorphism(fixture.mdp, fixture.action);
    double disagreement = 0.0;
    TabularMDP reduced =
        reduce_mdp(fixture.mdp, hom, /*strict=*/true, 1e-10, &disagreement);
    checks.push_back(
        make_check(fixture.name + " reduction well-defined", disagreement, 1e-10));
    double row_residual = 0.0;
    for (const Matrix& t : reduced.transition)
      for (int s = 0; s < reduced.n_states; ++s)
        row_residual = std::max(row_residual, std::abs(t.row(s).sum() - 1.0));
    checks.push_back(make_check(fixture.name + " reduced rows are stochastic",
                                row_residual, 1e-10));

    TabularPolicy abstract;
    abstract.probs = Matrix::Zero(hom.n_abstract_states, hom.n_abstract_actions);
    for (int s = 0; s < hom.n_abstract_states; ++s) {
      for (int a = 0; a < hom.n_abstract_actions; ++a)
        abstract.probs(s, a) = 0.1 + rng.uniform();
      abstract.probs.row(s) /= abstract.probs.row(s).sum();
    }
    TabularPolicy lifted = lift_policy(abstract, hom);
    double invariance = 0.0;
    for (int g = 0; g < fixture.action.group.order; ++g)
      for (int s = 0; s < fixture.mdp.n_states; ++s)
        for (int a = 0; a < fixture.mdp.n_actions; ++a)
          invariance = std::max(
              invariance,
              std::abs(lifted.probs(s, a) -
                       lifted.probs(fixture.action.state(g, s),
                                    fixture.action.action(g, s, a))));
    checks.push_back(
        make_check(fixture.name + " lifted policy invariance", invariance, 1e-12));

    ValueEquivalenceReport eq = check_optimal_value_equivalence(fixture.mdp, hom);
    checks.push_back(
        make_check(fixture.name + " optimal value equivalence", eq.max_gap(), 1e-8));
  }
  return checks;
}

std::vector<Check> verify_envs() {
  std::vector<Check> checks;

  // CartPole: mirrored trajectories are exact mirrors.
  {
    Rng rng(101);
    CartPoleState s{0.01, -0.02, 0.03, 0.04, 0};
    CartPoleState m{-0.01, 0.02, -0.03, -0.04, 0};
    double residual = 0.0, reward_diff = 0.0;
    for (int t = 0; t < 1000; ++t) {
      int a = rng.below(2);
      s = cartpole_dynamics(s, a);
      m = cartpole_dynamics(m, 1 - a);
      residual = std::max({residual, std::abs(s.x + m.x), std::abs(s.x_dot + m.x_dot),
                           std::abs(s.theta + m.theta),
                           std::abs(s.theta_dot + m.theta_dot)});
      if (cartpole_failed(s) != cartpole_failed(m)) reward_diff = 1.0;
      if (cartpole_failed(s)) {
        s = CartPoleState{0.01, -0.02, 0.03, 0.04, 0};
        m = CartPoleState{-0.01, 0.02, -0.03, -0.04, 0};
      }
    }
    checks.push_back(make_check("cartpole trajectory mirror symmetry", residual, 0.0));
    checks.push_back(make_check("cartpole mirrored termination", reward_diff, 0.0));
  }

  // GridWorld: rotated trajectories with coupled prey draws are exact
  // rotations, with equal rewards.
  for (int g = 1; g < 4; ++g) {
    Rng rng(200 + g);
    GridWorldEnv env(7), rotated(7);
    env.reset();
    rotated.set_state(gridworld_transform_state(g, env.state()));
    double state_diff = 0.0, reward_diff = 0.0;
    for (int t = 0; t < 1000; ++t) {
      int a = rng.below(GridWorldEnv::kActions);
      GridWorldEnv::PreyDraw draw{rng.uniform() < GridWorldEnv::kPreyMoveProb,
                                  1 + rng.below(4)};
      GridWorldEnv::PreyDraw rotated_draw{draw.move,
                                          gridworld_transform_compass(g, draw.dir)};
      StepResult r1 = env.step_with_draw(a, draw);
      StepResult r2 =
          rotated.step_with_draw(gridworld_transform_action(g, a), rotated_draw);
      reward_diff = std::max(reward_diff, std::abs(r1.reward - r2.reward));
      GridWorldState expect = gridworld_transform_state(g, env.state());
      const GridWorldState& got = rotated.state();
      state_diff = std::max(
          state_diff, double(std::abs(expect.agent_r - got.agent_r) +
                             std::abs(expect.agent_c - got.agent_c) +
                             std::abs(expect.prey_r - got.prey_r) +
                             std::abs(expect.prey_c - got.prey_c)));
      if (r1.done != r2.done) reward_diff = 1.0;
      if (r1.done) {
        env.reset();
        rotated.set_state(gridworld_transform_state(g, env.state()));
      }
    }
    checks.push_back(make_check("gridworld rotated rewards (g=" + std::to_string(g) + ")",
                                reward_diff, 0.0));
    checks.push_back(make_check("gridworld rotated states (g=" + std::to_string(g) + ")",
                                state_diff, 0.0));
  }

  // Episode caps.
  {
    CartPoleEnv env(5);
    int longest = 0;
    Rng rng(55);
    for (int episode = 0; episode < 5; ++episode) {
      env.reset();
      int len = 0;
      while (true) {
        StepResult r = env.step(rng.below(2));
        ++len;
        if (r.done) break;
      }
      longest = std::max(longest, len);
    }
    checks.push_back(make_check("cartpole episode cap", longest <= 500 ? 0.0 : 1.0, 0.0));
  }
  {
    GridWorldEnv env(6);
    Rng rng(56);
    int longest = 0;
    for (int episode = 0; episode < 20; ++episode) {
      env.reset();
      int len = 0;
      while (true) {
        StepResult r = env.step(rng.below(GridWorldEnv::kActions));
        ++len;
        if (r.done) break;
      }
      longest = std::max(longest, len);
    }
    checks.push_back(
        make_check("gridworld episode cap", longest <= 100 ? 0.0 : 1.0, 0.0));
  }

  // Observation is a pure function of state.
  {
    GridWorldEnv env(8);
    double diff = (GridWorldEnv::observe(env.state()) - GridWorldEnv::observe(env.state()))
                      .cwiseAbs()
                      .maxCoeff();
    checks.push_back(make_check("gridworld observation determinism", diff, 0.0));
  }
  return checks;
}

std::vector<Check> verify_suite(const std::string& name) {
  if (name == "symmetrizer") return verify_symmetrizer();
  if (name == "layers") return verify_layers();
  if (name == "network") return verify_network();
  if (name == "mdp") return verify_mdp();
  if (name == "envs") return verify_envs();
  if (name == "all") {
    std::vector<Check> all;
    for (const std::string suite : {"symmetrizer", "layers", "network", "mdp", "envs"}) {
      auto checks = verify_suite(suite);
      all.insert(all.end(), checks.begin(), checks.end());
    }
    return all;
  }
  throw std::invalid_argument("unknown verify suite: " + name);
}

bool all_pass(const std::vector<Check>& checks) {
  for (const Check& c : checks)
    if (!c.pass) return false;
  return true;
}

}  // namespace equistruct
