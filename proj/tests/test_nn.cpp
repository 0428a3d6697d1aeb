#include "equistruct/nn.hpp"

#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "equistruct/rng.hpp"

using namespace equistruct;

namespace {

NetworkConfig config_for(Arch arch, NetVariant variant, std::uint64_t seed = 7) {
  NetworkConfig cfg;
  cfg.arch = arch;
  cfg.variant = variant;
  cfg.seed = seed;
  return cfg;
}

void perturb(PolicyValueNet& net, Rng& rng, double scale = 0.1) {
  for (BasisLayer* layer : net.layers()) {
    Vector c = layer->coefficients();
    for (Index i = 0; i < c.size(); ++i) c(i) += scale * rng.normal();
    layer->set_coefficients(c);
  }
}

}  // namespace

TEST_CASE("parameter counts of the cartpole networks") {
  // Hand counts: equivariant layers hold rank * c_out * c_in coefficients
  // (ranks 5, 3, 3, 2); the plain MLP is 4 -> 64 -> 128 -> (2, 1) with biases.
  PolicyValueNet equi =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kEquivariant));
  CHECK(equi.param_count() == 5 * 64 + 3 * 64 * 64 + 3 * 64 + 2 * 64);  // 12928
  PolicyValueNet plain = build_network(config_for(Arch::kPlainMlp, NetVariant::kPlain));
  CHECK(plain.param_count() == 9027);
  PolicyValueNet nullsp =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kNullspace));
  CHECK(nullsp.param_count() == 5 * 64 + 3 * 64 * 64 + 3 * 64 + 1 * 64);
  PolicyValueNet rand =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kRandom));
  CHECK(rand.param_count() == 10 * 64 + 6 * 64 * 64 + 6 * 64 + 3 * 64);
  // The equivariant count sits between the two reference MLP baselines
  // (9027 and 17539 parameters).
  CHECK(equi.param_count() > plain.param_count());
  CHECK(equi.param_count() < 17539);
}

TEST_CASE("gridworld channel scaling and parameter counts") {
  PolicyValueNet net =
      build_network(config_for(Arch::kCnnGridworld, NetVariant::kEquivariant));
  const auto& trunk = net.trunk();
  REQUIRE(trunk.size() == 3);
  CHECK(trunk[0].channels_out() == 8);    // floor(16 / sqrt(4))
  CHECK(trunk[1].channels_out() == 16);   // floor(32 / sqrt(4))
  CHECK(trunk[2].channels_out() == 256);  // floor(512 / sqrt(4))
  CHECK(trunk[0].rank() == 98);
  CHECK(trunk[1].rank() == 125);
  CHECK(trunk[2].rank() == 5);
  CHECK(net.policy_head().rank() == 7);
  CHECK(net.value_head().rank() == 2);
  CHECK(net.param_count() ==
        98 * 8 + 125 * 16 * 8 + 5 * 256 * 16 + 7 * 256 + 2 * 256);  // 39568

  PolicyValueNet plain = build_network(config_for(Arch::kPlainCnn, NetVariant::kPlain));
  CHECK(plain.param_count() == 33606);
}

TEST_CASE("deeper cartpole variant is constructible and equivariant") {
  NetworkConfig cfg = config_for(Arch::kMlpCartpole, NetVariant::kEquivariant);
  cfg.hidden_layers = 4;
  PolicyValueNet net = build_network(cfg);
  CHECK(net.trunk().size() == 4);
  NetEquivarianceReport report =
      check_network_equivariance(net, cartpole_symmetry(), 100, 3);
  CHECK(report.max_residual() <= 1e-6);
}

TEST_CASE("uniform logits give the uniform policy") {
  PolicyValueNet net =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kEquivariant));
  for (BasisLayer* layer : net.layers())
    layer->set_coefficients(Vector::Zero(layer->coefficient_count()));
  Rng rng(1);
  Tensor obs = cartpole_symmetry().sample_obs(rng, 4);
  PolicyValueNet::Output out = net.forward(obs);
  for (Index b = 0; b < 4; ++b) {
    CHECK(out.probs(b, 0) == doctest::Approx(0.5));
    CHECK(out.probs(b, 1) == doctest::Approx(0.5));
    CHECK(out.value(b) == 0.0);
  }
}

TEST_CASE("policy rows are normalized probability vectors") {
  for (Arch arch : {Arch::kMlpCartpole, Arch::kPlainMlp}) {
    PolicyValueNet net = build_network(config_for(
        arch, arch == Arch::kPlainMlp ? NetVariant::kPlain : NetVariant::kRandom));
    Rng rng(2);
    Tensor obs = cartpole_symmetry().sample_obs(rng, 16);
    PolicyValueNet::Output out = net.forward(obs);
    for (Index b = 0; b < 16; ++b) {
      CHECK(out.probs.row(b).minCoeff() >= 0.0);
      CHECK(out.probs.row(b).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("cartpole policy is reflection-equivariant, value invariant") {
  PolicyValueNet net =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kEquivariant, 21));
  EnvSymmetry sym = cartpole_symmetry();
  Rng rng(3);
  Tensor obs = sym.sample_obs(rng, 50);
  Tensor mirrored = sym.transform_obs(1, obs);
  PolicyValueNet::Output a = net.forward(obs);
  PolicyValueNet::Output b = net.forward(mirrored);
  for (Index i = 0; i < 50; ++i) {
    CHECK(b.probs(i, 0) == doctest::Approx(a.probs(i, 1)).epsilon(1e-8));
    CHECK(b.probs(i, 1) == doctest::Approx(a.probs(i, 0)).epsilon(1e-8));
    CHECK(b.value(i) == doctest::Approx(a.value(i)).epsilon(1e-8));
  }
}

TEST_CASE("gridworld policy rolls with rotations, value invariant") {
  PolicyValueNet net =
      build_network(config_for(Arch::kCnnGridworld, NetVariant::kEquivariant, 22));
  EnvSymmetry sym = gridworld_symmetry();
  NetEquivarianceReport report = check_network_equivariance(net, sym, 50, 4);
  CHECK(report.policy_residual <= 1e-6);
  CHECK(report.value_residual <= 1e-6);
}

TEST_CASE("equivariance survives arbitrary coefficient updates") {
  PolicyValueNet net =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kEquivariant, 5));
  EnvSymmetry sym = cartpole_symmetry();
  Rng rng(6);
  for (int update = 0; update < 100; ++update) perturb(net, rng);
  CHECK(check_network_equivariance(net, sym, 200, 7).max_residual() <= 1e-6);
}

TEST_CASE("random-basis networks are measurably non-equivariant") {
  PolicyValueNet net =
      build_network(config_for(Arch::kMlpCartpole, NetVariant::kRandom, 8));
  NetEquivarianceReport report =
      check_network_equivariance(net, cartpole_symmetry(), 200, 9);
  MESSAGE("random-basis residual: ", report.max_residual());
  CHECK(report.max_residual() > 1e-4);
}

TEST_CASE("softmax commutes with permutations") {
  Rng rng(10);
  GridWorldReps gw = gridworld_representations();
  double residual = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    RowMatrix logits(1, 5);
    for (int j = 0; j < 5; ++j) logits(0, j) = 4.0 * rng.normal();
    RowMatrix probs = softmax_rows(logits);
    for (int g = 0; g < 4; ++g) {
      const auto& perm = gw.policy.perm(g);
      RowMatrix moved(1, 5);
      for (int j = 0; j < 5; ++j) moved(0, perm[j]) = logits(0, j);
      RowMatrix moved_probs = softmax_rows(moved);
      for (int j = 0; j < 5; ++j)
        residual = std::max(residual, std::abs(moved_probs(0, perm[j]) - probs(0, j)));
    }
  }
  CHECK(residual <= 1e-12);
}

TEST_CASE("averaged forward of a plain network is exactly equivariant") {
  PolicyValueNet net = build_network(config_for(Arch::kPlainMlp, NetVariant::kPlain, 11));
  EnvSymmetry sym = cartpole_symmetry();
  Rng rng(12);
  Tensor obs = sym.sample_obs(rng, 64);
  PolicyValueNet::Output base = averaged_forward(net, sym, obs);
  PolicyValueNet::Output moved = averaged_forward(net, sym, sym.transform_obs(1, obs));
  double residual = 0.0;
  for (Index b = 0; b < 64; ++b) {
    residual = std::max(residual, std::abs(moved.probs(b, 0) - base.probs(b, 1)));
    residual = std::max(residual, std::abs(moved.probs(b, 1) - base.probs(b, 0)));
    residual = std::max(residual, std::abs(moved.value(b) - base.value(b)));
  }
  CHECK(residual <= 1e-6);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  NetworkConfig cfg = config_for(Arch::kCnnGridworld, NetVariant::kEquivariant, 13);
  PolicyValueNet net = build_network(cfg);
  Rng rng(14);
  perturb(net, rng);
  const std::string path = "checkpoint_test.txt";
  save_checkpoint(net, path);
  PolicyValueNet loaded = load_checkpoint(path);
  std::remove(path.c_str());
  auto a = net.layers();
  auto b = loaded.layers();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i]->coefficients() - b[i]->coefficients()).cwiseAbs().maxCoeff() == 0.0);
    if (a[i]->bias().size() > 0)
      CHECK((a[i]->bias() - b[i]->bias()).cwiseAbs().maxCoeff() == 0.0);
  }
  Rng obs_rng(15);
  Tensor obs = gridworld_symmetry().sample_obs(obs_rng, 3);
  CHECK((net.forward(obs).logits - loaded.forward(obs).logits).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("invalid configurations are rejected") {
  NetworkConfig cfg = config_for(Arch::kMlpCartpole, NetVariant::kPlain);
  CHECK_THROWS_AS(build_network(cfg), std::invalid_argument);
  CHECK_THROWS_AS(arch_from_string("resnet"), std::invalid_argument);
}
