#include "equistruct/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace equistruct {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kMlpCartpole: return "mlp_cartpole";
    case Arch::kCnnGridworld: return "cnn_gridworld";
    case Arch::kPlainMlp: return "plain_mlp";
    case Arch::kPlainCnn: return "plain_cnn";
  }
  return "?";
}

std::string to_string(NetVariant variant) {
  switch (variant) {
    case NetVariant::kEquivariant: return "equivariant";
    case NetVariant::kNullspace: return "nullspace";
    case NetVariant::kRandom: return "random";
    case NetVariant::kPlain: return "plain";
  }
  return "?";
}

Arch arch_from_string(const std::string& s) {
  if (s == "mlp_cartpole") return Arch::kMlpCartpole;
  if (s == "cnn_gridworld") return Arch::kCnnGridworld;
  if (s == "plain_mlp") return Arch::kPlainMlp;
  if (s == "plain_cnn") return Arch::kPlainCnn;
  throw std::invalid_argument("unknown architecture: " + s);
}

NetVariant variant_from_string(const std::string& s) {
  if (s == "equivariant") return NetVariant::kEquivariant;
  if (s == "nullspace") return NetVariant::kNullspace;
  if (s == "random") return NetVariant::kRandom;
  if (s == "plain") return NetVariant::kPlain;
  throw std::invalid_argument("unknown variant: " + s);
}

PolicyValueNet::PolicyValueNet(NetworkConfig config, std::vector<BasisLayer> trunk,
                               BasisLayer policy_head, BasisLayer value_head)
    : config_(config),
      trunk_(std::move(trunk)),
      policy_head_(std::move(policy_head)),
      value_head_(std::move(value_head)) {}

RowMatrix softmax_rows(const RowMatrix& logits) {
  RowMatrix probs(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    double m = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - m).exp();
    probs.row(r) /= probs.row(r).sum();
  }
  return probs;
}

PolicyValueNet::Output PolicyValueNet::forward(const Tensor& obs, Cache* cache) const {
  const bool conv = convolutional();
  Tensor z = obs;
  if (cache) {
    cache->inputs.clear();
    cache->layer_ctx.assign(trunk_.size(), {});
    cache->relu_ctx.assign(trunk_.size(), {});
  }
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    BasisLayer::Ctx* ctx = cache ? &cache->layer_ctx[i] : nullptr;
    if (cache) cache->inputs.push_back(z);
    Tensor y = trunk_[i].forward(z, ctx);
    z = relu(y, cache ? &cache->relu_ctx[i] : nullptr);
    // The grid-world trunk pools over space after the last conv layer so the
    // dense layers see [batch, channels, repr].
    if (conv && i == trunk_.size() - 2) {
      if (cache) {
        cache->pool_in = z;
        z = global_max_pool(z, &cache->pool_ctx);
      } else {
        z = global_max_pool(z);
      }
    }
  }
  if (cache) cache->trunk_out = z;

  Tensor p = policy_head_.forward(z, cache ? &cache->policy_ctx : nullptr);
  Tensor v = value_head_.forward(z, cache ? &cache->value_ctx : nullptr);

  Output out;
  out.logits = p.data;
  out.probs = softmax_rows(out.logits);
  out.value = v.data.col(0);
  return out;
}

void PolicyValueNet::backward(const Cache& cache, const RowMatrix& dlogits,
                              const Vector& dvalue, Grads& grads) const {
  const bool conv = convolutional();
  const std::size_t n = trunk_.size();

  Tensor dp;
  dp.data = dlogits;
  dp.channels = 1;
  dp.repr = policy_head_.repr_out();
  Tensor dv(dvalue.size(), 1, 1);
  dv.data.col(0) = dvalue;

  Tensor dz = policy_head_.backward(dp, cache.policy_ctx, grads[n]);
  Tensor dzv = value_head_.backward(dv, cache.value_ctx, grads[n + 1]);
  dz.data += dzv.data;

  for (std::size_t idx = n; idx-- > 0;) {
    if (conv && idx == n - 2)
      dz = global_max_pool_backward(dz, cache.pool_ctx, cache.pool_in.channels,
                                    cache.pool_in.repr);
    dz = relu_backward(dz, cache.relu_ctx[idx]);
    dz = trunk_[idx].backward(dz, cache.layer_ctx[idx], grads[idx]);
  }
}

PolicyValueNet::Grads PolicyValueNet::zero_grads() const {
  Grads grads;
  grads.reserve(trunk_.size() + 2);
  for (const auto& layer : trunk_) grads.push_back(layer.zero_grads());
  grads.push_back(policy_head_.zero_grads());
  grads.push_back(value_head_.zero_grads());
  return grads;
}

Index PolicyValueNet::param_count() const {
  Index total = 0;
  for (const auto* layer : layers()) total += layer->param_count();
  return total;
}

std::vector<BasisLayer*> PolicyValueNet::layers() {
  std::vector<BasisLayer*> out;
  for (auto& layer : trunk_) out.push_back(&layer);
  out.push_back(&policy_head_);
  out.push_back(&value_head_);
  return out;
}

std::vector<const BasisLayer*> PolicyValueNet::layers() const {
  std::vector<const BasisLayer*> out;
  for (const auto& layer : trunk_) out.push_back(&layer);
  out.push_back(&policy_head_);
  out.push_back(&value_head_);
  return out;
}

namespace {

BasisVariant basis_variant(NetVariant v) {
  switch (v) {
    case NetVariant::kEquivariant: return BasisVariant::kEquivariant;
    case NetVariant::kNullspace: return BasisVariant::kNullspace;
    case NetVariant::kRandom: return BasisVariant::kRandom;
    case NetVariant::kPlain: break;
  }
  throw std::invalid_argument("plain variant has no basis construction");
}

BasisLayer plain_linear(int d_in, int d_out, int channels_in, int channels_out) {
  WeightShape shape{d_out, d_in, 1, 1, 0};
  return BasisLayer(full_basis(shape), channels_in, channels_out,
                    LayerKind::kLinear, {1, 0}, /*scalar_bias=*/true);
}

BasisLayer plain_conv(int channels_in, int channels_out, int filter, int stride) {
  WeightShape shape{1, 1, filter, filter, 0};
  return BasisLayer(full_basis(shape), channels_in, channels_out, LayerKind::kConv,
                    {stride, 0}, /*scalar_bias=*/true);
}

}  // namespace

PolicyValueNet build_network(const NetworkConfig& config) {
  const bool plain_arch =
      config.arch == Arch::kPlainMlp || config.arch == Arch::kPlainCnn;
  if (!plain_arch && config.variant == NetVariant::kPlain)
    throw std::invalid_argument("basis architecture cannot use the plain variant");
  if (config.hidden_layers < 1)
    throw std::invalid_argument("need at least one hidden layer");

  NetworkConfig cfg = config;
  if (plain_arch) cfg.variant = NetVariant::kPlain;

  std::vector<BasisLayer> trunk;
  auto layer_seed = [&](int i) { return derive_seed(cfg.seed, 100 + i); };
  Rng init_rng(derive_seed(cfg.seed, 1));

  switch (cfg.arch) {
    case Arch::kMlpCartpole: {
      CartPoleReps reps = cartpole_representations();
      BasisVariant bv = basis_variant(cfg.variant);
      const int ch = 64;
      trunk.emplace_back(build_basis(reps.first_layer(), bv, {0, layer_seed(0)}), 1, ch);
      for (int i = 1; i < cfg.hidden_layers; ++i)
        trunk.emplace_back(build_basis(reps.hidden_layer(), bv, {0, layer_seed(i)}), ch, ch);
      BasisLayer policy(build_basis(reps.policy_head(), bv, {0, layer_seed(90)}), ch, 1);
      BasisLayer value(build_basis(reps.value_head(), bv, {0, layer_seed(91)}), ch, 1);
      for (auto& l : trunk) l.init(InitScheme::kXavier, init_rng);
      policy.init(InitScheme::kXavier, init_rng);
      value.init(InitScheme::kXavier, init_rng);
      return PolicyValueNet(cfg, std::move(trunk), std::move(policy), std::move(value));
    }
    case Arch::kCnnGridworld: {
      GridWorldReps reps = gridworld_representations();
      BasisVariant bv = basis_variant(cfg.variant);
      const double div = cfg.width_divisor > 0 ? cfg.width_divisor
                                               : std::sqrt(double(reps.group.order));
      const int c1 = int(16 / div), c2 = int(32 / div), cd = int(512 / div);
      trunk.emplace_back(build_basis(reps.first_conv(), bv, {0, layer_seed(0)}), 1, c1,
                         LayerKind::kConv, BasisLayer::Geometry{2, 0});
      trunk.emplace_back(build_basis(reps.second_conv(), bv, {0, layer_seed(1)}), c1, c2,
                         LayerKind::kConv, BasisLayer::Geometry{1, 0});
      trunk.emplace_back(build_basis(reps.dense_layer(), bv, {0, layer_seed(2)}), c2, cd);
      BasisLayer policy(build_basis(reps.policy_head(), bv, {0, layer_seed(90)}), cd, 1);
      BasisLayer value(build_basis(reps.value_head(), bv, {0, layer_seed(91)}), cd, 1);
      for (auto& l : trunk) l.init(InitScheme::kHe, init_rng);
      policy.init(InitScheme::kHe, init_rng);
      value.init(InitScheme::kHe, init_rng);
      return PolicyValueNet(cfg, std::move(trunk), std::move(policy), std::move(value));
    }
    case Arch::kPlainMlp: {
      // Baseline MLP: 4 -> 64 -> 128 -> heads, matching the reference
      // architecture's parameter budget.
      trunk.push_back(plain_linear(4, 1, 1, 64));
      int prev = 64;
      for (int i = 1; i < cfg.hidden_layers; ++i) {
        trunk.push_back(plain_linear(1, 1, prev, 128));
        prev = 128;
      }
      BasisLayer policy = plain_linear(1, 2, prev, 1);
      BasisLayer value = plain_linear(1, 1, prev, 1);
      for (auto& l : trunk) l.init(InitScheme::kXavier, init_rng);
      policy.init(InitScheme::kXavier, init_rng);
      value.init(InitScheme::kXavier, init_rng);
      return PolicyValueNet(cfg, std::move(trunk), std::move(policy), std::move(value));
    }
    case Arch::kPlainCnn: {
      trunk.push_back(plain_conv(1, 16, 7, 2));
      trunk.push_back(plain_conv(16, 32, 5, 1));
      trunk.push_back(plain_linear(1, 1, 32, 512));
      BasisLayer policy = plain_linear(1, 5, 512, 1);
      BasisLayer value = plain_linear(1, 1, 512, 1);
      for (auto& l : trunk) l.init(InitScheme::kHe, init_rng);
      policy.init(InitScheme::kHe, init_rng);
      value.init(InitScheme::kHe, init_rng);
      return PolicyValueNet(cfg, std::move(trunk), std::move(policy), std::move(value));
    }
  }
  throw std::invalid_argument("unknown architecture");
}

Tensor transform_activation(int g, const Tensor& z, const Representation& repr_rep,
                            bool rotate_spatial) {
  if (repr_rep.dim() != z.repr)
    throw std::invalid_argument("repr dimension mismatch");
  const auto& perm = repr_rep.perm(g);
  Tensor out = z;
  for (Index b = 0; b < z.batch(); ++b)
    for (int c = 0; c < z.channels; ++c)
      for (int r = 0; r < z.repr; ++r)
        for (int y = 0; y < z.height; ++y)
          for (int x = 0; x < z.width; ++x) {
            int yy = y, xx = x;
            if (rotate_spatial)
              for (int k = 0; k < ((g % 4) + 4) % 4; ++k) {
                int ny = xx, nx = z.height - 1 - yy;
                yy = ny;
                xx = nx;
              }
            out.at(b, c, perm[r], yy, xx) = z.at(b, c, r, y, x);
          }
  return out;
}

namespace {

Tensor cartpole_obs_batch(Rng& rng, Index batch) {
  Tensor obs(batch, 1, 4);
  for (Index b = 0; b < batch; ++b)
    for (int j = 0; j < 4; ++j) obs.at(b, 0, j) = rng.normal();
  return obs;
}

Tensor gridworld_obs_batch(Rng& rng, Index batch) {
  Tensor obs(batch, 1, 1, 21, 21);
  for (Index b = 0; b < batch; ++b)
    for (int y = 0; y < 21; ++y)
      for (int x = 0; x < 21; ++x)
        obs.at(b, 0, 0, y, x) = rng.uniform() < 0.1 ? 1.0 : 0.0;
  return obs;
}

}  // namespace

EnvSymmetry cartpole_symmetry() {
  CartPoleReps reps = cartpole_representations();
  return EnvSymmetry{
      reps.group,
      [](int g, const Tensor& obs) {
        Tensor out = obs;
        if (g == 1) out.data = -out.data;
        return out;
      },
      reps.policy,
      [](int g, int a) { return g == 0 ? a : 1 - a; },
      cartpole_obs_batch};
}

EnvSymmetry gridworld_symmetry() {
  GridWorldReps reps = gridworld_representations();
  Representation policy = reps.policy;
  return EnvSymmetry{
      reps.group,
      [](int g, const Tensor& obs) {
        Tensor out = obs;
        for (Index b = 0; b < obs.batch(); ++b)
          for (int c = 0; c < obs.channels; ++c)
            for (int r = 0; r < obs.repr; ++r) {
              Matrix img(obs.height, obs.width);
              for (int y = 0; y < obs.height; ++y)
                for (int x = 0; x < obs.width; ++x) img(y, x) = obs.at(b, c, r, y, x);
              img = rot90_cw(img, g);
              for (int y = 0; y < obs.height; ++y)
                for (int x = 0; x < obs.width; ++x) out.at(b, c, r, y, x) = img(y, x);
            }
        return out;
      },
      policy,
      [policy](int g, int a) { return policy.perm(g)[a]; },
      gridworld_obs_batch};
}

NetEquivarianceReport check_network_equivariance(const PolicyValueNet& net,
                                                 const EnvSymmetry& symmetry,
                                                 int n_states, std::uint64_t seed) {
  Rng rng(seed);
  Tensor obs = symmetry.sample_obs(rng, n_states);
  PolicyValueNet::Output base = net.forward(obs);
  NetEquivarianceReport report;
  for (int g = 0; g < symmetry.group.order; ++g) {
    if (g == symmetry.group.identity) continue;
    PolicyValueNet::Output moved = net.forward(symmetry.transform_obs(g, obs));
    const auto& perm = symmetry.policy_rep.perm(g);
    for (Index b = 0; b < obs.batch(); ++b) {
      for (int a = 0; a < net.n_actions(); ++a) {
        // (K_g pi(s))[perm(a)] = pi(s)[a] must match pi(L_g s)[perm(a)].
        double diff = std::abs(base.probs(b, a) - moved.probs(b, perm[a]));
        report.policy_residual = std::max(report.policy_residual, diff);
      }
      report.value_residual =
          std::max(report.value_residual, std::abs(base.value(b) - moved.value(b)));
    }
  }
  return report;
}

PolicyValueNet::Output averaged_forward(const PolicyValueNet& net,
                                        const EnvSymmetry& symmetry,
                                        const Tensor& obs) {
  const int order = symmetry.group.order;
  PolicyValueNet::Output out;
  out.probs = RowMatrix::Zero(obs.batch(), net.n_actions());
  out.value = Vector::Zero(obs.batch());
  for (int g = 0; g < order; ++g) {
    PolicyValueNet::Output branch = net.forward(symmetry.transform_obs(g, obs));
    const auto& perm = symmetry.policy_rep.perm(g);
    for (Index b = 0; b < obs.batch(); ++b)
      for (int a = 0; a < net.n_actions(); ++a)
        // K_g^{-1} pi(L_g s): entry a picks up the transformed policy at perm(a).
        out.probs(b, a) += branch.probs(b, perm[a]) / order;
    out.value += branch.value / order;
  }
  out.logits = out.probs.array().max(1e-300).log();
  return out;
}

void save_checkpoint(const PolicyValueNet& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint file: " + path);
  out.precision(17);
  const NetworkConfig& cfg = net.config();
  out << "equistruct-checkpoint v1\n";
  out << "arch " << to_string(cfg.arch) << "\n";
  out << "variant " << to_string(cfg.variant) << "\n";
  out << "seed " << cfg.seed << "\n";
  out << "width_divisor " << cfg.width_divisor << "\n";
  out << "hidden_layers " << cfg.hidden_layers << "\n";
  auto layers = net.layers();
  out << "layers " << layers.size() << "\n";
  for (const BasisLayer* layer : layers) {
    out << "layer rank " << layer->rank() << " channels " << layer->channels_in()
        << " " << layer->channels_out() << " basis_seed " << layer->basis().seed
        << " variant " << to_string(layer->basis().variant) << "\n";
    out << "coefficients " << layer->coefficients().size() << "\n";
    for (Index i = 0; i < layer->coefficients().size(); ++i)
      out << layer->coefficients()(i) << "\n";
    out << "bias " << layer->bias().size() << "\n";
    for (Index i = 0; i < layer->bias().size(); ++i) out << layer->bias()(i) << "\n";
  }
}

PolicyValueNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::string word;
  std::getline(in, word);
  if (word != "equistruct-checkpoint v1")
    throw std::runtime_error("unsupported checkpoint header: " + word);
  NetworkConfig cfg;
  std::string key, value;
  in >> key >> value;
  cfg.arch = arch_from_string(value);
  in >> key >> value;
  cfg.variant = variant_from_string(value);
  in >> key >> cfg.seed;
  in >> key >> cfg.width_divisor;
  in >> key >> cfg.hidden_layers;
  std::size_t n_layers = 0;
  in >> key >> n_layers;

  PolicyValueNet net = build_network(cfg);
  auto layers = net.layers();
  if (layers.size() != n_layers)
    throw std::runtime_error("checkpoint layer count mismatch");
  for (BasisLayer* layer : layers) {
    int rank, ci, co;
    std::uint64_t bseed;
    std::string bvariant;
    in >> key >> key >> rank >> key >> ci >> co >> key >> bseed >> key >> bvariant;
    if (rank != layer->rank() || ci != layer->channels_in() || co != layer->channels_out())
      throw std::runtime_error("checkpoint layer metadata mismatch");
    Index n;
    in >> key >> n;
    Vector coeff(n);
    for (Index i = 0; i < n; ++i) in >> coeff(i);
    layer->set_coefficients(coeff);
    in >> key >> n;
    Vector bias(n);
    for (Index i = 0; i < n; ++i) in >> bias(i);
    if (n > 0) layer->set_bias(bias);
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return net;
}

}  // namespace equistruct
