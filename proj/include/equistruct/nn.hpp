#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "equistruct/group.hpp"
#include "equistruct/layers.hpp"
#include "equistruct/types.hpp"

namespace equistruct {

enum class Arch { kMlpCartpole, kCnnGridworld, kPlainMlp, kPlainCnn };
enum class NetVariant { kEquivariant, kNullspace, kRandom, kPlain };

std::string to_string(Arch arch);
std::string to_string(NetVariant variant);
Arch arch_from_string(const std::string& s);
NetVariant variant_from_string(const std::string& s);

struct NetworkConfig {
  Arch arch = Arch::kMlpCartpole;
  NetVariant variant = NetVariant::kEquivariant;
  std::uint64_t seed = 0;
  /// Channel divisor for the basis architectures that scale widths; 0 means
  /// sqrt(|G|) where the architecture calls for it.
  double width_divisor = 0.0;
  /// Trunk depth for the MLP architectures (2 default, 4 = deeper variant).
  int hidden_layers = 2;
};

/// Actor-critic network: shared trunk, equivariant policy head, invariant
/// value head. The plain architectures use the same machinery over the
/// trivial group with scalar biases.
class PolicyValueNet {
 public:
  struct Output {
    RowMatrix logits;  // batch x n_actions
    RowMatrix probs;   // batch x n_actions (softmax rows)
    Vector value;      // batch
  };

  struct Cache {
    std::vector<Tensor> inputs;
    std::vector<BasisLayer::Ctx> layer_ctx;
    std::vector<ReluCtx> relu_ctx;
    PoolCtx pool_ctx;
    Tensor pool_in;  // dims only
    Tensor trunk_out;
    BasisLayer::Ctx policy_ctx, value_ctx;
  };

  using Grads = std::vector<BasisLayer::Grads>;  // trunk..., policy, value

  PolicyValueNet(NetworkConfig config, std::vector<BasisLayer> trunk,
                 BasisLayer policy_head, BasisLayer value_head);

  Output forward(const Tensor& obs, Cache* cache = nullptr) const;
  /// Backpropagates loss grads at the logits / value outputs; parameter grads
  /// are accumulated into `grads` (from zero_grads()).
  void backward(const Cache& cache, const RowMatrix& dlogits,
                const Vector& dvalue, Grads& grads) const;
  Grads zero_grads() const;

  const NetworkConfig& config() const { return config_; }
  int n_actions() const { return policy_head_.repr_out(); }
  Index param_count() const;
  std::vector<BasisLayer*> layers();
  std::vector<const BasisLayer*> layers() const;
  const std::vector<BasisLayer>& trunk() const { return trunk_; }
  const BasisLayer& policy_head() const { return policy_head_; }
  const BasisLayer& value_head() const { return value_head_; }

 private:
  bool convolutional() const {
    return config_.arch == Arch::kCnnGridworld || config_.arch == Arch::kPlainCnn;
  }

  NetworkConfig config_;
  std::vector<BasisLayer> trunk_;
  BasisLayer policy_head_;
  BasisLayer value_head_;
};

PolicyValueNet build_network(const NetworkConfig& config);

RowMatrix softmax_rows(const RowMatrix& logits);

/// Applies a group element to an activation tensor: the representation's
/// permutation on the repr axis and, when requested, a clockwise rotation by
/// g quarter-turns on the spatial axes.
Tensor transform_activation(int g, const Tensor& z, const Representation& repr_rep,
                            bool rotate_spatial);

/// An environment's group action at the network boundary: the observation
/// transform L_g, the action permutation K_g, and a sampler of observations
/// for residual checks.
struct EnvSymmetry {
  FiniteGroup group;
  std::function<Tensor(int g, const Tensor&)> transform_obs;
  Representation policy_rep;
  std::function<int(int g, int a)> transform_action;
  std::function<Tensor(Rng&, Index batch)> sample_obs;
};
EnvSymmetry cartpole_symmetry();
EnvSymmetry gridworld_symmetry();

struct NetEquivarianceReport {
  double policy_residual = 0.0;
  double value_residual = 0.0;
  double max_residual() const { return std::max(policy_residual, value_residual); }
};

/// max over sampled states and g of |K_g pi(s) - pi(L_g s)| and |V(s) - V(L_g s)|.
NetEquivarianceReport check_network_equivariance(const PolicyValueNet& net,
                                                 const EnvSymmetry& symmetry,
                                                 int n_states, std::uint64_t seed);

/// Group-averaged policy: probs = (1/|G|) sum_g K_g^{-1} pi(L_g s), value
/// averaged over the orbit. Exactly equivariant for any network.
PolicyValueNet::Output averaged_forward(const PolicyValueNet& net,
                                        const EnvSymmetry& symmetry,
                                        const Tensor& obs);

void save_checkpoint(const PolicyValueNet& net, const std::string& path);
PolicyValueNet load_checkpoint(const std::string& path);

}  // namespace equistruct
