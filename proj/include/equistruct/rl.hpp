#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "equistruct/envs.hpp"
#include "equistruct/nn.hpp"
#include "equistruct/rng.hpp"

namespace equistruct {

enum class AugmentMode { kNone, kStochastic, kAveraged };
std::string to_string(AugmentMode mode);
AugmentMode augment_from_string(const std::string& s);

struct TrainConfig {
  std::string env = "cartpole";  // "cartpole" | "gridworld"
  NetVariant variant = NetVariant::kEquivariant;
  double lr = 1e-3;
  int n_envs = 16;
  int horizon = 5;
  double gamma = 0.99;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double clip_epsilon = 0.0;  // > 0 switches to the clipped-ratio surrogate
  AugmentMode augment = AugmentMode::kNone;
  long total_steps = 100000;
  long eval_interval = 5000;
  int eval_episodes = 20;
  std::uint64_t seed = 0;
  int hidden_layers = 2;
  double width_divisor = 0.0;

  void validate() const;
};

Arch arch_for(const TrainConfig& config);
EnvSymmetry symmetry_for(const std::string& env);
/// The learning-rate grids swept in the reference experiments.
std::vector<double> lr_grid(const std::string& env);

/// Vectorized environment set; each instance owns a seed-partitioned rng
/// stream and auto-resets on episode end.
class BatchedEnv {
 public:
  virtual ~BatchedEnv() = default;
  virtual int n_actions() const = 0;
  virtual Index count() const = 0;
  virtual Tensor observe() const = 0;
  virtual void step(const std::vector<int>& actions, Vector& rewards,
                    std::vector<bool>& dones) = 0;
  virtual void reset_all() = 0;
};
std::unique_ptr<BatchedEnv> make_batched_env(const std::string& env, Index count,
                                             std::uint64_t seed);

/// Batched trajectories for one update: horizon steps over all environments.
struct Rollout {
  std::vector<Tensor> obs;  // per step
  IntMatrix actions;        // horizon x n_envs
  Matrix rewards;           // horizon x n_envs
  Matrix values;            // horizon x n_envs (acting-policy values)
  Matrix logps;             // horizon x n_envs (log-prob of sampled action)
  IntMatrix dones;          // horizon x n_envs
  Tensor final_obs;
  int horizon = 0;
  Index n_envs = 0;
};

/// Acting-policy outputs: the raw network, or its group-average when the
/// augmentation mode is `averaged`.
PolicyValueNet::Output acting_forward(const PolicyValueNet& net, const Tensor& obs,
                                      AugmentMode mode, const EnvSymmetry* symmetry);

Rollout collect_rollouts(const PolicyValueNet& net, BatchedEnv& envs, int horizon,
                         Rng& action_rng, AugmentMode mode = AugmentMode::kNone,
                         const EnvSymmetry* symmetry = nullptr);

/// returns[t] = r[t] + gamma * (1 - done[t]) * returns[t+1], bootstrapped
/// from the value of the post-rollout observation.
Matrix n_step_returns(const Rollout& rollout, const Vector& bootstrap, double gamma);

struct AdamState {
  std::vector<Vector> m_coeff, v_coeff, m_bias, v_bias;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  static AdamState for_net(const PolicyValueNet& net);
};

/// Standard bias-corrected Adam on a single parameter vector; `t` is the
/// already-incremented step count.
void adam_step(Vector& params, const Vector& grads, Vector& m, Vector& v, long t,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double epsilon = 1e-8);
void adam_update(PolicyValueNet& net, const PolicyValueNet::Grads& grads,
                 AdamState& state, double lr);

struct LossReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

/// One update's flattened sample batch. Advantages are treated as constants
/// (the actor-critic stop-gradient); logp_old feeds the clipped surrogate.
struct UpdateBatch {
  Tensor obs;
  std::vector<int> actions;
  Vector advantages;
  Vector returns;
  Vector logp_old;
};

/// Loss gradients for the configured objective:
///   policy + value_coef * value - entropy_coef * entropy
/// with policy = -mean(log pi(a|s) * adv), or the clipped-ratio surrogate
/// when clip_epsilon > 0.
std::pair<PolicyValueNet::Grads, LossReport> a2c_gradients(
    const PolicyValueNet& net, const UpdateBatch& batch, const TrainConfig& config,
    const EnvSymmetry* symmetry);

/// Full A2C update: returns/advantages, gradients, one Adam step. Throws on
/// non-finite loss.
LossReport a2c_update(PolicyValueNet& net, const Rollout& rollout,
                      const TrainConfig& config, AdamState& adam, Rng& augment_rng,
                      const EnvSymmetry* symmetry);

struct EvalResult {
  double p25 = 0.0, p50 = 0.0, p75 = 0.0;
  std::vector<double> returns;
};

/// Deterministic-argmax evaluation over vectorized episodes.
EvalResult evaluate_policy(const PolicyValueNet& net, const TrainConfig& config,
                           std::uint64_t seed);

struct CurvePoint {
  long env_steps = 0;
  double p25 = 0.0, p50 = 0.0, p75 = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  LossReport last_loss;
};

/// Collect/update loop with periodic evaluation; appends CSV rows
/// `variant,seed,lr,env_steps,return_p25,return_p50,return_p75` when a path
/// is given.
TrainResult train(const TrainConfig& config, const std::string& csv_path = "",
                  std::ostream* log = nullptr);

/// Linear-interpolation quantile of a sample vector.
double quantile(std::vector<double> values, double q);

}  // namespace equistruct
