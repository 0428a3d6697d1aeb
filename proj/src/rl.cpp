#include "equistruct/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace equistruct {

std::string to_string(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return "none";
    case AugmentMode::kStochastic: return "stochastic";
    case AugmentMode::kAveraged: return "averaged";
  }
  return "?";
}

AugmentMode augment_from_string(const std::string& s) {
  if (s == "none") return AugmentMode::kNone;
  if (s == "stochastic") return AugmentMode::kStochastic;
  if (s == "averaged") return AugmentMode::kAveraged;
  throw std::invalid_argument("unknown augmentation mode: " + s);
}

void TrainConfig::validate() const {
  if (env != "cartpole" && env != "gridworld")
    throw std::invalid_argument("unknown env: " + env);
  if (lr <= 0) throw std::invalid_argument("learning rate must be positive");
  if (gamma < 0 || gamma >= 1) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (n_envs < 1 || horizon < 1 || total_steps < 1 || eval_episodes < 1)
    throw std::invalid_argument("counts must be positive");
}

Arch arch_for(const TrainConfig& config) {
  if (config.env == "cartpole")
    return config.variant == NetVariant::kPlain ? Arch::kPlainMlp : Arch::kMlpCartpole;
  return config.variant == NetVariant::kPlain ? Arch::kPlainCnn : Arch::kCnnGridworld;
}

EnvSymmetry symmetry_for(const std::string& env) {
  return env == "cartpole" ? cartpole_symmetry() : gridworld_symmetry();
}

std::vector<double> lr_grid(const std::string& env) {
  if (env == "cartpole")
    return {0.01, 0.05, 0.001, 0.005, 0.0001, 0.0003, 0.0005};
  return {0.00001, 0.00003, 0.0001, 0.0003, 0.001, 0.003};
}

namespace {

class CartPoleVec : public BatchedEnv {
 public:
  CartPoleVec(Index count, std::uint64_t seed) {
    for (Index i = 0; i < count; ++i)
      envs_.emplace_back(derive_seed(seed, 1000 + i));
  }
  int n_actions() const override { return CartPoleEnv::kActions; }
  Index count() const override { return static_cast<Index>(envs_.size()); }
  Tensor observe() const override {
    Tensor obs(count(), 1, 4);
    for (Index i = 0; i < count(); ++i) obs.data.row(i) = envs_[i].observe().transpose();
    return obs;
  }
  void step(const std::vector<int>& actions, Vector& rewards,
            std::vector<bool>& dones) override {
    for (Index i = 0; i < count(); ++i) {
      StepResult r = envs_[i].step(actions[i]);
      rewards(i) = r.reward;
      dones[i] = r.done;
      if (r.done) envs_[i].reset();
    }
  }
  void reset_all() override {
    for (auto& env : envs_) env.reset();
  }

 private:
  std::vector<CartPoleEnv> envs_;
};

class GridWorldVec : public BatchedEnv {
 public:
  GridWorldVec(Index count, std::uint64_t seed) {
    for (Index i = 0; i < count; ++i)
      envs_.emplace_back(derive_seed(seed, 2000 + i));
  }
  int n_actions() const override { return GridWorldEnv::kActions; }
  Index count() const override { return static_cast<Index>(envs_.size()); }
  Tensor observe() const override {
    const int n = GridWorldEnv::kObsSize;
    Tensor obs(count(), 1, 1, n, n);
    for (Index i = 0; i < count(); ++i) {
      Matrix img = envs_[i].observe();
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) obs.at(i, 0, 0, y, x) = img(y, x);
    }
    return obs;
  }
  void step(const std::vector<int>& actions, Vector& rewards,
            std::vector<bool>& dones) override {
    for (Index i = 0; i < count(); ++i) {
      StepResult r = envs_[i].step(actions[i]);
      rewards(i) = r.reward;
      dones[i] = r.done;
      if (r.done) envs_[i].reset();
    }
  }
  void reset_all() override {
    for (auto& env : envs_) env.reset();
  }

 private:
  std::vector<GridWorldEnv> envs_;
};

}  // namespace

std::unique_ptr<BatchedEnv> make_batched_env(const std::string& env, Index count,
                                             std::uint64_t seed) {
  if (env == "cartpole") return std::make_unique<CartPoleVec>(count, seed);
  if (env == "gridworld") return std::make_unique<GridWorldVec>(count, seed);
  throw std::invalid_argument("unknown env: " + env);
}

PolicyValueNet::Output acting_forward(const PolicyValueNet& net, const Tensor& obs,
                                      AugmentMode mode, const EnvSymmetry* symmetry) {
  if (mode == AugmentMode::kAveraged) {
    if (!symmetry) throw std::invalid_argument("averaged mode needs the env symmetry");
    return averaged_forward(net, *symmetry, obs);
  }
  return net.forward(obs);
}

Rollout collect_rollouts(const PolicyValueNet& net, BatchedEnv& envs, int horizon,
                         Rng& action_rng, AugmentMode mode,
                         const EnvSymmetry* symmetry) {
  Rollout rollout;
  rollout.horizon = horizon;
  rollout.n_envs = envs.count();
  rollout.actions = IntMatrix(horizon, rollout.n_envs);
  rollout.rewards = Matrix(horizon, rollout.n_envs);
  rollout.values = Matrix(horizon, rollout.n_envs);
  rollout.logps = Matrix(horizon, rollout.n_envs);
  rollout.dones = IntMatrix(horizon, rollout.n_envs);
  rollout.obs.reserve(horizon);

  Vector rewards(rollout.n_envs);
  std::vector<bool> dones(rollout.n_envs);
  std::vector<int> actions(rollout.n_envs);
  for (int t = 0; t < horizon; ++t) {
    Tensor obs = envs.observe();
    PolicyValueNet::Output out = acting_forward(net, obs, mode, symmetry);
    for (Index i = 0; i < rollout.n_envs; ++i) {
      Vector probs = out.probs.row(i).transpose();
      int a = action_rng.categorical(probs);
      actions[i] = a;
      rollout.actions(t, i) = a;
      rollout.logps(t, i) = std::log(std::max(probs(a), 1e-300));
      rollout.values(t, i) = out.value(i);
    }
    envs.step(actions, rewards, dones);
    for (Index i = 0; i < rollout.n_envs; ++i) {
      rollout.rewards(t, i) = rewards(i);
      rollout.dones(t, i) = dones[i] ? 1 : 0;
    }
    rollout.obs.push_back(std::move(obs));
  }
  rollout.final_obs = envs.observe();
  return rollout;
}

Matrix n_step_returns(const Rollout& rollout, const Vector& bootstrap, double gamma) {
  Matrix returns(rollout.horizon, rollout.n_envs);
  Vector running = bootstrap;
  for (int t = rollout.horizon - 1; t >= 0; --t) {
    for (Index i = 0; i < rollout.n_envs; ++i) {
      double future = rollout.dones(t, i) ? 0.0 : running(i);
      returns(t, i) = rollout.rewards(t, i) + gamma * future;
      running(i) = returns(t, i);
    }
  }
  return returns;
}

AdamState AdamState::for_net(const PolicyValueNet& net) {
  AdamState state;
  for (const BasisLayer* layer : net.layers()) {
    state.m_coeff.push_back(Vector::Zero(layer->coefficients().size()));
    state.v_coeff.push_back(Vector::Zero(layer->coefficients().size()));
    state.m_bias.push_back(Vector::Zero(layer->bias().size()));
    state.v_bias.push_back(Vector::Zero(layer->bias().size()));
  }
  return state;
}

void adam_step(Vector& params, const Vector& grads, Vector& m, Vector& v, long t,
               double lr, double beta1, double beta2, double epsilon) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam size mismatch");
  m = beta1 * m + (1.0 - beta1) * grads;
  v = beta2 * v + (1.0 - beta2) * grads.cwiseProduct(grads).eval();
  const double c1 = 1.0 - std::pow(beta1, double(t));
  const double c2 = 1.0 - std::pow(beta2, double(t));
  params -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + epsilon).matrix());
}

void adam_update(PolicyValueNet& net, const PolicyValueNet::Grads& grads,
                 AdamState& state, double lr) {
  ++state.t;
  auto layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Vector coeff = layers[i]->coefficients();
    adam_step(coeff, grads[i].coeff, state.m_coeff[i], state.v_coeff[i], state.t, lr,
              state.beta1, state.beta2, state.epsilon);
    layers[i]->set_coefficients(coeff);
    if (layers[i]->bias().size() > 0) {
      Vector bias = layers[i]->bias();
      adam_step(bias, grads[i].bias, state.m_bias[i], state.v_bias[i], state.t, lr,
                state.beta1, state.beta2, state.epsilon);
      layers[i]->set_bias(bias);
    }
  }
}

namespace {

double entropy_of_row(const RowMatrix& probs, Index row) {
  double h = 0.0;
  for (Index j = 0; j < probs.cols(); ++j) {
    double p = probs(row, j);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

/// Loss grads at the logits/value outputs for the direct (non-averaged) path.
struct DirectGrads {
  RowMatrix dlogits;
  Vector dvalue;
  LossReport report;
};

DirectGrads direct_loss_grads(const PolicyValueNet::Output& out,
                              const UpdateBatch& batch, const TrainConfig& config) {
  const Index n = batch.obs.batch();
  const int n_actions = static_cast<int>(out.probs.cols());
  DirectGrads g;
  g.dlogits = RowMatrix::Zero(n, n_actions);
  g.dvalue = Vector::Zero(n);
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int a = batch.actions[i];
    const double adv = batch.advantages(i);
    const double logp = std::log(std::max(out.probs(i, a), 1e-300));
    double policy_scale = adv;  // d(-logp * adv)/dlogits = adv * (pi - onehot)
    if (config.clip_epsilon > 0) {
      const double ratio = std::exp(logp - batch.logp_old(i));
      const double clipped = std::clamp(ratio, 1.0 - config.clip_epsilon,
                                        1.0 + config.clip_epsilon);
      policy_loss += -std::min(ratio * adv, clipped * adv);
      // Gradient flows only while the unclipped branch is active.
      const bool active = ratio * adv <= clipped * adv;
      policy_scale = active ? ratio * adv : 0.0;
    } else {
      policy_loss += -logp * adv;
    }
    const double h = entropy_of_row(out.probs, i);
    entropy += h;
    for (int j = 0; j < n_actions; ++j) {
      const double p = out.probs(i, j);
      double d = policy_scale * (p - (j == a ? 1.0 : 0.0));
      // -entropy_coef * H contributes +coef * p * (log p + H).
      d += config.entropy_coef * p * (std::log(std::max(p, 1e-300)) + h);
      g.dlogits(i, j) = d / n;
    }
    const double verr = out.value(i) - batch.returns(i);
    value_loss += verr * verr;
    g.dvalue(i) = config.value_coef * 2.0 * verr / n;
  }
  g.report.policy_loss = policy_loss / n;
  g.report.value_loss = value_loss / n;
  g.report.entropy = entropy / n;
  g.report.total = g.report.policy_loss + config.value_coef * g.report.value_loss -
                   config.entropy_coef * g.report.entropy;
  return g;
}

}  // namespace

std::pair<PolicyValueNet::Grads, LossReport> a2c_gradients(
    const PolicyValueNet& net, const UpdateBatch& batch, const TrainConfig& config,
    const EnvSymmetry* symmetry) {
  PolicyValueNet::Grads grads = net.zero_grads();

  if (config.augment != AugmentMode::kAveraged) {
    PolicyValueNet::Cache cache;
    PolicyValueNet::Output out = net.forward(batch.obs, &cache);
    DirectGrads g = direct_loss_grads(out, batch, config);
    net.backward(cache, g.dlogits, g.dvalue, grads);
    return {std::move(grads), g.report};
  }

  // Averaged augmentation: the acting policy is the group average
  // pi~(s) = (1/|G|) sum_g K_g^{-1} pi(L_g s), value averaged likewise.
  if (!symmetry) throw std::invalid_argument("averaged mode needs the env symmetry");
  const int order = symmetry->group.order;
  const Index n = batch.obs.batch();
  const int n_actions = net.n_actions();

  std::vector<PolicyValueNet::Cache> caches(order);
  std::vector<PolicyValueNet::Output> outs(order);
  RowMatrix avg_probs = RowMatrix::Zero(n, n_actions);
  Vector avg_value = Vector::Zero(n);
  for (int g = 0; g < order; ++g) {
    outs[g] = net.forward(symmetry->transform_obs(g, batch.obs), &caches[g]);
    const auto& perm = symmetry->policy_rep.perm(g);
    for (Index i = 0; i < n; ++i)
      for (int a = 0; a < n_actions; ++a)
        avg_probs(i, a) += outs[g].probs(i, perm[a]) / order;
    avg_value += outs[g].value / order;
  }

  // Loss grads with respect to the averaged probs / value.
  RowMatrix davg = RowMatrix::Zero(n, n_actions);
  Vector dvalue_avg = Vector::Zero(n);
  LossReport report;
  for (Index i = 0; i < n; ++i) {
    const int a = batch.actions[i];
    const double adv = batch.advantages(i);
    const double pa = std::max(avg_probs(i, a), 1e-300);
    report.policy_loss += -std::log(pa) * adv;
    davg(i, a) += -adv / pa / n;
    const double h = entropy_of_row(avg_probs, i);
    report.entropy += h;
    for (int j = 0; j < n_actions; ++j)
      davg(i, j) += config.entropy_coef *
                    (std::log(std::max(avg_probs(i, j), 1e-300)) + 1.0) / n;
    const double verr = avg_value(i) - batch.returns(i);
    report.value_loss += verr * verr;
    dvalue_avg(i) = config.value_coef * 2.0 * verr / n;
  }
  report.policy_loss /= n;
  report.value_loss /= n;
  report.entropy /= n;
  report.total = report.policy_loss + config.value_coef * report.value_loss -
                 config.entropy_coef * report.entropy;

  for (int g = 0; g < order; ++g) {
    const auto& perm = symmetry->policy_rep.perm(g);
    RowMatrix dprobs = RowMatrix::Zero(n, n_actions);
    for (Index i = 0; i < n; ++i)
      for (int a = 0; a < n_actions; ++a) dprobs(i, perm[a]) = davg(i, a) / order;
    // Through the softmax of this branch.
    RowMatrix dlogits(n, n_actions);
    for (Index i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n_actions; ++j) dot += dprobs(i, j) * outs[g].probs(i, j);
      for (int j = 0; j < n_actions; ++j)
        dlogits(i, j) = outs[g].probs(i, j) * (dprobs(i, j) - dot);
    }
    net.backward(caches[g], dlogits, Vector(dvalue_avg / order), grads);
  }
  return {std::move(grads), report};
}

LossReport a2c_update(PolicyValueNet& net, const Rollout& rollout,
                      const TrainConfig& config, AdamState& adam, Rng& augment_rng,
                      const EnvSymmetry* symmetry) {
  const Index n = rollout.horizon * rollout.n_envs;
  Vector bootstrap =
      acting_forward(net, rollout.final_obs, config.augment, symmetry).value;
  Matrix returns = n_step_returns(rollout, bootstrap, config.gamma);

  UpdateBatch batch;
  batch.obs = Tensor(n, rollout.obs[0].channels, rollout.obs[0].repr,
                     rollout.obs[0].height, rollout.obs[0].width);
  batch.actions.resize(n);
  batch.advantages = Vector(n);
  batch.returns = Vector(n);
  batch.logp_old = Vector(n);
  Index k = 0;
  for (int t = 0; t < rollout.horizon; ++t)
    for (Index i = 0; i < rollout.n_envs; ++i, ++k) {
      batch.obs.data.row(k) = rollout.obs[t].data.row(i);
      batch.actions[k] = rollout.actions(t, i);
      batch.returns(k) = returns(t, i);
      batch.advantages(k) = returns(t, i) - rollout.values(t, i);
      batch.logp_old(k) = rollout.logps(t, i);
    }

  if (config.augment == AugmentMode::kStochastic) {
    // Transform each (state, action) pair by a random group element before
    // feeding it to the network; the returns are invariant.
    for (Index i = 0; i < n; ++i) {
      int g = augment_rng.below(symmetry->group.order);
      if (g == symmetry->group.identity) continue;
      Tensor row(1, batch.obs.channels, batch.obs.repr, batch.obs.height,
                 batch.obs.width);
      row.data.row(0) = batch.obs.data.row(i);
      batch.obs.data.row(i) = symmetry->transform_obs(g, row).data.row(0);
      batch.actions[i] = symmetry->transform_action(g, batch.actions[i]);
    }
  }

  auto [grads, report] = a2c_gradients(net, batch, config, symmetry);
  if (!std::isfinite(report.total)) {
    std::ostringstream msg;
    msg << "a2c_update: non-finite loss (policy " << report.policy_loss << ", value "
        << report.value_loss << ", entropy " << report.entropy << ")";
    throw std::runtime_error(msg.str());
  }
  adam_update(net, grads, adam, config.lr);
  return report;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * (values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - lo;
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

EvalResult evaluate_policy(const PolicyValueNet& net, const TrainConfig& config,
                           std::uint64_t seed) {
  const EnvSymmetry symmetry = symmetry_for(config.env);
  auto envs = make_batched_env(config.env, config.eval_episodes, seed);
  envs->reset_all();
  const Index n = envs->count();
  std::vector<double> totals(n, 0.0);
  std::vector<bool> finished(n, false);
  Vector rewards(n);
  std::vector<bool> dones(n);
  std::vector<int> actions(n);
  const int cap = config.env == "cartpole" ? 500 : GridWorldEnv::kMaxSteps;
  for (int t = 0; t < cap; ++t) {
    PolicyValueNet::Output out =
        acting_forward(net, envs->observe(), config.augment, &symmetry);
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      out.probs.row(i).maxCoeff(&best);
      actions[i] = static_cast<int>(best);
    }
    envs->step(actions, rewards, dones);
    bool all_done = true;
    for (Index i = 0; i < n; ++i) {
      if (!finished[i]) {
        totals[i] += rewards(i);
        if (dones[i]) finished[i] = true;
      }
      all_done = all_done && finished[i];
    }
    if (all_done) break;
  }
  EvalResult result;
  result.returns = totals;
  result.p25 = quantile(totals, 0.25);
  result.p50 = quantile(totals, 0.50);
  result.p75 = quantile(totals, 0.75);
  return result;
}

TrainResult train(const TrainConfig& config, const std::string& csv_path,
                  std::ostream* log) {
  config.validate();
  NetworkConfig net_cfg;
  net_cfg.arch = arch_for(config);
  net_cfg.variant = config.variant;
  net_cfg.seed = derive_seed(config.seed, 2);
  net_cfg.width_divisor = config.width_divisor;
  net_cfg.hidden_layers = config.hidden_layers;
  PolicyValueNet net = build_network(net_cfg);

  const EnvSymmetry symmetry = symmetry_for(config.env);
  auto envs = make_batched_env(config.env, config.n_envs, derive_seed(config.seed, 3));
  envs->reset_all();
  Rng action_rng(derive_seed(config.seed, 5));
  Rng augment_rng(derive_seed(config.seed, 6));
  AdamState adam = AdamState::for_net(net);

  std::ofstream csv;
  if (!csv_path.empty()) {
    const bool exists = static_cast<bool>(std::ifstream(csv_path));
    csv.open(csv_path, std::ios::app);
    if (!csv) throw std::runtime_error("cannot open CSV for writing: " + csv_path);
    if (!exists)
      csv << "variant,seed,lr,env_steps,return_p25,return_p50,return_p75\n";
  }
  std::string variant_label = to_string(config.variant);
  if (config.augment != AugmentMode::kNone)
    variant_label += "-" + to_string(config.augment);

  TrainResult result;
  long steps = 0;
  int eval_index = 0;
  auto run_eval = [&](long at_steps) {
    EvalResult eval =
        evaluate_policy(net, config, derive_seed(config.seed, 9000 + eval_index++));
    result.curve.push_back({at_steps, eval.p25, eval.p50, eval.p75});
    if (csv.is_open()) {
      csv << variant_label << ',' << config.seed << ',' << config.lr << ','
          << at_steps << ',' << eval.p25 << ',' << eval.p50 << ',' << eval.p75
          << '\n';
      csv.flush();
    }
    if (log)
      (*log) << config.env << " " << variant_label << " seed " << config.seed
             << " lr " << config.lr << " steps " << at_steps << " median "
             << eval.p50 << "\n";
  };

  run_eval(0);
  long next_eval = config.eval_interval;
  while (steps < config.total_steps) {
    Rollout rollout =
        collect_rollouts(net, *envs, config.horizon, action_rng, config.augment,
                         &symmetry);
    result.last_loss = a2c_update(net, rollout, config, adam, augment_rng, &symmetry);
    steps += static_cast<long>(config.horizon) * config.n_envs;
    if (steps >= next_eval || steps >= config.total_steps) {
      run_eval(steps);
      while (next_eval <= steps) next_eval += config.eval_interval;
    }
  }
  return result;
}

}  // namespace equistruct
