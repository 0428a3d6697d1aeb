// equistruct: numerically constructed equivariant layers, homomorphic
// policy/value networks, tabular MDP reduction, and actor-critic training on
// the built-in symmetric tasks.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "equistruct/group.hpp"
#include "equistruct/mdp.hpp"
#include "equistruct/nn.hpp"
#include "equistruct/rl.hpp"
#include "equistruct/symmetrizer.hpp"
#include "equistruct/verify.hpp"

namespace es = equistruct;

namespace {

constexpr const char* kVersion = "equistruct 0.1.0";

std::uint64_t default_seed() {
  if (const char* env = std::getenv("EQUISTRUCT_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

es::RepresentationPair resolve_pair(const std::string& env, const std::string& layer,
                                    const std::string& group,
                                    const std::string& shape,
                                    const std::string& pair_file) {
  if (!pair_file.empty()) return es::load_pair_file(pair_file);
  if (!env.empty()) {
    if (env == "cartpole") {
      es::CartPoleReps reps = es::cartpole_representations();
      if (layer == "first") return reps.first_layer();
      if (layer == "hidden") return reps.hidden_layer();
      if (layer == "policy") return reps.policy_head();
      if (layer == "value") return reps.value_head();
      throw CLI::ValidationError("--layer",
                                 "cartpole layers: first, hidden, policy, value");
    }
    if (env == "gridworld") {
      es::GridWorldReps reps = es::gridworld_representations();
      if (layer == "conv1") return reps.first_conv();
      if (layer == "conv2") return reps.second_conv();
      if (layer == "dense") return reps.dense_layer();
      if (layer == "policy") return reps.policy_head();
      if (layer == "value") return reps.value_head();
      throw CLI::ValidationError(
          "--layer", "gridworld layers: conv1, conv2, dense, policy, value");
    }
    throw CLI::ValidationError("--env", "known environments: cartpole, gridworld");
  }
  // Group + shape form: OUTxIN, e.g. 3x3.
  auto sep = shape.find('x');
  if (sep == std::string::npos)
    throw CLI::ValidationError("--shape", "expected OUTxIN, e.g. 3x3");
  const int d_out = std::stoi(shape.substr(0, sep));
  const int d_in = std::stoi(shape.substr(sep + 1));
  if (group == "trivial") {
    es::FiniteGroup trivial = es::make_cyclic_group(1);
    return {es::Representation::identity(trivial, d_in),
            es::Representation::identity(trivial, d_out)};
  }
  int order = 0;
  if (group == "c2") order = 2;
  if (group == "c4") order = 4;
  if (order == 0)
    throw CLI::ValidationError("--group", "known groups: trivial, c2, c4");
  if (d_in % order != 0 || d_out % order != 0)
    throw CLI::ValidationError("--shape",
                               "cyclic groups need dims divisible by the order");
  es::FiniteGroup g = es::make_cyclic_group(order);
  es::Representation reg = es::Representation::regular(g);
  auto stack = [&](int dim) {
    std::vector<std::vector<int>> perms(order);
    for (int e = 0; e < order; ++e) {
      perms[e].resize(dim);
      for (int block = 0; block < dim / order; ++block)
        for (int j = 0; j < order; ++j)
          perms[e][block * order + j] = block * order + reg.perm(e)[j];
    }
    return es::Representation::permutation(g, perms);
  };
  return {stack(d_in), stack(d_out)};
}

int cmd_basis(const std::string& env, const std::string& layer,
              const std::string& group, const std::string& shape,
              const std::string& pair_file, const std::string& variant_name,
              int num_samples, std::uint64_t seed, double tol, bool dump) {
  es::RepresentationPair pair = resolve_pair(env, layer, group, shape, pair_file);
  es::BasisVariant variant = es::BasisVariant::kEquivariant;
  if (variant_name == "nullspace") variant = es::BasisVariant::kNullspace;
  else if (variant_name == "random") variant = es::BasisVariant::kRandom;
  else if (variant_name != "equivariant")
    throw CLI::ValidationError("--variant", "equivariant, nullspace or random");

  es::WeightBasis basis = es::build_basis(pair, variant, {num_samples, seed, tol});
  const es::WeightShape ws = basis.shape;
  double equivariance = 0.0, orthonormality = 0.0;
  for (int i = 0; i < basis.rank(); ++i) {
    equivariance =
        std::max(equivariance, es::equivariance_residual(basis.vectors[i], pair));
    for (int j = 0; j < basis.rank(); ++j) {
      double dot = Eigen::Map<const es::Vector>(basis.vectors[i].data(), ws.dim())
                       .dot(Eigen::Map<const es::Vector>(basis.vectors[j].data(),
                                                         ws.dim()));
      orthonormality = std::max(orthonormality, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  std::cout << "shape " << ws.d_out << "x" << ws.d_in;
  if (ws.spatial_size() > 1) std::cout << " filter " << ws.height << "x" << ws.width;
  std::cout << " (dim " << ws.dim() << ", bias slots " << ws.bias_slots << ")\n";
  std::cout << "variant " << es::to_string(basis.variant) << "\n";
  std::cout << "rank " << basis.rank() << "\n";
  std::cout << "max equivariance residual " << equivariance << "\n";
  std::cout << "max orthonormality residual " << orthonormality << "\n";
  if (dump) {
    std::cout.precision(6);
    for (int i = 0; i < basis.rank(); ++i) {
      std::cout << "basis " << i << "\n";
      // One text grid per output slot; spatial bases print h x w blocks.
      for (int ro = 0; ro < ws.d_out; ++ro)
        for (int s = 0; s < ws.d_in; ++s) {
          std::cout << "# out " << ro << " in_slot " << s << "\n";
          for (int y = 0; y < ws.height; ++y) {
            for (int x = 0; x < ws.width; ++x)
              std::cout << (x ? "," : "")
                        << basis.vectors[i](ro, (s * ws.height + y) * ws.width + x);
            std::cout << "\n";
          }
        }
    }
  }
  return 0;
}

int cmd_verify(const std::string& suite) {
  std::vector<es::Check> checks = es::verify_suite(suite);
  std::size_t width = 0;
  for (const es::Check& c : checks) width = std::max(width, c.name.size());
  for (const es::Check& c : checks) {
    std::ostringstream line;
    line << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
         << std::string(width - c.name.size() + 2, ' ') << "value " << c.value
         << "  (threshold " << c.threshold << ")";
    std::cout << line.str() << "\n";
  }
  const bool ok = es::all_pass(checks);
  std::cout << (ok ? "all checks passed" : "CHECKS FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_reduce(const std::string& input, std::string output) {
  es::MDPFile file = es::load_mdp(input);
  if (!file.group_action)
    throw std::runtime_error("reduce needs a group section in the MDP file");
  es::MDPHomomorphism hom = es::build_homomorphism(file.mdp, *file.group_action);
  es::TabularMDP reduced = es::reduce_mdp(file.mdp, hom);
  es::ValueEquivalenceReport report = es::check_optimal_value_equivalence(file.mdp, hom);
  if (output.empty()) output = input + ".reduced";
  es::save_mdp(output, reduced);
  std::cout << "abstract states " << hom.n_abstract_states << "\n";
  std::cout << "abstract actions " << hom.n_abstract_actions << "\n";
  std::cout << "value equivalence gap " << report.value_gap << "\n";
  std::cout << "q equivalence gap " << report.q_gap << "\n";
  std::cout << "lifted greedy policy gap " << report.lifted_policy_gap << "\n";
  std::cout << "wrote " << output << "\n";
  return 0;
}

struct TrainOptions {
  es::TrainConfig config;
  int seeds = 1;
  bool sweep_lr = false;
  bool render_text = false;
  std::string out = "curves.csv";
  std::string manifest;
  std::string variant_name = "equivariant";
  std::string augment_name = "none";
};

void apply_config_key(TrainOptions& opt, const std::string& key,
                      const std::string& value) {
  es::TrainConfig& c = opt.config;
  if (key == "env") c.env = value;
  else if (key == "variant") opt.variant_name = value;
  else if (key == "augment") opt.augment_name = value;
  else if (key == "lr") c.lr = std::stod(value);
  else if (key == "seed") c.seed = std::stoull(value);
  else if (key == "seeds") opt.seeds = std::stoi(value);
  else if (key == "steps") c.total_steps = std::stol(value);
  else if (key == "n_envs") c.n_envs = std::stoi(value);
  else if (key == "horizon") c.horizon = std::stoi(value);
  else if (key == "gamma") c.gamma = std::stod(value);
  else if (key == "entropy_coef") c.entropy_coef = std::stod(value);
  else if (key == "value_coef") c.value_coef = std::stod(value);
  else if (key == "clip_epsilon") c.clip_epsilon = std::stod(value);
  else if (key == "eval_interval") c.eval_interval = std::stol(value);
  else if (key == "eval_episodes") c.eval_episodes = std::stoi(value);
  else if (key == "hidden_layers") c.hidden_layers = std::stoi(value);
  else if (key == "width_divisor") c.width_divisor = std::stod(value);
  else if (key == "out") opt.out = value;
  else
    throw CLI::ValidationError(
        "--config",
        "unknown key '" + key +
            "'; valid keys: env, variant, augment, lr, seed, seeds, steps, "
            "n_envs, horizon, gamma, entropy_coef, value_coef, clip_epsilon, "
            "eval_interval, eval_episodes, hidden_layers, width_divisor, out");
}

void load_config_file(TrainOptions& opt, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      auto end = s.find_last_not_of(" \t");
      s.erase(end == std::string::npos ? 0 : end + 1);
      return s;
    };
    apply_config_key(opt, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void write_manifest(const TrainOptions& opt, const std::string& command) {
  std::string path = opt.manifest.empty() ? opt.out + ".manifest" : opt.manifest;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  const es::TrainConfig& c = opt.config;
  out << "command = " << command << "\n";
  out << "version = " << kVersion << "\n";
  out << "env = " << c.env << "\n";
  out << "variant = " << opt.variant_name << "\n";
  out << "augment = " << opt.augment_name << "\n";
  out << "lr = " << c.lr << "\n";
  out << "seed = " << c.seed << "\n";
  out << "seeds = " << opt.seeds << "\n";
  out << "steps = " << c.total_steps << "\n";
  out << "n_envs = " << c.n_envs << "\n";
  out << "horizon = " << c.horizon << "\n";
  out << "gamma = " << c.gamma << "\n";
  out << "entropy_coef = " << c.entropy_coef << "\n";
  out << "value_coef = " << c.value_coef << "\n";
  out << "clip_epsilon = " << c.clip_epsilon << "\n";
  out << "eval_interval = " << c.eval_interval << "\n";
  out << "eval_episodes = " << c.eval_episodes << "\n";
  out << "hidden_layers = " << c.hidden_layers << "\n";
  out << "width_divisor = " << c.width_divisor << "\n";
  out << "sweep_lr = " << (opt.sweep_lr ? 1 : 0) << "\n";
  out << "out = " << opt.out << "\n";
}

void render_episode(const es::TrainConfig& config) {
  if (config.env != "gridworld") return;
  es::NetworkConfig net_cfg;
  net_cfg.arch = es::arch_for(config);
  net_cfg.variant = config.variant;
  net_cfg.seed = es::derive_seed(config.seed, 2);
  es::PolicyValueNet net = es::build_network(net_cfg);
  es::GridWorldEnv env(config.seed + 12345);
  std::cout << "--- fresh-policy episode ---\n";
  for (int t = 0; t < 20 && !env.done(); ++t) {
    std::cout << es::render_text(env.state()) << "\n";
    es::Tensor obs(1, 1, 1, es::GridWorldEnv::kObsSize, es::GridWorldEnv::kObsSize);
    es::Matrix img = env.observe();
    for (int y = 0; y < obs.height; ++y)
      for (int x = 0; x < obs.width; ++x) obs.at(0, 0, 0, y, x) = img(y, x);
    Eigen::Index best = 0;
    net.forward(obs).probs.row(0).maxCoeff(&best);
    env.step(static_cast<int>(best));
  }
}

int cmd_train(TrainOptions opt, const std::string& command) {
  opt.config.variant = es::variant_from_string(opt.variant_name);
  opt.config.augment = es::augment_from_string(opt.augment_name);
  opt.config.validate();
  write_manifest(opt, command);

  std::vector<double> lrs =
      opt.sweep_lr ? es::lr_grid(opt.config.env) : std::vector<double>{opt.config.lr};
  double best_lr = lrs.front();
  double best_median = -std::numeric_limits<double>::infinity();
  for (double lr : lrs) {
    std::vector<double> final_medians;
    for (int k = 0; k < opt.seeds; ++k) {
      es::TrainConfig run = opt.config;
      run.lr = lr;
      run.seed = opt.config.seed + k;
      es::TrainResult result = es::train(run, opt.out, &std::cout);
      final_medians.push_back(result.curve.back().p50);
    }
    double median = es::quantile(final_medians, 0.5);
    if (opt.sweep_lr)
      std::cout << "lr " << lr << " final median return " << median << "\n";
    if (median > best_median) {
      best_median = median;
      best_lr = lr;
    }
  }
  if (opt.sweep_lr)
    std::cout << "best lr " << best_lr << " (final median return " << best_median
              << ")\n";
  if (opt.render_text) render_episode(opt.config);
  std::cout << "curves written to " << opt.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerically constructed equivariant policy networks and "
               "MDP-homomorphism tools"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::ostringstream command;
  for (int i = 0; i < argc; ++i) command << (i ? " " : "") << argv[i];

  // basis
  auto* basis = app.add_subcommand("basis", "Build and inspect a weight basis");
  std::string b_env, b_layer = "first", b_group, b_shape, b_pair_file;
  std::string b_variant = "equivariant";
  int b_samples = 0;
  std::uint64_t b_seed = default_seed();
  double b_tol = 1e-6;
  bool b_dump = false;
  basis->add_option("--env", b_env, "cartpole or gridworld");
  basis->add_option("--layer", b_layer, "layer name within --env");
  basis->add_option("--group", b_group, "trivial, c2 or c4 (with --shape)");
  basis->add_option("--shape", b_shape, "OUTxIN, e.g. 3x3");
  basis->add_option("--pair-file", b_pair_file, "representation pair file");
  basis->add_option("--variant", b_variant, "equivariant, nullspace or random");
  basis->add_option("--num-samples", b_samples, "sample count (default dim+8)");
  basis->add_option("--seed", b_seed, "sampling seed");
  basis->add_option("--tol", b_tol, "relative singular-value threshold");
  basis->add_flag("--dump", b_dump, "print each basis vector as a text grid");

  // verify
  auto* verify = app.add_subcommand("verify", "Run the property suites");
  std::string v_suite = "all";
  verify->add_option("suite", v_suite,
                     "symmetrizer, layers, network, mdp, envs or all");

  // reduce
  auto* reduce = app.add_subcommand("reduce", "Reduce a symmetric tabular MDP");
  std::string r_input, r_output;
  reduce->add_option("mdp-file", r_input, "MDP file with a group section")
      ->required();
  reduce->add_option("-o,--out", r_output, "output path (default <input>.reduced)");

  // train
  auto* train = app.add_subcommand("train", "Train an actor-critic agent");
  TrainOptions t;
  t.config.seed = default_seed();
  std::string t_config_file;
  train->add_option("--config", t_config_file, "flat key = value config file");
  train->add_option("--env", t.config.env, "cartpole or gridworld");
  train->add_option("--variant", t.variant_name,
                    "equivariant, nullspace, random or plain");
  train->add_option("--augment", t.augment_name, "none, stochastic or averaged");
  train->add_option("--lr", t.config.lr, "learning rate");
  train->add_option("--seed", t.config.seed, "base seed");
  train->add_option("--seeds", t.seeds, "number of seeds to run");
  train->add_option("--steps", t.config.total_steps, "total environment steps");
  train->add_option("--n-envs", t.config.n_envs, "parallel environments");
  train->add_option("--horizon", t.config.horizon, "steps per update");
  train->add_option("--gamma", t.config.gamma, "discount factor");
  train->add_option("--entropy-coef", t.config.entropy_coef, "entropy bonus");
  train->add_option("--value-coef", t.config.value_coef, "value loss weight");
  train->add_option("--clip", t.config.clip_epsilon,
                    "clipped-surrogate epsilon (0 = off)");
  train->add_option("--eval-interval", t.config.eval_interval,
                    "env steps between evaluations");
  train->add_option("--eval-episodes", t.config.eval_episodes,
                    "episodes per evaluation");
  train->add_option("--hidden-layers", t.config.hidden_layers, "MLP trunk depth");
  train->add_option("--width-divisor", t.config.width_divisor,
                    "channel divisor (0 = sqrt(|G|))");
  train->add_option("--out", t.out, "CSV output path");
  train->add_option("--manifest", t.manifest, "manifest path (default <out>.manifest)");
  train->add_flag("--sweep-lr", t.sweep_lr, "sweep the reference learning-rate grid");
  train->add_flag("--render-text", t.render_text,
                  "print ASCII grid-world frames after training");

  CLI11_PARSE(app, argc, argv);

  try {
    if (basis->parsed())
      return cmd_basis(b_env, b_layer, b_group, b_shape, b_pair_file, b_variant,
                       b_samples, b_seed, b_tol, b_dump);
    if (verify->parsed()) return cmd_verify(v_suite);
    if (reduce->parsed()) return cmd_reduce(r_input, r_output);
    if (train->parsed()) {
      if (!t_config_file.empty()) {
        TrainOptions from_file;
        from_file.config.seed = default_seed();
        load_config_file(from_file, t_config_file);
        // File values first, command-line flags override them.
        TrainOptions merged = from_file;
        auto touched = [&](const std::string& flag) {
          return train->get_option(flag)->count() > 0;
        };
        if (touched("--env")) merged.config.env = t.config.env;
        if (touched("--variant")) merged.variant_name = t.variant_name;
        if (touched("--augment")) merged.augment_name = t.augment_name;
        if (touched("--lr")) merged.config.lr = t.config.lr;
        if (touched("--seed")) merged.config.seed = t.config.seed;
        if (touched("--seeds")) merged.seeds = t.seeds;
        if (touched("--steps")) merged.config.total_steps = t.config.total_steps;
        if (touched("--n-envs")) merged.config.n_envs = t.config.n_envs;
        if (touched("--horizon")) merged.config.horizon = t.config.horizon;
        if (touched("--gamma")) merged.config.gamma = t.config.gamma;
        if (touched("--entropy-coef"))
          merged.config.entropy_coef = t.config.entropy_coef;
        if (touched("--value-coef")) merged.config.value_coef = t.config.value_coef;
        if (touched("--clip")) merged.config.clip_epsilon = t.config.clip_epsilon;
        if (touched("--eval-interval"))
          merged.config.eval_interval = t.config.eval_interval;
        if (touched("--eval-episodes"))
          merged.config.eval_episodes = t.config.eval_episodes;
        if (touched("--hidden-layers"))
          merged.config.hidden_layers = t.config.hidden_layers;
        if (touched("--width-divisor"))
          merged.config.width_divisor = t.config.width_divisor;
        if (touched("--out")) merged.out = t.out;
        if (touched("--manifest")) merged.manifest = t.manifest;
        merged.sweep_lr = t.sweep_lr || merged.sweep_lr;
        merged.render_text = t.render_text || merged.render_text;
        return cmd_train(merged, command.str());
      }
      return cmd_train(t, command.str());
    }
  } catch (const CLI::Error& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
