#include "equistruct/mdp.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace equistruct {

void TabularMDP::validate(double tol) const {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("MDP needs at least one state and action");
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("gamma must lie in [0, 1)");
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw std::invalid_argument("reward table shape mismatch");
  if (static_cast<int>(transition.size()) != n_actions)
    throw std::invalid_argument("need one transition matrix per action");
  for (const Matrix& t : transition) {
    if (t.rows() != n_states || t.cols() != n_states)
      throw std::invalid_argument("transition matrix shape mismatch");
    if (t.minCoeff() < -tol)
      throw std::invalid_argument("negative transition probability");
    for (int s = 0; s < n_states; ++s)
      if (std::abs(t.row(s).sum() - 1.0) > tol)
        throw std::invalid_argument("transition row does not sum to 1");
  }
}

namespace {

bool is_permutation_vec(const std::vector<int>& p) {
  std::vector<bool> seen(p.size(), false);
  for (int v : p) {
    if (v < 0 || v >= static_cast<int>(p.size()) || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

}  // namespace

void MDPGroupAction::validate() const {
  const int n = group.order;
  if (static_cast<int>(state_map.size()) != n ||
      static_cast<int>(action_map.size()) != n)
    throw std::invalid_argument("need one state/action map per group element");
  const int n_states = static_cast<int>(state_map[0].size());
  for (int g = 0; g < n; ++g) {
    if (!is_permutation_vec(state_map[g]))
      throw std::invalid_argument("state map is not a permutation");
    if (static_cast<int>(action_map[g].size()) != n_states)
      throw std::invalid_argument("action map needs one permutation per state");
    for (const auto& p : action_map[g])
      if (!is_permutation_vec(p))
        throw std::invalid_argument("action map is not a permutation");
  }
  for (int s = 0; s < n_states; ++s) {
    if (state_map[group.identity][s] != s)
      throw std::invalid_argument("identity must fix states");
    for (std::size_t a = 0; a < action_map[group.identity][s].size(); ++a)
      if (action_map[group.identity][s][a] != static_cast<int>(a))
        throw std::invalid_argument("identity must fix actions");
  }
  // L_gh = L_g o L_h and K_gh^s = K_g^{L_h s} o K_h^s.
  for (int g = 0; g < n; ++g)
    for (int h = 0; h < n; ++h) {
      int gh = group.compose(g, h);
      for (int s = 0; s < n_states; ++s) {
        if (state_map[gh][s] != state_map[g][state_map[h][s]])
          throw std::invalid_argument("state maps do not respect the group table");
        for (std::size_t a = 0; a < action_map[gh][s].size(); ++a)
          if (action_map[gh][s][a] !=
              action_map[g][state_map[h][s]][action_map[h][s][a]])
            throw std::invalid_argument("action maps do not respect the group table");
      }
    }
}

std::vector<int> compute_orbit(int s, const MDPGroupAction& action) {
  std::set<int> orbit;
  for (int g = 0; g < action.group.order; ++g) orbit.insert(action.state(g, s));
  return {orbit.begin(), orbit.end()};
}

std::vector<std::pair<int, int>> compute_orbit(int s, int a,
                                               const MDPGroupAction& action) {
  std::set<std::pair<int, int>> orbit;
  for (int g = 0; g < action.group.order; ++g)
    orbit.insert({action.state(g, s), action.action(g, s, a)});
  return {orbit.begin(), orbit.end()};
}

std::vector<std::vector<int>> state_orbits(const MDPGroupAction& action) {
  const int n_states = static_cast<int>(action.state_map[0].size());
  std::vector<bool> seen(n_states, false);
  std::vector<std::vector<int>> orbits;
  for (int s = 0; s < n_states; ++s) {
    if (seen[s]) continue;
    std::vector<int> orbit = compute_orbit(s, action);
    for (int q : orbit) seen[q] = true;
    orbits.push_back(std::move(orbit));
  }
  return orbits;
}

MDPSymmetryReport check_mdp_symmetry(const TabularMDP& mdp,
                                     const MDPGroupAction& action) {
  MDPSymmetryReport report;
  for (int g = 0; g < action.group.order; ++g)
    for (int s = 0; s < mdp.n_states; ++s) {
      int gs = action.state(g, s);
      for (int a = 0; a < mdp.n_actions; ++a) {
        int ga = action.action(g, s, a);
        report.reward_residual =
            std::max(report.reward_residual,
                     std::abs(mdp.reward(s, a) - mdp.reward(gs, ga)));
        for (int sp = 0; sp < mdp.n_states; ++sp)
          report.transition_residual =
              std::max(report.transition_residual,
                       std::abs(mdp.transition[a](s, sp) -
                                mdp.transition[ga](gs, action.state(g, sp))));
      }
    }
  return report;
}

MDPHomomorphism build_homomorphism(const TabularMDP& mdp,
                                   const MDPGroupAction& action, double tol) {
  mdp.validate();
  action.validate();
  MDPSymmetryReport symmetry = check_mdp_symmetry(mdp, action);
  if (symmetry.max_residual() > tol) {
    std::ostringstream msg;
    msg << "MDP is not symmetric under the given action: reward residual "
        << symmetry.reward_residual << ", transition residual "
        << symmetry.transition_residual;
    throw std::invalid_argument(msg.str());
  }

  MDPHomomorphism hom;
  hom.sigma = IntVector::Constant(mdp.n_states, -1);
  hom.alpha = IntMatrix::Constant(mdp.n_states, mdp.n_actions, -1);
  std::vector<int> representative(mdp.n_states);
  std::vector<int> abstract_of_rep(mdp.n_states, -1);
  int next = 0;
  for (int s = 0; s < mdp.n_states; ++s) {
    int rep = compute_orbit(s, action).front();
    representative[s] = rep;
    if (abstract_of_rep[rep] < 0 && rep == s) abstract_of_rep[rep] = next++;
  }
  hom.n_abstract_states = next;
  hom.n_abstract_actions = mdp.n_actions;
  for (int s = 0; s < mdp.n_states; ++s) {
    hom.sigma(s) = abstract_of_rep[representative[s]];
    int transporter = -1;
    for (int g = 0; g < action.group.order; ++g)
      if (action.state(g, s) == representative[s]) {
        transporter = g;
        break;
      }
    for (int a = 0; a < mdp.n_actions; ++a)
      hom.alpha(s, a) = action.action(transporter, s, a);
  }
  // Group-structured condition: transformed pairs map to the same abstract pair.
  for (int g = 0; g < action.group.order; ++g)
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        int gs = action.state(g, s), ga = action.action(g, s, a);
        if (hom.alpha(gs, ga) != hom.alpha(s, a)) {
          std::ostringstream msg;
          msg << "action transport is ill-defined at (g=" << g << ", s=" << s
              << ", a=" << a << "): a stabilizer element permutes actions";
          throw std::invalid_argument(msg.str());
        }
      }
  return hom;
}

TabularMDP reduce_mdp(const TabularMDP& mdp, const MDPHomomorphism& hom,
                      bool strict, double tol, double* disagreement) {
  const int ns = hom.n_abstract_states, na = hom.n_abstract_actions;
  TabularMDP out;
  out.n_states = ns;
  out.n_actions = na;
  out.gamma = mdp.gamma;
  out.reward = Matrix::Zero(ns, na);
  out.transition.assign(na, Matrix::Zero(ns, ns));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> filled(ns, na);
  filled.setConstant(false);
  double worst = 0.0;

  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const int as = hom.sigma(s), aa = hom.alpha(s, a);
      Vector row = Vector::Zero(ns);
      for (int sp = 0; sp < mdp.n_states; ++sp)
        row(hom.sigma(sp)) += mdp.transition[a](s, sp);
      if (!filled(as, aa)) {
        filled(as, aa) = true;
        out.reward(as, aa) = mdp.reward(s, a);
        out.transition[aa].row(as) = row.transpose();
      } else {
        double d = std::abs(out.reward(as, aa) - mdp.reward(s, a));
        d = std::max(d, (out.transition[aa].row(as).transpose() - row)
                            .cwiseAbs()
                            .maxCoeff());
        worst = std::max(worst, d);
        if (strict && d > tol) {
          std::ostringstream msg;
          msg << "reduction ill-defined: state-action pair (" << s << ", " << a
              << ") disagrees with its orbit representative by " << d;
          throw std::invalid_argument(msg.str());
        }
      }
    }
  if (!filled.all())
    throw std::invalid_argument("homomorphism does not cover the abstract space");
  if (disagreement) *disagreement = worst;
  return out;
}

ValueSolution value_iteration(const TabularMDP& mdp, double tol, int max_iters) {
  mdp.validate();
  ValueSolution sol;
  sol.v = Vector::Zero(mdp.n_states);
  Vector next(mdp.n_states);
  for (int it = 1; it <= max_iters; ++it) {
    for (int s = 0; s < mdp.n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.n_actions; ++a)
        best = std::max(best, mdp.reward(s, a) +
                                  mdp.gamma * mdp.transition[a].row(s).dot(sol.v));
      next(s) = best;
    }
    sol.residual = (next - sol.v).cwiseAbs().maxCoeff();
    sol.v = next;
    sol.iterations = it;
    if (sol.residual <= tol) break;
  }
  if (sol.residual > tol) {
    std::ostringstream msg;
    msg << "value iteration did not converge in " << max_iters
        << " iterations; last residual " << sol.residual;
    throw std::runtime_error(msg.str());
  }
  sol.q = Matrix::Zero(mdp.n_states, mdp.n_actions);
  sol.greedy = IntVector::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a)
      sol.q(s, a) = mdp.reward(s, a) + mdp.gamma * mdp.transition[a].row(s).dot(sol.v);
    sol.q.row(s).maxCoeff(&sol.greedy(s));
  }
  return sol;
}

Vector policy_evaluation(const TabularMDP& mdp, const TabularPolicy& policy) {
  const int n = mdp.n_states;
  Matrix t_pi = Matrix::Zero(n, n);
  Vector r_pi = Vector::Zero(n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      t_pi.row(s) += policy.probs(s, a) * mdp.transition[a].row(s);
      r_pi(s) += policy.probs(s, a) * mdp.reward(s, a);
    }
  Matrix system = Matrix::Identity(n, n) - mdp.gamma * t_pi;
  return system.partialPivLu().solve(r_pi);
}

TabularPolicy lift_policy(const TabularPolicy& abstract_policy,
                          const MDPHomomorphism& hom) {
  const int n_states = static_cast<int>(hom.sigma.size());
  const int n_actions = static_cast<int>(hom.alpha.cols());
  TabularPolicy lifted;
  lifted.probs = Matrix::Zero(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    std::vector<int> preimage_size(hom.n_abstract_actions, 0);
    for (int a = 0; a < n_actions; ++a) ++preimage_size[hom.alpha(s, a)];
    for (int a = 0; a < n_actions; ++a) {
      int aa = hom.alpha(s, a);
      lifted.probs(s, a) =
          abstract_policy.probs(hom.sigma(s), aa) / preimage_size[aa];
    }
  }
  return lifted;
}

ValueEquivalenceReport check_optimal_value_equivalence(const TabularMDP& mdp,
                                                       const MDPHomomorphism& hom,
                                                       double vi_tol) {
  ValueEquivalenceReport report;
  TabularMDP reduced =
      reduce_mdp(mdp, hom, /*strict=*/false, 0.0, &report.reduction_disagreement);
  ValueSolution original = value_iteration(mdp, vi_tol);
  ValueSolution abstract = value_iteration(reduced, vi_tol);
  for (int s = 0; s < mdp.n_states; ++s) {
    report.value_gap = std::max(report.value_gap,
                                std::abs(original.v(s) - abstract.v(hom.sigma(s))));
    for (int a = 0; a < mdp.n_actions; ++a)
      report.q_gap =
          std::max(report.q_gap, std::abs(original.q(s, a) -
                                          abstract.q(hom.sigma(s), hom.alpha(s, a))));
  }
  TabularPolicy abstract_greedy;
  abstract_greedy.probs = Matrix::Zero(reduced.n_states, reduced.n_actions);
  for (int s = 0; s < reduced.n_states; ++s)
    abstract_greedy.probs(s, abstract.greedy(s)) = 1.0;
  Vector lifted_value = policy_evaluation(mdp, lift_policy(abstract_greedy, hom));
  report.lifted_policy_gap = (original.v - lifted_value).cwiseAbs().maxCoeff();
  return report;
}

namespace {

// Token stream over the MDP file format; '#' starts a comment to end of line.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}
  std::string next() {
    std::string tok;
    while (in_ >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in_, rest);
        continue;
      }
      return tok;
    }
    return "";
  }
  double number() {
    std::string tok = next();
    if (tok.empty()) throw std::runtime_error("unexpected end of MDP file");
    try {
      return std::stod(tok);
    } catch (const std::exception&) {
      throw std::runtime_error("expected a number, got '" + tok + "'");
    }
  }
  int integer() { return static_cast<int>(number()); }

 private:
  std::istream& in_;
};

}  // namespace

MDPFile load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open MDP file: " + path);
  TokenReader reader(in);
  MDPFile file;
  TabularMDP& mdp = file.mdp;
  bool have_states = false, have_actions = false;

  std::string tok = reader.next();
  while (!tok.empty()) {
    if (tok == "states") {
      mdp.n_states = reader.integer();
      have_states = true;
    } else if (tok == "actions") {
      mdp.n_actions = reader.integer();
      have_actions = true;
    } else if (tok == "gamma") {
      mdp.gamma = reader.number();
    } else if (tok == "reward") {
      if (!have_states || !have_actions)
        throw std::runtime_error("reward block before states/actions");
      mdp.reward = Matrix(mdp.n_states, mdp.n_actions);
      for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) mdp.reward(s, a) = reader.number();
    } else if (tok == "transition") {
      int a = reader.integer();
      if (mdp.transition.empty()) mdp.transition.assign(mdp.n_actions, Matrix());
      if (a < 0 || a >= mdp.n_actions)
        throw std::runtime_error("transition block for unknown action");
      mdp.transition[a] = Matrix(mdp.n_states, mdp.n_states);
      for (int s = 0; s < mdp.n_states; ++s)
        for (int sp = 0; sp < mdp.n_states; ++sp)
          mdp.transition[a](s, sp) = reader.number();
    } else if (tok == "group") {
      MDPGroupAction action;
      int order = 0;
      std::string gtok = reader.next();
      if (gtok != "order") throw std::runtime_error("group section must start with order");
      order = reader.integer();
      IntMatrix table(order, order);
      gtok = reader.next();
      if (gtok != "compose") throw std::runtime_error("missing compose table");
      for (int i = 0; i < order; ++i)
        for (int j = 0; j < order; ++j) table(i, j) = reader.integer();
      action.group = make_group(table);
      action.state_map.assign(order, {});
      action.action_map.assign(
          order, std::vector<std::vector<int>>(mdp.n_states, std::vector<int>()));
      for (int g = 0; g < order; ++g) {
        action.state_map[g].resize(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s) action.state_map[g][s] = s;
        for (int s = 0; s < mdp.n_states; ++s) {
          action.action_map[g][s].resize(mdp.n_actions);
          for (int a = 0; a < mdp.n_actions; ++a) action.action_map[g][s][a] = a;
        }
      }
      gtok = reader.next();
      while (!gtok.empty() && gtok != "end") {
        if (gtok == "state_map") {
          int g = reader.integer();
          for (int s = 0; s < mdp.n_states; ++s)
            action.state_map[g][s] = reader.integer();
        } else if (gtok == "action_map") {
          int g = reader.integer();
          std::string stok = reader.next();
          std::vector<int> perm(mdp.n_actions);
          for (int a = 0; a < mdp.n_actions; ++a) perm[a] = reader.integer();
          if (stok == "*") {
            for (int s = 0; s < mdp.n_states; ++s) action.action_map[g][s] = perm;
          } else {
            action.action_map[g][std::stoi(stok)] = perm;
          }
        } else {
          throw std::runtime_error("unknown group directive: " + gtok);
        }
        gtok = reader.next();
      }
      action.validate();
      file.group_action = std::move(action);
    } else {
      throw std::runtime_error("unknown MDP file directive: " + tok);
    }
    tok = reader.next();
  }
  mdp.validate();
  return file;
}

void save_mdp(const std::string& path, const TabularMDP& mdp,
              const MDPGroupAction* action) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.precision(17);
  out << "states " << mdp.n_states << "\n";
  out << "actions " << mdp.n_actions << "\n";
  out << "gamma " << mdp.gamma << "\n";
  out << "reward\n";
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) out << (a ? " " : "") << mdp.reward(s, a);
    out << "\n";
  }
  for (int a = 0; a < mdp.n_actions; ++a) {
    out << "transition " << a << "\n";
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int sp = 0; sp < mdp.n_states; ++sp)
        out << (sp ? " " : "") << mdp.transition[a](s, sp);
      out << "\n";
    }
  }
  if (action) {
    out << "group\norder " << action->group.order << "\ncompose\n";
    for (int i = 0; i < action->group.order; ++i) {
      for (int j = 0; j < action->group.order; ++j)
        out << (j ? " " : "") << action->group.compose(i, j);
      out << "\n";
    }
    for (int g = 0; g < action->group.order; ++g) {
      out << "state_map " << g << "\n";
      for (int s = 0; s < mdp.n_states; ++s)
        out << (s ? " " : "") << action->state_map[g][s];
      out << "\n";
      for (int s = 0; s < mdp.n_states; ++s) {
        out << "action_map " << g << " " << s << "\n";
        for (int a = 0; a < mdp.n_actions; ++a)
          out << (a ? " " : "") << action->action_map[g][s][a];
        out << "\n";
      }
    }
    out << "end\n";
  }
}

namespace {

MDPGroupAction uniform_action(const FiniteGroup& group,
                              std::vector<std::vector<int>> state_map,
                              std::vector<std::vector<int>> action_perm_per_g) {
  MDPGroupAction action;
  action.group = group;
  const int n_states = static_cast<int>(state_map[0].size());
  action.state_map = std::move(state_map);
  action.action_map.resize(group.order);
  for (int g = 0; g < group.order; ++g)
    action.action_map[g].assign(n_states, action_perm_per_g[g]);
  action.validate();
  return action;
}

}  // namespace

std::vector<NamedMDP> builtin_symmetric_mdps() {
  std::vector<NamedMDP> out;

  {
    // Two-state mirror MDP: C2 swaps both states and actions.
    TabularMDP mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    mdp.gamma = 0.9;
    mdp.reward = Matrix{{1.0, 0.0}, {0.0, 1.0}};
    mdp.transition = {Matrix{{0.7, 0.3}, {0.6, 0.4}}, Matrix{{0.4, 0.6}, {0.3, 0.7}}};
    MDPGroupAction action =
        uniform_action(make_cyclic_group(2), {{0, 1}, {1, 0}}, {{0, 1}, {1, 0}});
    out.push_back({"mirror2", std::move(mdp), std::move(action)});
  }
  {
    // Four-state ring: C4 rotates states, actions unchanged.
    TabularMDP mdp;
    mdp.n_states = 4;
    mdp.n_actions = 2;
    mdp.gamma = 0.9;
    mdp.reward = Matrix::Zero(4, 2);
    mdp.reward.col(0).setOnes();
    Matrix cw = Matrix::Zero(4, 4), ccw = Matrix::Zero(4, 4);
    for (int s = 0; s < 4; ++s) {
      cw(s, (s + 1) % 4) = 0.9;
      cw(s, s) = 0.1;
      ccw(s, (s + 3) % 4) = 0.9;
      ccw(s, s) = 0.1;
    }
    mdp.transition = {cw, ccw};
    std::vector<std::vector<int>> smap(4, std::vector<int>(4));
    for (int g = 0; g < 4; ++g)
      for (int s = 0; s < 4; ++s) smap[g][s] = (s + g) % 4;
    MDPGroupAction action = uniform_action(
        make_cyclic_group(4), std::move(smap), {{0, 1}, {0, 1}, {0, 1}, {0, 1}});
    out.push_back({"ring4", std::move(mdp), std::move(action)});
  }
  {
    // Four-cell corridor, reflection symmetric, reward on reaching an end.
    TabularMDP mdp;
    mdp.n_states = 4;
    mdp.n_actions = 2;  // 0 = left, 1 = right
    mdp.gamma = 0.9;
    auto target = [](int s, int a) { return a == 0 ? std::max(0, s - 1) : std::min(3, s + 1); };
    mdp.reward = Matrix::Zero(4, 2);
    mdp.transition = {Matrix::Zero(4, 4), Matrix::Zero(4, 4)};
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) {
        int t = target(s, a);
        mdp.transition[a](s, t) = 1.0;
        mdp.reward(s, a) = (t == 0 || t == 3) ? 1.0 : 0.0;
      }
    MDPGroupAction action =
        uniform_action(make_cyclic_group(2), {{0, 1, 2, 3}, {3, 2, 1, 0}}, {{0, 1}, {1, 0}});
    out.push_back({"corridor4", std::move(mdp), std::move(action)});
  }
  return out;
}

}  // namespace equistruct
