#pragma once

#include <optional>
#include <string>
#include <vector>

#include "equistruct/group.hpp"
#include "equistruct/types.hpp"

namespace equistruct {

/// Enumerable MDP: reward R[s, a], transitions T[a](s, s'), discount gamma.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  Matrix reward;                    // n_states x n_actions
  std::vector<Matrix> transition;   // per action, n_states x n_states rows sum to 1
  double gamma = 0.9;

  void validate(double tol = 1e-12) const;
};

/// Group acting on an MDP: a state permutation L_g per element and a
/// state-dependent action permutation K_g^s. Maps must satisfy
/// L_gh = L_g o L_h and K_gh^s = K_g^{L_h s} o K_h^s.
struct MDPGroupAction {
  FiniteGroup group;
  std::vector<std::vector<int>> state_map;        // [g][s]
  std::vector<std::vector<std::vector<int>>> action_map;  // [g][s][a]

  int state(int g, int s) const { return state_map[g][s]; }
  int action(int g, int s, int a) const { return action_map[g][s][a]; }
  void validate() const;
};

/// Orbit of a state: { L_g[s] : g in G }, sorted ascending.
std::vector<int> compute_orbit(int s, const MDPGroupAction& action);
/// Orbit of a state-action pair under (L_g, K_g^s).
std::vector<std::pair<int, int>> compute_orbit(int s, int a,
                                               const MDPGroupAction& action);
/// All state orbits; they partition the state space.
std::vector<std::vector<int>> state_orbits(const MDPGroupAction& action);

struct MDPSymmetryReport {
  double reward_residual = 0.0;
  double transition_residual = 0.0;
  double max_residual() const { return std::max(reward_residual, transition_residual); }
};

/// Residuals of the invariance conditions R(s,a) = R(L_g s, K_g^s a) and
/// T(s'|s,a) = T(L_g s' | L_g s, K_g^s a).
MDPSymmetryReport check_mdp_symmetry(const TabularMDP& mdp,
                                     const MDPGroupAction& action);

/// Surjective maps (sigma, alpha_s) onto the abstract state-action space.
struct MDPHomomorphism {
  IntVector sigma;      // per state
  IntMatrix alpha;      // [state, action]
  int n_abstract_states = 0;
  int n_abstract_actions = 0;
};

/// Group-structured homomorphism: sigma sends each state to the
/// minimum-index representative of its orbit and alpha transports actions by
/// the smallest transporting element. Refuses when the MDP is not symmetric
/// at tol or when transport is ill-defined.
MDPHomomorphism build_homomorphism(const TabularMDP& mdp,
                                   const MDPGroupAction& action,
                                   double tol = 1e-10);

/// Abstract MDP with rewards copied through the maps and transitions
/// aggregated over sigma preimages. In strict mode, disagreement between
/// orbit representatives above tol throws with a witness pair; otherwise the
/// worst disagreement is reported through *disagreement.
TabularMDP reduce_mdp(const TabularMDP& mdp, const MDPHomomorphism& hom,
                      bool strict = true, double tol = 1e-10,
                      double* disagreement = nullptr);

struct TabularPolicy {
  Matrix probs;  // n_states x n_actions, rows sum to 1
};

struct ValueSolution {
  Vector v;             // optimal value per state
  Matrix q;             // optimal Q per (state, action)
  IntVector greedy;     // argmax_a Q
  double residual = 0;  // final sup-norm Bellman residual
  int iterations = 0;
};

/// Synchronous value iteration; throws on non-convergence, carrying the last
/// residual in the message.
ValueSolution value_iteration(const TabularMDP& mdp, double tol = 1e-10,
                              int max_iters = 100000);

/// Exact policy evaluation by linear solve of (I - gamma T_pi) v = r_pi.
Vector policy_evaluation(const TabularMDP& mdp, const TabularPolicy& policy);

/// Lift of an abstract policy: probability mass divided uniformly over each
/// abstract action's preimage.
TabularPolicy lift_policy(const TabularPolicy& abstract_policy,
                          const MDPHomomorphism& hom);

struct ValueEquivalenceReport {
  double value_gap = 0.0;           // max |V*(s) - Vbar*(sigma s)|
  double q_gap = 0.0;               // max |Q*(s,a) - Qbar*(sigma s, alpha_s a)|
  double lifted_policy_gap = 0.0;   // max |V*(s) - V^{lifted greedy}(s)|
  double reduction_disagreement = 0.0;
  double max_gap() const {
    return std::max({value_gap, q_gap, lifted_policy_gap});
  }
};

/// Solves both MDPs and certifies optimal value equivalence plus optimality
/// of the lifted greedy policy in the original MDP.
ValueEquivalenceReport check_optimal_value_equivalence(const TabularMDP& mdp,
                                                       const MDPHomomorphism& hom,
                                                       double vi_tol = 1e-12);

/// Structured-text MDP file: states/actions/gamma, dense R block, one dense
/// T block per action, optional group section with permutation lists.
struct MDPFile {
  TabularMDP mdp;
  std::optional<MDPGroupAction> group_action;
};
MDPFile load_mdp(const std::string& path);
void save_mdp(const std::string& path, const TabularMDP& mdp,
              const MDPGroupAction* action = nullptr);

/// Built-in symmetric fixtures used by tests, `verify mdp` and the docs.
struct NamedMDP {
  std::string name;
  TabularMDP mdp;
  MDPGroupAction action;
};
std::vector<NamedMDP> builtin_symmetric_mdps();

}  // namespace equistruct
