#pragma once

#include <numbers>
#include <string>

#include "equistruct/layers.hpp"
#include "equistruct/rng.hpp"
#include "equistruct/types.hpp"

namespace equistruct {

struct StepResult {
  double reward = 0.0;
  bool done = false;
};

/// Constants of the reference cart-pole task (v1: 500-step cap), explicit
/// Euler integration with time step tau.
struct CartPoleParams {
  double gravity = 9.8;
  double mass_cart = 1.0;
  double mass_pole = 0.1;
  double half_length = 0.5;
  double force_mag = 10.0;
  double tau = 0.02;
  double x_threshold = 2.4;
  double theta_threshold = 12.0 * std::numbers::pi / 180.0;
  int max_steps = 500;

  double total_mass() const { return mass_cart + mass_pole; }
  double pole_mass_length() const { return mass_pole * half_length; }
};

struct CartPoleState {
  double x = 0.0, x_dot = 0.0, theta = 0.0, theta_dot = 0.0;
  int steps = 0;
};

/// One Euler step of the cart-pole dynamics; pure, ignores step counting.
CartPoleState cartpole_dynamics(const CartPoleState& state, int action,
                                const CartPoleParams& params = {});
bool cartpole_failed(const CartPoleState& state, const CartPoleParams& params = {});

class CartPoleEnv {
 public:
  static constexpr int kActions = 2;  // 0 = push left, 1 = push right

  explicit CartPoleEnv(std::uint64_t seed) : rng_(seed) { reset(); }

  void reset();
  /// Reward +1 per step; throws if called on a finished episode.
  StepResult step(int action);
  Vector observe() const;  // (x, x_dot, theta, theta_dot)
  const CartPoleState& state() const { return state_; }
  bool done() const { return done_; }

 private:
  CartPoleParams params_;
  CartPoleState state_;
  Rng rng_;
  bool done_ = false;
};

struct GridWorldState {
  int agent_r = 0, agent_c = 0;
  int prey_r = 0, prey_c = 0;
  int steps = 0;
};

/// Toroidal 7x7 predator-prey task. Actions: no-op, up, right, down, left.
/// The prey takes a uniformly random compass step with probability 0.15.
/// Catching pays +1 and ends the episode; every other step pays -0.1; the
/// episode also ends after 100 steps.
class GridWorldEnv {
 public:
  static constexpr int kSize = 7;
  static constexpr int kScale = 3;  // each cell renders as a 3x3 block
  static constexpr int kObsSize = kSize * kScale;
  static constexpr int kActions = 5;
  static constexpr int kMaxSteps = 100;
  static constexpr double kPreyMoveProb = 0.15;

  explicit GridWorldEnv(std::uint64_t seed) : rng_(seed) { reset(); }

  void reset();
  StepResult step(int action);
  Matrix observe() const { return observe(state_); }
  const GridWorldState& state() const { return state_; }
  bool done() const { return done_; }
  /// Places the environment in a given state (symmetry tests drive coupled
  /// simulations through this plus step_with_draw).
  void set_state(const GridWorldState& state) {
    state_ = state;
    done_ = false;
  }

  /// The prey's random draw for one step, separated out so symmetry tests can
  /// couple the randomness across transformed simulations.
  struct PreyDraw {
    bool move = false;
    int dir = 1;  // compass action index in 1..4
  };
  PreyDraw draw_prey(Rng& rng) const;

  /// Deterministic transition given the prey draw; pure.
  static GridWorldState step_core(const GridWorldState& state, int action,
                                  const PreyDraw& draw);
  /// Step with an externally supplied prey draw.
  StepResult step_with_draw(int action, const PreyDraw& draw);
  static bool caught(const GridWorldState& state) {
    return state.agent_r == state.prey_r && state.agent_c == state.prey_c;
  }
  /// 21x21 binary image, agent block centered, prey block in relative
  /// coordinates.
  static Matrix observe(const GridWorldState& state);

 private:
  GridWorldState state_;
  Rng rng_;
  bool done_ = false;
};

/// Environment-level group transforms (the L_g and K_g^s of the tasks).
/// CartPole: C2 state negation with action swap. GridWorld: C4 clockwise
/// rotations with the compass actions rolled and the no-op fixed.
Vector cartpole_transform_state(int g, const Vector& obs);
int cartpole_transform_action(int g, int action);
GridWorldState gridworld_transform_state(int g, const GridWorldState& state);
int gridworld_transform_action(int g, int action);
int gridworld_transform_compass(int g, int compass_action);

/// ASCII rendering of a grid-world state (for --render-text).
std::string render_text(const GridWorldState& state);

}  // namespace equistruct
