#include "equistruct/envs.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace equistruct {

CartPoleState cartpole_dynamics(const CartPoleState& state, int action,
                                const CartPoleParams& p) {
  const double force = action == 1 ? p.force_mag : -p.force_mag;
  const double cos_t = std::cos(state.theta);
  const double sin_t = std::sin(state.theta);
  const double temp =
      (force + p.pole_mass_length() * state.theta_dot * state.theta_dot * sin_t) /
      p.total_mass();
  const double theta_acc =
      (p.gravity * sin_t - cos_t * temp) /
      (p.half_length * (4.0 / 3.0 - p.mass_pole * cos_t * cos_t / p.total_mass()));
  const double x_acc = temp - p.pole_mass_length() * theta_acc * cos_t / p.total_mass();

  CartPoleState next = state;
  next.x = state.x + p.tau * state.x_dot;
  next.x_dot = state.x_dot + p.tau * x_acc;
  next.theta = state.theta + p.tau * state.theta_dot;
  next.theta_dot = state.theta_dot + p.tau * theta_acc;
  next.steps = state.steps + 1;
  return next;
}

bool cartpole_failed(const CartPoleState& state, const CartPoleParams& p) {
  return std::abs(state.x) > p.x_threshold || std::abs(state.theta) > p.theta_threshold;
}

void CartPoleEnv::reset() {
  state_.x = -0.05 + 0.1 * rng_.uniform();
  state_.x_dot = -0.05 + 0.1 * rng_.uniform();
  state_.theta = -0.05 + 0.1 * rng_.uniform();
  state_.theta_dot = -0.05 + 0.1 * rng_.uniform();
  state_.steps = 0;
  done_ = false;
}

StepResult CartPoleEnv::step(int action) {
  if (done_) throw std::logic_error("CartPoleEnv::step called on a finished episode");
  if (action < 0 || action >= kActions) throw std::invalid_argument("bad action");
  state_ = cartpole_dynamics(state_, action, params_);
  done_ = cartpole_failed(state_, params_) || state_.steps >= params_.max_steps;
  return {1.0, done_};
}

Vector CartPoleEnv::observe() const {
  Vector obs(4);
  obs << state_.x, state_.x_dot, state_.theta, state_.theta_dot;
  return obs;
}

void GridWorldEnv::reset() {
  state_.agent_r = rng_.below(kSize);
  state_.agent_c = rng_.below(kSize);
  do {
    state_.prey_r = rng_.below(kSize);
    state_.prey_c = rng_.below(kSize);
  } while (caught(state_));
  state_.steps = 0;
  done_ = false;
}

GridWorldEnv::PreyDraw GridWorldEnv::draw_prey(Rng& rng) const {
  // Both values are always drawn so coupled simulations consume the stream
  // identically whether or not the prey moves.
  PreyDraw draw;
  draw.move = rng.uniform() < kPreyMoveProb;
  draw.dir = 1 + rng.below(4);
  return draw;
}

namespace {

constexpr int kRowDelta[5] = {0, -1, 0, 1, 0};
constexpr int kColDelta[5] = {0, 0, 1, 0, -1};

int wrap(int v) { return ((v % GridWorldEnv::kSize) + GridWorldEnv::kSize) % GridWorldEnv::kSize; }

}  // namespace

GridWorldState GridWorldEnv::step_core(const GridWorldState& state, int action,
                                       const PreyDraw& draw) {
  if (action < 0 || action >= kActions) throw std::invalid_argument("bad action");
  GridWorldState next = state;
  next.agent_r = wrap(state.agent_r + kRowDelta[action]);
  next.agent_c = wrap(state.agent_c + kColDelta[action]);
  if (draw.move) {
    next.prey_r = wrap(state.prey_r + kRowDelta[draw.dir]);
    next.prey_c = wrap(state.prey_c + kColDelta[draw.dir]);
  }
  next.steps = state.steps + 1;
  return next;
}

StepResult GridWorldEnv::step_with_draw(int action, const PreyDraw& draw) {
  if (done_) throw std::logic_error("GridWorldEnv::step called on a finished episode");
  state_ = step_core(state_, action, draw);
  StepResult result;
  if (caught(state_)) {
    result.reward = 1.0;
    result.done = true;
  } else {
    result.reward = -0.1;
    result.done = state_.steps >= kMaxSteps;
  }
  done_ = result.done;
  return result;
}

StepResult GridWorldEnv::step(int action) {
  return step_with_draw(action, draw_prey(rng_));
}

Matrix GridWorldEnv::observe(const GridWorldState& state) {
  Matrix obs = Matrix::Zero(kObsSize, kObsSize);
  auto paint = [&obs](int cell_r, int cell_c) {
    for (int y = 0; y < kScale; ++y)
      for (int x = 0; x < kScale; ++x)
        obs(cell_r * kScale + y, cell_c * kScale + x) = 1.0;
  };
  const int center = kSize / 2;
  paint(center, center);  // agent
  int dr = wrap(state.prey_r - state.agent_r + center) - center;
  int dc = wrap(state.prey_c - state.agent_c + center) - center;
  paint(center + dr, center + dc);
  return obs;
}

Vector cartpole_transform_state(int g, const Vector& obs) {
  return g % 2 == 0 ? obs : Vector(-obs);
}

int cartpole_transform_action(int g, int action) {
  return g % 2 == 0 ? action : 1 - action;
}

GridWorldState gridworld_transform_state(int g, const GridWorldState& state) {
  GridWorldState out = state;
  for (int k = 0; k < ((g % 4) + 4) % 4; ++k) {
    // Clockwise quarter turn of the torus: (r, c) -> (c, -r mod size).
    GridWorldState prev = out;
    out.agent_r = prev.agent_c;
    out.agent_c = wrap(-prev.agent_r);
    out.prey_r = prev.prey_c;
    out.prey_c = wrap(-prev.prey_r);
  }
  return out;
}

int gridworld_transform_compass(int g, int compass_action) {
  return 1 + (compass_action - 1 + g) % 4;
}

int gridworld_transform_action(int g, int action) {
  g = ((g % 4) + 4) % 4;
  return action == 0 ? 0 : gridworld_transform_compass(g, action);
}

std::string render_text(const GridWorldState& state) {
  std::ostringstream out;
  for (int r = 0; r < GridWorldEnv::kSize; ++r) {
    for (int c = 0; c < GridWorldEnv::kSize; ++c) {
      char ch = '.';
      bool agent = r == state.agent_r && c == state.agent_c;
      bool prey = r == state.prey_r && c == state.prey_c;
      if (agent && prey)
        ch = 'X';
      else if (agent)
        ch = 'A';
      else if (prey)
        ch = 'P';
      out << ch;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace equistruct
