#include "equistruct/envs.hpp"

#include <stdexcept>

#include "doctest.h"

using namespace equistruct;

TEST_CASE("cartpole dynamics match the reference implementation") {
  // From rest, pushing right: exact rationals of the reference constants
  // (tau 0.02, F 10, m_c 1.0, m_p 0.1, l 0.5, g 9.8, Euler).
  CartPoleState s{0, 0, 0, 0, 0};
  CartPoleState next = cartpole_dynamics(s, 1);
  CHECK(next.x == 0.0);
  CHECK(next.theta == 0.0);
  CHECK(next.x_dot == doctest::Approx(0.1951219512195122).epsilon(1e-12));
  CHECK(next.theta_dot == doctest::Approx(-0.29268292682926833).epsilon(1e-12));
  CHECK(next.steps == 1);

  CartPoleState left = cartpole_dynamics(s, 0);
  CHECK(left.x_dot == doctest::Approx(-0.1951219512195122).epsilon(1e-12));
}

TEST_CASE("cartpole mirror property is exact") {
  Rng rng(1);
  CartPoleState s{0.013, -0.041, 0.02, 0.007, 0};
  CartPoleState m{-0.013, 0.041, -0.02, -0.007, 0};
  for (int t = 0; t < 200; ++t) {
    int a = rng.below(2);
    s = cartpole_dynamics(s, a);
    m = cartpole_dynamics(m, 1 - a);
    CHECK(s.x == -m.x);
    CHECK(s.x_dot == -m.x_dot);
    CHECK(s.theta == -m.theta);
    CHECK(s.theta_dot == -m.theta_dot);
  }
}

TEST_CASE("cartpole termination thresholds") {
  CartPoleParams p;
  CartPoleState ok{0, 0, 12.0 * std::numbers::pi / 180.0 - 1e-9, 0, 0};
  CHECK_FALSE(cartpole_failed(ok, p));
  CartPoleState tilted{0, 0, 12.0 * std::numbers::pi / 180.0 + 1e-9, 0, 0};
  CHECK(cartpole_failed(tilted, p));
  CartPoleState off{2.41, 0, 0, 0, 0};
  CHECK(cartpole_failed(off, p));
}

TEST_CASE("cartpole episode mechanics") {
  CartPoleEnv env(3);
  CHECK(env.observe().size() == 4);
  CHECK(std::abs(env.state().x) <= 0.05);
  CHECK(std::abs(env.state().theta_dot) <= 0.05);
  StepResult r = env.step(1);
  CHECK(r.reward == 1.0);

  // Alternating pushes keep the pole up long enough to hit the 500 cap.
  CartPoleEnv capped(11);
  int len = 0;
  while (true) {
    int a = capped.state().theta > 0 ? 1 : 0;
    StepResult step = capped.step(a);
    ++len;
    if (step.done) break;
  }
  CHECK(len <= 500);
  CHECK_THROWS_AS(capped.step(0), std::logic_error);
}

TEST_CASE("gridworld torus moves wrap around") {
  GridWorldState s{0, 6, 3, 3, 0};
  GridWorldEnv::PreyDraw stay{false, 1};
  GridWorldState right = GridWorldEnv::step_core(s, 2, stay);
  CHECK(right.agent_c == 0);  // column 6 moving right wraps to 0
  GridWorldState up = GridWorldEnv::step_core(s, 1, stay);
  CHECK(up.agent_r == 6);
  GridWorldState noop = GridWorldEnv::step_core(s, 0, stay);
  CHECK(noop.agent_r == 0);
  CHECK(noop.agent_c == 6);
  CHECK(noop.steps == 1);
}

TEST_CASE("gridworld rewards: +1 on catch, -0.1 otherwise") {
  GridWorldEnv env(5);
  GridWorldState s{2, 2, 2, 3, 0};
  env.set_state(s);
  StepResult caught = env.step_with_draw(2, {false, 1});  // move onto the prey
  CHECK(caught.reward == 1.0);
  CHECK(caught.done);

  env.set_state(s);
  StepResult missed = env.step_with_draw(4, {false, 1});
  CHECK(missed.reward == doctest::Approx(-0.1));
  CHECK_FALSE(missed.done);

  // The prey stepping onto the agent counts as a catch too.
  env.set_state({2, 2, 2, 3, 0});
  StepResult walked_into = env.step_with_draw(0, {true, 4});  // prey moves left
  CHECK(walked_into.reward == 1.0);
  CHECK(walked_into.done);
}

TEST_CASE("gridworld episodes cap at 100 steps") {
  GridWorldEnv env(9);
  int longest = 0;
  Rng rng(10);
  for (int episode = 0; episode < 10; ++episode) {
    env.reset();
    CHECK_FALSE(GridWorldEnv::caught(env.state()));
    int len = 0;
    while (true) {
      StepResult r = env.step(0);  // idle agent; rely on the prey wandering
      ++len;
      if (r.done) break;
    }
    longest = std::max(longest, len);
    CHECK(len <= 100);
  }
  CHECK(longest == 100);  // an idle agent almost always runs out the clock
}

TEST_CASE("prey moves with probability 0.15") {
  GridWorldEnv env(21);
  Rng rng(22);
  int moves = 0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i)
    if (env.draw_prey(rng).move) ++moves;
  CHECK(std::abs(double(moves) / trials - 0.15) <= 0.01);
}

TEST_CASE("observation renders 3x3 blocks in relative coordinates") {
  GridWorldState s{1, 1, 1, 2, 0};  // prey one cell east of the agent
  Matrix obs = GridWorldEnv::observe(s);
  CHECK(obs.rows() == 21);
  CHECK(obs.sum() == doctest::Approx(18.0));  // two 3x3 blocks
  // Agent block at the center.
  for (int y = 9; y <= 11; ++y)
    for (int x = 9; x <= 11; ++x) CHECK(obs(y, x) == 1.0);
  // Prey block three pixels to the right.
  for (int y = 9; y <= 11; ++y)
    for (int x = 12; x <= 14; ++x) CHECK(obs(y, x) == 1.0);

  GridWorldState on_top{3, 3, 3, 3, 0};
  CHECK(GridWorldEnv::observe(on_top).sum() == doctest::Approx(9.0));

  // Pure function of state.
  CHECK((GridWorldEnv::observe(s) - GridWorldEnv::observe(s)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("observations rotate with the world") {
  GridWorldState s{2, 5, 6, 1, 0};
  for (int g = 0; g < 4; ++g) {
    Matrix direct = GridWorldEnv::observe(gridworld_transform_state(g, s));
    Matrix rotated = rot90_cw(GridWorldEnv::observe(s), g);
    CHECK((direct - rotated).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("environment transforms compose as C2 / C4") {
  Vector obs(4);
  obs << 0.1, -0.2, 0.3, -0.4;
  CHECK((cartpole_transform_state(1, cartpole_transform_state(1, obs)) - obs)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(cartpole_transform_action(1, 0) == 1);

  // g2 = g1 o g1 sends up to down.
  CHECK(gridworld_transform_action(2, 1) == 3);
  CHECK(gridworld_transform_action(1, 1) == 2);  // up -> right under one turn
  CHECK(gridworld_transform_action(1, 0) == 0);
  GridWorldState s{1, 2, 5, 0, 3};
  GridWorldState once = gridworld_transform_state(1, s);
  GridWorldState quadruple =
      gridworld_transform_state(1, gridworld_transform_state(1,
          gridworld_transform_state(1, once)));
  CHECK(quadruple.agent_r == s.agent_r);
  CHECK(quadruple.agent_c == s.agent_c);
  CHECK(quadruple.prey_r == s.prey_r);
  CHECK(quadruple.prey_c == s.prey_c);
}

TEST_CASE("gridworld transitions are equivariant under coupled draws") {
  // For every state-action-draw combination over a sample of states:
  // stepping the rotated world with the rotated action and rotated prey
  // draw equals rotating the stepped world.
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    GridWorldState s{rng.below(7), rng.below(7), rng.below(7), rng.below(7), 0};
    for (int g = 0; g < 4; ++g)
      for (int a = 0; a < 5; ++a)
        for (int move = 0; move < 2; ++move)
          for (int dir = 1; dir <= 4; ++dir) {
            GridWorldEnv::PreyDraw draw{move == 1, dir};
            GridWorldEnv::PreyDraw rotated_draw{move == 1,
                                                gridworld_transform_compass(g, dir)};
            GridWorldState lhs = GridWorldEnv::step_core(
                gridworld_transform_state(g, s), gridworld_transform_action(g, a),
                rotated_draw);
            GridWorldState rhs =
                gridworld_transform_state(g, GridWorldEnv::step_core(s, a, draw));
            CHECK(lhs.agent_r == rhs.agent_r);
            CHECK(lhs.agent_c == rhs.agent_c);
            CHECK(lhs.prey_r == rhs.prey_r);
            CHECK(lhs.prey_c == rhs.prey_c);
            CHECK(GridWorldEnv::caught(lhs) == GridWorldEnv::caught(rhs));
          }
  }
}

TEST_CASE("text rendering marks agent and prey") {
  GridWorldState s{0, 0, 0, 1, 0};
  std::string text = render_text(s);
  CHECK(text.substr(0, 2) == "AP");
  GridWorldState overlap{0, 0, 0, 0, 0};
  CHECK(render_text(overlap)[0] == 'X');
}
