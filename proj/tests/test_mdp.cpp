// Copyright 2026 The MCEP Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mcep/mdp.hpp"

namespace mcep::mdp {
namespace {

GridMapSpec two_cell(double slip) {
  GridMapSpec spec;
  spec.rows = {"SG"};
  spec.slip_prob = slip;
  return spec;
}

TEST(Maze, DefaultMapHasFiveActionsAndGoalOnlyRewards) {
  const Maze m = build_maze(default_maze_spec());
  EXPECT_EQ(m.mdp.n_actions(), 5u);
  EXPECT_EQ(m.mdp.n_states(), m.cells.size());
  EXPECT_TRUE(m.mdp.terminal(m.goal));
  for (std::size_t s = 0; s < m.mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < 5; ++a) {
      const double enter = s == m.goal ? 0.0 : m.mdp.transition(s, a, m.goal);
      EXPECT_DOUBLE_EQ(m.mdp.reward(s, a), 10.0 * enter) << s << "," << a;
    }
  }
  // Start lower-left, goal upper-left.
  EXPECT_EQ(m.cells[m.start].row, 5);
  EXPECT_EQ(m.cells[m.start].col, 0);
  EXPECT_EQ(m.cells[m.goal].row, 0);
  EXPECT_EQ(m.cells[m.goal].col, 0);
}

TEST(Maze, RowsAreStochasticAndTerminalsSelfLoop) {
  const Maze m = build_maze(default_maze_spec());
  for (std::size_t s = 0; s < m.mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < 5; ++a) {
      double sum = 0.0;
      for (double p : m.mdp.transition_row(s, a)) sum += p;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
  for (std::size_t a = 0; a < 5; ++a) {
    EXPECT_EQ(m.mdp.transition(m.goal, a, m.goal), 1.0);
    EXPECT_EQ(m.mdp.reward(m.goal, a), 0.0);
  }
  EXPECT_NO_THROW(m.mdp.validate());
}

TEST(Maze, DeterministicMoveIntoGoal) {
  const Maze m = build_maze(two_cell(0.0));
  EXPECT_EQ(m.mdp.transition(m.start, kRight, m.goal), 1.0);
  EXPECT_EQ(m.mdp.reward(m.start, kRight), 10.0);
}

TEST(Maze, SlipSpreadsOverAllFiveActions) {
  const Maze m = build_maze(two_cell(0.25));
  EXPECT_NEAR(m.mdp.transition(m.start, kRight, m.goal), 0.75 + 0.25 / 5.0, 1e-15);
  EXPECT_NEAR(m.mdp.transition(m.start, kRight, m.start), 0.2, 1e-15);
}

TEST(Maze, WallsBlockMovement) {
  const Maze m = build_maze(default_maze_spec());
  // (2,0) moving up hits the barrier row.
  const long s = m.state_at(2, 0);
  ASSERT_GE(s, 0);
  GridMapSpec spec = default_maze_spec();
  spec.slip_prob = 0.0;
  const Maze d = build_maze(spec);
  EXPECT_EQ(d.mdp.transition(static_cast<std::size_t>(s), kUp, static_cast<std::size_t>(s)), 1.0);
  EXPECT_EQ(m.state_at(1, 0), -1);
}

TEST(Maze, BuildIsPure) {
  const Maze a = build_maze(default_maze_spec(), 0.9);
  const Maze b = build_maze(default_maze_spec(), 0.9);
  EXPECT_TRUE(a.mdp == b.mdp);
}

TEST(Maze, MalformedMapsNameTheRow) {
  GridMapSpec ragged;
  ragged.rows = {"S..", "..", "..G"};
  try {
    ragged.validate();
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  GridMapSpec no_goal;
  no_goal.rows = {"S.."};
  EXPECT_THROW(no_goal.validate(), ValidationError);
  GridMapSpec two_starts;
  two_starts.rows = {"SSG"};
  EXPECT_THROW(two_starts.validate(), ValidationError);
  GridMapSpec bad_char;
  bad_char.rows = {"S.x", "..G"};
  try {
    bad_char.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos);
  }
}

TEST(Maze, ParsesMapFiles) {
  const auto path = std::filesystem::temp_directory_path() / "mcep_map_test.txt";
  {
    std::ofstream f(path);
    f << "G..\r\n#.#\r\n\nS..\n";
  }
  const GridMapSpec spec = load_grid_map(path.string());
  ASSERT_EQ(spec.rows.size(), 3u);
  EXPECT_EQ(spec.rows[1], "#.#");
  std::filesystem::remove(path);
  EXPECT_THROW(load_grid_map("/nonexistent/map.txt"), DataError);
}

TEST(TabularStep, OneHotRowIsDeterministic) {
  TabularMDP m(3, 1, 0.9);
  m.transition(0, 0, 2) = 1.0;
  m.transition(1, 0, 1) = 1.0;
  m.transition(2, 0, 2) = 1.0;
  m.set_terminal(2, true);
  m.reward(0, 0) = 1.5;
  m.start_dist()[0] = 1.0;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto out = tabular_step(m, 0, 0, rng);
    EXPECT_EQ(out.next_state, 2u);
    EXPECT_EQ(out.reward, 1.5);
    EXPECT_TRUE(out.done);
  }
  EXPECT_THROW(tabular_step(m, 2, 0, rng), ContractViolation);
  EXPECT_THROW(tabular_step(m, 0, 1, rng), ContractViolation);
}

TEST(TabularStep, SameStreamSameOutcome) {
  const Maze m = build_maze(default_maze_spec());
  Rng a(42), b(42);
  for (int i = 0; i < 200; ++i) {
    const auto x = tabular_step(m.mdp, m.start, i % 5, a);
    const auto y = tabular_step(m.mdp, m.start, i % 5, b);
    EXPECT_EQ(x.next_state, y.next_state);
    EXPECT_EQ(x.reward, y.reward);
  }
}

TEST(TabularStep, EmpiricalFrequenciesMatchRow) {
  TabularMDP m(2, 1, 0.9);
  m.transition(0, 0, 0) = 0.8;
  m.transition(0, 0, 1) = 0.2;
  m.transition(1, 0, 1) = 1.0;
  m.start_dist()[0] = 1.0;
  Rng rng(7);
  const int n = 100000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) zeros += tabular_step(m, 0, 0, rng).next_state == 0;
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.8, 0.01);
}

TEST(TabularMdp, ValidateCatchesBadRowsAndDiscounts) {
  TabularMDP m(1, 1, 0.5);
  m.start_dist()[0] = 1.0;
  m.transition(0, 0, 0) = 0.5;
  EXPECT_THROW(m.validate(), ValidationError);
  EXPECT_THROW(TabularMDP(1, 1, 1.0), ValidationError);
}

TEST(PointMass, ZeroActionAtRestStaysPut) {
  PointMassParams p;
  PointMassState s;
  s.position = {0.3, -0.4};
  const double a[2] = {0.0, 0.0};
  const auto out = pointmass_step(p, s, a);
  EXPECT_EQ(out.next.position, s.position);
  EXPECT_DOUBLE_EQ(out.reward, -std::hypot(0.3 - 1.0, -0.4 - 1.0));
}

TEST(PointMass, AtGoalTerminates) {
  PointMassParams p;
  PointMassState s;
  s.position = p.goal;
  const double a[2] = {0.0, 0.0};
  EXPECT_TRUE(pointmass_step(p, s, a).reached_goal);
}

TEST(PointMass, HandEvaluatedStep) {
  PointMassParams p;
  p.goal = {1.0, 0.0};
  const double a[2] = {1.0, 0.0};
  const auto out = pointmass_step(p, PointMassState{}, a);
  EXPECT_NEAR(out.next.position[0], 0.01, 1e-15);
  EXPECT_EQ(out.next.position[1], 0.0);
  EXPECT_NEAR(out.next.velocity[0], 0.1, 1e-15);
  EXPECT_NEAR(out.reward, -0.99 - 0.01, 1e-12);
}

TEST(PointMass, ClipsActionsVelocitiesAndPositions) {
  PointMassParams p;
  PointMassState s;
  s.position = {1.995, 0.0};
  s.velocity = {0.99, 0.0};
  const double a[2] = {5.0, 0.0};
  const auto out = pointmass_step(p, s, a);
  EXPECT_EQ(out.next.velocity[0], 1.0);
  EXPECT_EQ(out.next.position[0], p.arena_halfwidth);
  // Penalty uses the clipped action.
  EXPECT_NEAR(out.reward, -std::hypot(2.0 - 1.0, 0.0 - 1.0) - 0.01, 1e-12);
}

TEST(PointMass, RejectsNonFiniteActions) {
  const double a[2] = {std::nan(""), 0.0};
  EXPECT_THROW(pointmass_step(PointMassParams{}, PointMassState{}, a), ValidationError);
}

TEST(PointMass, DynamicsArePure) {
  PointMassParams p;
  PointMassState s;
  s.position = {-1.2, 0.7};
  s.velocity = {0.1, -0.3};
  const double a[2] = {0.4, -0.9};
  const auto x = pointmass_step(p, s, a);
  const auto y = pointmass_step(p, s, a);
  EXPECT_EQ(x.next, y.next);
  EXPECT_EQ(x.reward, y.reward);
}

TEST(PointMass, EpisodeEndsAtHorizonThroughEnv) {
  PointMassParams p;
  p.horizon = 7;
  PointMassEnv env(p);
  EXPECT_EQ(env.horizon(), 7);
  Rng rng(1);
  const auto obs = env.reset(rng);
  ASSERT_EQ(obs.size(), 4u);
  EXPECT_GE(obs[0], p.start_low);
  EXPECT_LE(obs[0], p.start_high);
  EXPECT_EQ(obs[2], 0.0);
}

TEST(Rng, SplitStreamsAreIndependentOfParentUse) {
  Rng a(3);
  const Rng child_before = a.split(1);
  a.uniform();
  const Rng child_after = a.split(1);
  Rng x = child_before, y = child_after;
  EXPECT_EQ(x.next_u64(), y.next_u64());
  Rng z = Rng(3).split(2);
  Rng w = Rng(3).split(1);
  EXPECT_NE(z.next_u64(), w.next_u64());
}

}  // namespace
}  // namespace mcep::mdp
