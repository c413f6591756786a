#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbr/dataset.hpp"
#include "sbr/envs.hpp"
#include "sbr/rng.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace sbr;

namespace {

Trajectory make_traj(std::int64_t id, Source source, const std::vector<std::vector<double>>& states,
                     const std::vector<std::vector<double>>& actions) {
  Trajectory t;
  t.traj_id = id;
  t.source = source;
  t.states = Matrix(static_cast<Index>(states.size()), static_cast<Index>(states[0].size()));
  for (std::size_t r = 0; r < states.size(); ++r) {
    for (std::size_t c = 0; c < states[r].size(); ++c) {
      t.states(static_cast<Index>(r), static_cast<Index>(c)) = states[r][c];
    }
  }
  t.actions = Matrix(static_cast<Index>(actions.size()), static_cast<Index>(actions[0].size()));
  for (std::size_t r = 0; r < actions.size(); ++r) {
    for (std::size_t c = 0; c < actions[r].size(); ++c) {
      t.actions(static_cast<Index>(r), static_cast<Index>(c)) = actions[r][c];
    }
  }
  return t;
}

Dataset random_dataset(int trajs, Index max_len, Index state_dim, Index action_dim,
                       std::uint64_t seed, std::int64_t first_id = 0) {
  Rng rng(seed);
  Dataset d;
  for (int i = 0; i < trajs; ++i) {
    const Index len = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_len)));
    Trajectory t;
    t.traj_id = first_id + i;
    t.source = Source::Offline;
    t.states = Matrix(len + 1, state_dim);
    t.actions = Matrix(len, action_dim);
    for (Index r = 0; r < len + 1; ++r) {
      for (Index c = 0; c < state_dim; ++c) {
        t.states(r, c) = rng.normal();
      }
    }
    for (Index r = 0; r < len; ++r) {
      for (Index c = 0; c < action_dim; ++c) {
        t.actions(r, c) = rng.normal();
      }
    }
    d.add(std::move(t));
  }
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

const std::filesystem::path kTmp = std::filesystem::temp_directory_path() / "sbr_data_test";

}  // namespace

TEST_CASE("empty dataset round-trips through a header-only file") {
  std::filesystem::create_directories(kTmp);
  const auto path = kTmp / "empty.jsonl";
  save_dataset(Dataset{}, path);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded.empty());
  CHECK(loaded.state_dim() == -1);
}

TEST_CASE("single trajectory survives a round-trip field by field") {
  std::filesystem::create_directories(kTmp);
  Dataset d;
  d.add(make_traj(3, Source::Expert, {{0.5, 1.0}, {1.5, 1.25}, {2.5, 1.5}, {3.5, 1.75}},
                  {{1.0, 0.25}, {1.0, 0.25}, {1.0, 0.25}}));
  const auto path = kTmp / "one.jsonl";
  save_dataset(d, path);
  const Dataset loaded = load_dataset(path);
  REQUIRE(loaded.size() == 1);
  const Trajectory& t = loaded.trajectories()[0];
  CHECK(t.traj_id == 3);
  CHECK(t.source == Source::Expert);
  CHECK((t.states - d.trajectories()[0].states).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t.actions - d.trajectories()[0].actions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("re-serialization of 100 random trajectories is byte-identical") {
  std::filesystem::create_directories(kTmp);
  const Dataset d = random_dataset(100, 12, 3, 2, 8181);
  const auto p1 = kTmp / "r1.jsonl";
  const auto p2 = kTmp / "r2.jsonl";
  save_dataset(d, p1);
  save_dataset(load_dataset(p1), p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("load rejects malformed and inconsistent files") {
  std::filesystem::create_directories(kTmp);
  const auto path = kTmp / "bad.jsonl";
  SUBCASE("bad JSON names the line") {
    std::ofstream(path) << "{\"format\":\"sbr-traj-v1\"}\n{not json\n";
    try {
      load_dataset(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("missing header") {
    std::ofstream(path) << "{\"traj_id\":0}\n";
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("dimension mismatch across trajectories") {
    std::ofstream(path) << "{\"format\":\"sbr-traj-v1\"}\n"
                        << R"({"traj_id":0,"source":"offline","states":[[0,0],[1,1]],"actions":[[1]]})"
                        << "\n"
                        << R"({"traj_id":1,"source":"offline","states":[[0],[1]],"actions":[[1]]})"
                        << "\n";
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("state/action length mismatch") {
    std::ofstream(path) << "{\"format\":\"sbr-traj-v1\"}\n"
                        << R"({"traj_id":0,"source":"offline","states":[[0],[1],[2]],"actions":[[1],[1],[1]]})"
                        << "\n";
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
}

TEST_CASE("state id lookup is a bijection") {
  const Dataset d = random_dataset(5, 6, 2, 1, 99);
  const auto ids = d.all_state_ids();
  CHECK(static_cast<Index>(ids.size()) == d.state_count());
  std::set<StateId> unique(ids.begin(), ids.end());
  CHECK(unique.size() == ids.size());
  for (const auto& id : ids) {
    CHECK(d.state_at(id).size() == 2);
  }
  CHECK_THROWS_AS(d.state_at(StateId{0, 1000}), ContractError);
}

TEST_CASE("windows counts match the enumeration oracle") {
  SUBCASE("length 5, H=0 gives 5 windows") {
    Dataset d = random_dataset(1, 1, 2, 1, 5);
    // force exact length 5
    Dataset exact;
    Trajectory t = d.trajectories()[0];
    t.states = Matrix::Random(6, 2);
    t.actions = Matrix::Random(5, 1);
    exact.add(t);
    CHECK(windows(exact, 0).size() == 5);
    CHECK(windows(exact, 4).size() == 1);
    CHECK(windows(exact, 5).empty());
  }
  SUBCASE("random datasets for all horizons") {
    const Dataset d = random_dataset(8, 10, 2, 1, 321);
    for (Index h = 0; h <= 10; ++h) {
      // independent index enumeration
      std::size_t expected = 0;
      for (const auto& t : d.trajectories()) {
        for (Index s = 0; s + h < t.length(); ++s) {
          ++expected;
        }
      }
      CHECK(windows(d, h).size() == expected);
    }
  }
}

TEST_CASE("norm stats: single vector maps to zero, +/-1 stays put") {
  SUBCASE("single state vector normalizes to zeros") {
    Dataset d;
    d.add(make_traj(0, Source::Offline, {{2.0}, {2.0}}, {{0.0}}));
    const NormStats stats = compute_norm_stats({&d});
    CHECK(stats.normalize_state(Vector::Constant(1, 2.0)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("states -1,+1 give mean 0 std 1") {
    Dataset d;
    d.add(make_traj(0, Source::Offline, {{-1.0}, {1.0}}, {{0.5}}));
    const NormStats stats = compute_norm_stats({&d});
    CHECK(stats.state_mean(0) == doctest::Approx(0.0));
    CHECK(stats.state_std(0) == doctest::Approx(1.0));
    CHECK(stats.normalize_state(Vector::Constant(1, 1.0))(0) == doctest::Approx(1.0));
  }
  SUBCASE("round-trip within 1e-10 on a random dataset") {
    const Dataset d = random_dataset(10, 8, 3, 2, 777);
    const NormStats stats = compute_norm_stats({&d});
    double worst = 0.0;
    for (const auto& t : d.trajectories()) {
      const Matrix back = stats.denormalize_states(stats.normalize_states(t.states));
      worst = std::max(worst, (back - t.states).cwiseAbs().maxCoeff());
      const Matrix aback = stats.denormalize_actions(stats.normalize_actions(t.actions));
      worst = std::max(worst, (aback - t.actions).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("maze: zero action stays put, wall projection holds") {
  PointMazeSpec spec = builtin_layout("open");
  PointMazeEnv env(spec);
  env.reset(4);
  const Vector pos0 = env.state().obs;
  const StepResult r = env.step(Vector::Zero(2));
  CHECK((r.state.obs.head(2) - pos0.head(2)).cwiseAbs().maxCoeff() == 0.0);

  // drive hard into the left wall; x must stop just inside cell 1
  PointMazeEnv env2(spec);
  env2.reset(4);
  Vector left(2);
  left << -1.0, 0.0;
  for (int i = 0; i < 100; ++i) {
    env2.step(left);
  }
  CHECK(env2.state().obs(0) >= 1.0);
  CHECK(env2.state().obs(0) < 1.01);
}

TEST_CASE("maze: seeded trajectories are bit-identical") {
  PointMazeSpec spec = builtin_layout("umaze");
  spec.noise_dims = 3;
  Rng action_rng(9);
  std::vector<Vector> actions;
  for (int i = 0; i < 50; ++i) {
    Vector a(2);
    a << action_rng.uniform(-1, 1), action_rng.uniform(-1, 1);
    actions.push_back(a);
  }
  const auto run = [&]() {
    PointMazeEnv env(spec);
    env.reset(123);
    Matrix track(50, spec.obs_dim());
    for (int i = 0; i < 50; ++i) {
      track.row(i) = env.step(actions[static_cast<std::size_t>(i)]).state.obs.transpose();
    }
    return track;
  };
  CHECK((run() - run()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("maze: position always stays in free space under random actions") {
  for (const auto& name : builtin_layout_names()) {
    const PointMazeSpec spec = builtin_layout(name);
    PointMazeEnv env(spec);
    Rng rng(31 + fnv1a(name));
    for (int ep = 0; ep < 5; ++ep) {
      env.reset(rng.next_u64());
      for (int t = 0; t < spec.horizon; ++t) {
        Vector a(2);
        a << rng.uniform(-1, 1), rng.uniform(-1, 1);
        const StepResult r = env.step(a);
        REQUIRE(spec.is_free(r.state.obs(0), r.state.obs(1)));
        if (r.done) {
          break;
        }
      }
    }
  }
}

TEST_CASE("scripted expert succeeds from 100 seeds on every layout") {
  for (const auto& name : builtin_layout_names()) {
    const PointMazeSpec spec = builtin_layout(name);
    const WaypointController expert = scripted_expert(spec);
    const RolloutStats stats = run_rollouts(
        spec,
        [&expert](std::uint64_t) {
          return [&expert](const Vector& obs) { return expert.action(obs); };
        },
        100, spec.horizon, 0.99, 555);
    CHECK(stats.success_rate == doctest::Approx(1.0));
  }
}

TEST_CASE("expert in the open room closes distance monotonically") {
  PointMazeSpec spec = builtin_layout("open");
  spec.start = Eigen::Vector2d(1.5, 4.5);  // goal straight ahead along +x
  spec.start_radius = 0.0;
  const WaypointController expert = scripted_expert(spec);
  PointMazeEnv env(spec);
  EnvState s = env.reset(17);
  double dist = (Eigen::Vector2d(s.obs(0), s.obs(1)) - spec.goal).norm();
  for (int t = 0; t < spec.horizon; ++t) {
    const StepResult r = env.step(expert.action(s.obs));
    const double next_dist = (Eigen::Vector2d(r.state.obs(0), r.state.obs(1)) - spec.goal).norm();
    CHECK(next_dist <= dist + 1e-12);
    dist = next_dist;
    s = r.state;
    if (r.done) {
      break;
    }
  }
  CHECK(dist <= spec.tol);
}

TEST_CASE("generate_dataset: counts, sources, and expert termination") {
  const PointMazeSpec spec = builtin_layout("umaze");
  const auto [expert_data, offline_data] =
      generate_dataset(spec, {{GeneratorKind::Expert, 5, 7, {}}});
  CHECK(expert_data.size() == 5);
  CHECK(offline_data.empty());
  for (const auto& t : expert_data.trajectories()) {
    CHECK(t.source == Source::Expert);
    const Vector last = t.states.row(t.states.rows() - 1).transpose();
    CHECK((Eigen::Vector2d(last(0), last(1)) - spec.goal).norm() <= spec.tol);
  }
}

TEST_CASE("generate_dataset: wrong-goal shares an expert-like prefix") {
  // Alternate goal at the top of the goal arm: routes from the far arm and
  // the top corridor coincide with the true-goal route until the final
  // descent, then diverge.
  PointMazeSpec spec = builtin_layout("umaze");
  const Eigen::Vector2d alt(1.5, 1.5);
  const auto [expert_data, offline_data] =
      generate_dataset(spec, {{GeneratorKind::WrongGoal, 20, 11, alt}});
  REQUIRE(offline_data.size() == 20);

  const WaypointController expert = scripted_expert(spec);
  const Index prefix_len = 5;
  int with_close_prefix = 0;
  for (const auto& t : offline_data.trajectories()) {
    if (t.length() < prefix_len) {
      continue;
    }
    // Replay the true expert from the same start; while the two BFS routes
    // coincide the positions must stay within dt * L of each other.
    Vector pos = t.states.row(0).transpose();
    double worst = 0.0;
    for (Index k = 0; k < prefix_len; ++k) {
      const Vector a = expert.action(pos);
      pos = Vector(2);
      // deterministic kinematics away from walls
      pos << t.states(k, 0), t.states(k, 1);
      pos(0) += spec.dt * a(0);
      pos(1) += spec.dt * a(1);
      worst = std::max(worst, (pos.head(2) - t.states.row(k + 1).transpose().head(2)).norm());
    }
    if (worst <= spec.dt * static_cast<double>(prefix_len)) {
      ++with_close_prefix;
    }
  }
  CHECK(with_close_prefix >= 6);  // a solid fraction of starts share the route
}

TEST_CASE("random walks almost never reach the goal") {
  const PointMazeSpec spec = builtin_layout("umaze");
  const auto [expert_data, offline_data] =
      generate_dataset(spec, {{GeneratorKind::RandomWalk, 100, 21, {}}});
  int successes = 0;
  for (const auto& t : offline_data.trajectories()) {
    const Vector last = t.states.row(t.states.rows() - 1).transpose();
    if ((Eigen::Vector2d(last(0), last(1)) - spec.goal).norm() <= spec.tol) {
      ++successes;
    }
  }
  CHECK(successes < 5);
}

TEST_CASE("noise dimensions carry no information about goal distance") {
  PointMazeSpec spec = builtin_layout("umaze");
  spec.noise_dims = 4;
  const auto [expert_data, offline_data] =
      generate_dataset(spec, {{GeneratorKind::RandomWalk, 200, 3, {}}});
  // One state per trajectory so the samples are independent; pooling every
  // step of a random walk would measure autocorrelation, not information.
  std::vector<double> dists;
  std::vector<std::vector<double>> noise(4);
  for (const auto& t : offline_data.trajectories()) {
    const Index r = t.states.rows() - 1;
    dists.push_back((Eigen::Vector2d(t.states(r, 0), t.states(r, 1)) - spec.goal).norm());
    for (int d = 0; d < 4; ++d) {
      noise[static_cast<std::size_t>(d)].push_back(t.states(r, 4 + d));
    }
  }
  const auto corr = [&](const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i] / n;
      mb += b[i] / n;
    }
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      cov += (a[i] - ma) * (b[i] - mb);
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb + 1e-12);
  };
  for (int d = 0; d < 4; ++d) {
    CHECK(std::abs(corr(noise[static_cast<std::size_t>(d)], dists)) < 0.2);
  }
}

TEST_CASE("reference returns: expert beats random, reruns identical") {
  for (const auto& name : builtin_layout_names()) {
    const PointMazeSpec spec = builtin_layout(name);
    const ReferenceReturns a = reference_returns(spec, 30, 99);
    const ReferenceReturns b = reference_returns(spec, 30, 99);
    CHECK(a.expert_return > a.random_return);
    CHECK(a.expert_return == b.expert_return);
    CHECK(a.random_return == b.random_return);
  }
}

TEST_CASE("layout files round-trip") {
  std::filesystem::create_directories(kTmp);
  const PointMazeSpec spec = builtin_layout("umaze");
  const auto path = kTmp / "layout.json";
  save_layout_file(spec, path);
  const PointMazeSpec loaded = load_layout_file(path);
  CHECK(loaded.grid == spec.grid);
  CHECK(loaded.goal == spec.goal);
  CHECK(loaded.horizon == spec.horizon);
  CHECK(loaded.start_radius == spec.start_radius);
}
