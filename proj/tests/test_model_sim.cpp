#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "sbr/envs.hpp"
#include "sbr/similarity.hpp"
#include "sbr/world_model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace sbr;
using testutil::fd_check_wm;
using testutil::random_batch;
using testutil::tiny_wm;

namespace {

const std::filesystem::path kTmp = std::filesystem::temp_directory_path() / "sbr_wm_test";

// Hand-unrolled loss on a single window using only scalar-loop forwards.
double oracle_wm_loss(const WorldModel& wm, const Matrix& states, const Matrix& actions) {
  const WmConfig& cfg = wm.config();
  const auto to_vec = [](const Matrix& m, Index row) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) {
      v[static_cast<std::size_t>(c)] = m(row, c);
    }
    return v;
  };
  const auto enc = [&](const std::vector<double>& s) {
    return oracle::mlp_forward(wm.encoder_spec(), wm.encoder_params(), s);
  };
  const auto dyn = [&](std::vector<double> z, const std::vector<double>& a) {
    z.insert(z.end(), a.begin(), a.end());
    return oracle::mlp_forward(wm.dynamics_spec(), wm.dynamics_params(), z);
  };
  const auto dec = [&](const std::vector<double>& z) {
    return oracle::mlp_forward(wm.decoder_spec(), wm.decoder_params(), z);
  };
  const auto sq_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return acc;
  };

  double loss = 0.0;
  double weight = 1.0;
  std::vector<double> z_roll = enc(to_vec(states, 0));
  for (int t = 0; t <= cfg.horizon; ++t) {
    const std::vector<double> s_t = to_vec(states, t);
    const std::vector<double> s_next = to_vec(states, t + 1);
    const std::vector<double> z_base =
        (cfg.rollout_mode == RolloutMode::TeacherForced && t > 0) ? enc(s_t) : z_roll;
    const std::vector<double> z_pred = dyn(z_base, to_vec(actions, t));
    const std::vector<double> target = enc(s_next);
    std::vector<double> recon_in = z_base;
    if (cfg.rollout_mode == RolloutMode::OpenLoop && cfg.recon_from_encoder && t > 0) {
      recon_in = enc(s_t);
    }
    loss += weight * (sq_diff(z_pred, target) + sq_diff(dec(recon_in), s_t));
    weight *= cfg.decay;
    if (cfg.rollout_mode == RolloutMode::OpenLoop) {
      z_roll = z_pred;
    }
  }
  return loss;
}

std::pair<Dataset, Dataset> maze_data(int experts, int offline, std::uint64_t seed) {
  const PointMazeSpec spec = builtin_layout("umaze");
  return generate_dataset(
      spec, {{GeneratorKind::Expert, experts, seed, {}},
             {GeneratorKind::RandomWalk, offline / 2, seed + 1, {}},
             {GeneratorKind::EarlyFailure, offline - offline / 2, seed + 2, {}}});
}

}  // namespace

TEST_CASE("wm_loss: H=0 boundary is one prediction plus one reconstruction term") {
  WorldModel wm = tiny_wm(2, 1, 2, /*horizon=*/0, RolloutMode::OpenLoop, 4);
  Matrix states(2, 2);
  states << 0.3, -0.1, 0.4, 0.2;
  Matrix actions(1, 1);
  actions << 0.5;
  const double got = wm_loss(wm, states, actions);

  const Vector z0 = wm.encode(states.row(0).transpose());
  const Vector zhat = wm.predict_latent(z0, actions.row(0).transpose());
  const Vector z1 = wm.encode(states.row(1).transpose());
  const Vector recon = wm.decode(z0);
  const double expected = (zhat - z1).squaredNorm() +
                          (states.row(0).transpose() - recon).squaredNorm();
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("wm_loss: identity nets and perfect dynamics give exactly zero") {
  // enc = dec = identity (single linear layer), dynamics picks the latent
  // block out of [z a]; on a constant trajectory every term vanishes.
  WmConfig cfg;
  cfg.latent_dim = 2;
  cfg.horizon = 2;
  cfg.enc_hidden = {};
  cfg.dyn_hidden = {};
  cfg.dec_hidden = {};
  WorldModel wm = WorldModel::make(cfg, 2, 1, NormStats::identity(2, 1));
  wm.encoder_params() = testutil::fixed_linear(Matrix::Identity(2, 2));
  wm.decoder_params() = testutil::fixed_linear(Matrix::Identity(2, 2));
  Matrix dyn_w = Matrix::Zero(2, 3);
  dyn_w.leftCols(2) = Matrix::Identity(2, 2);
  wm.dynamics_params() = testutil::fixed_linear(dyn_w);

  Matrix states(4, 2);
  states << 0.7, -0.3, 0.7, -0.3, 0.7, -0.3, 0.7, -0.3;
  const Matrix actions = Matrix::Zero(3, 1);
  CHECK(wm_loss(wm, states, actions) == 0.0);
}

TEST_CASE("wm_loss matches the hand-unrolled oracle, H=2 lambda=0.9") {
  for (const auto mode : {RolloutMode::OpenLoop, RolloutMode::TeacherForced}) {
    WorldModel wm = tiny_wm(3, 2, 4, /*horizon=*/2, mode, 99);
    Rng rng(5);
    Matrix states(4, 3), actions(3, 2);
    for (Index r = 0; r < 4; ++r) {
      for (Index c = 0; c < 3; ++c) {
        states(r, c) = rng.normal();
      }
    }
    for (Index r = 0; r < 3; ++r) {
      for (Index c = 0; c < 2; ++c) {
        actions(r, c) = rng.normal();
      }
    }
    const double expected = oracle_wm_loss(wm, states, actions);
    CHECK(wm_loss(wm, states, actions) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("wm_loss is non-negative for random parameters") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    WorldModel wm = tiny_wm(2, 1, 3, 1, trial % 2 == 0 ? RolloutMode::OpenLoop
                                                       : RolloutMode::TeacherForced,
                            rng.next_u64());
    Matrix states(3, 2), actions(2, 1);
    for (Index r = 0; r < 3; ++r) {
      states(r, 0) = rng.normal();
      states(r, 1) = rng.normal();
    }
    actions << rng.normal(), rng.normal();
    CHECK(wm_loss(wm, states, actions) >= 0.0);
  }
}

TEST_CASE("wm loss gradients pass finite differences for H in {0,1,3}, both modes") {
  double worst = 0.0;
  for (const int H : {0, 1, 3}) {
    for (const auto mode : {RolloutMode::OpenLoop, RolloutMode::TeacherForced}) {
      WorldModel wm = tiny_wm(2, 1, 3, H, mode, 1234 + H);
      const WmBatch batch = random_batch(3, 2, 1, H, 55 + H);
      worst = std::max(worst, fd_check_wm(wm, batch, 1e-5));
    }
  }
  // also the open-loop variant that reconstructs from the encoder
  WorldModel wm = tiny_wm(2, 1, 3, 2, RolloutMode::OpenLoop, 77, /*recon_from_encoder=*/true);
  const WmBatch batch = random_batch(3, 2, 1, 2, 66);
  worst = std::max(worst, fd_check_wm(wm, batch, 1e-5));
  CHECK(worst < 1e-4);
}

TEST_CASE("stop-gradient targets equal constant substitution bit-for-bit") {
  for (int trial = 0; trial < 10; ++trial) {
    WorldModel wm = tiny_wm(3, 2, 4, 2, RolloutMode::OpenLoop, 300 + trial);
    const WmBatch batch = random_batch(2, 3, 2, 2, 400 + trial);
    const auto grads = [&](bool substitute) {
      Tape tape;
      WmLossOptions options;
      options.sg_targets_as_constants = substitute;
      const WmLossGraph g = wm_loss_graph(tape, wm, batch, options);
      tape.backward(g.loss);
      return collect_grads(tape, g.enc, wm.encoder_params());
    };
    const ParamStore with_sg = grads(false);
    const ParamStore with_const = grads(true);
    for (const auto& [name, tensor] : with_sg) {
      const Matrix diff = tensor.values() - with_const.at(name).values();
      CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("train_world_model overfits a constant trajectory") {
  Dataset expert;
  expert.add(testutil::scalar_traj(0, Source::Expert,
                                   std::vector<double>(12, 1.5)));
  WmConfig cfg;
  cfg.latent_dim = 2;
  cfg.horizon = 2;
  cfg.enc_hidden = {8};
  cfg.dyn_hidden = {8};
  cfg.dec_hidden = {8};
  cfg.epochs = 200;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const auto [wm, log] = train_world_model(expert, Dataset{}, cfg);
  REQUIRE(!log.epoch_loss.empty());
  CHECK(log.epoch_loss.back() < 1e-3);
}

TEST_CASE("training on maze data: loss halves, deterministic, file-order invariant") {
  const auto [expert, offline] = maze_data(3, 10, 77);
  WmConfig cfg;
  cfg.latent_dim = 4;
  cfg.horizon = 2;
  cfg.enc_hidden = {16};
  cfg.dyn_hidden = {16};
  cfg.dec_hidden = {16};
  cfg.epochs = 8;
  cfg.seed = 9;

  const auto [wm1, log1] = train_world_model(expert, offline, cfg);
  CHECK(log1.epoch_loss.back() < 0.5 * log1.epoch_loss.front());

  const auto [wm2, log2] = train_world_model(expert, offline, cfg);
  for (const auto& [name, tensor] : wm1.encoder_params()) {
    CHECK((tensor.values() - wm2.encoder_params().at(name).values()).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK(log1.epoch_loss == log2.epoch_loss);

  // permute trajectory file order; window space is sorted by traj_id
  Dataset offline_shuffled;
  for (auto it = offline.trajectories().rbegin(); it != offline.trajectories().rend(); ++it) {
    offline_shuffled.add(*it);
  }
  const auto [wm3, log3] = train_world_model(expert, offline_shuffled, cfg);
  CHECK(log1.epoch_loss == log3.epoch_loss);
  for (const auto& [name, tensor] : wm1.encoder_params()) {
    CHECK((tensor.values() - wm3.encoder_params().at(name).values()).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("trained encoder organizes the maze: triples, prediction, reconstruction") {
  const auto [expert, offline] = maze_data(5, 40, 2024);
  WmConfig cfg;
  cfg.latent_dim = 8;
  cfg.horizon = 3;
  cfg.enc_hidden = {32, 32};
  cfg.dyn_hidden = {32, 32};
  cfg.dec_hidden = {32, 32};
  cfg.epochs = 25;
  cfg.seed = 3;
  const auto [wm, log] = train_world_model(expert, offline, cfg);

  // Held-out data from the same regime.
  const auto [expert_held, offline_held] = maze_data(5, 20, 9090);

  SUBCASE("same-path states are closer than far-off-path states") {
    Rng rng(42);
    int good = 0, total = 0;
    const auto& trajs = expert_held.trajectories();
    for (int trial = 0; trial < 200; ++trial) {
      const auto& traj = trajs[rng.below(trajs.size())];
      if (traj.length() < 6) {
        continue;
      }
      const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(traj.length() - 3)));
      const Index j = i + 1 + static_cast<Index>(rng.below(3));
      // far state from a random-walk trajectory, at least 2 maze units away
      const auto& far_traj =
          offline_held.trajectories()[rng.below(offline_held.size())];
      const Index fi = static_cast<Index>(rng.below(static_cast<std::uint64_t>(far_traj.states.rows())));
      const Vector si = traj.states.row(i).transpose();
      const Vector sj = traj.states.row(j).transpose();
      const Vector sf = far_traj.states.row(fi).transpose();
      if ((si.head(2) - sf.head(2)).norm() < 2.0 || (sj.head(2) - sf.head(2)).norm() < 2.0) {
        continue;
      }
      const Vector zi = wm.encode(si), zj = wm.encode(sj), zf = wm.encode(sf);
      const double near = (zi - zj).norm();
      if (near < (zi - zf).norm() && near < (zj - zf).norm()) {
        ++good;
      }
      ++total;
    }
    REQUIRE(total > 50);
    CHECK(static_cast<double>(good) / static_cast<double>(total) >= 0.9);
  }

  SUBCASE("one-step latent predictions beat random states on held-out transitions") {
    Rng rng(7);
    int good = 0, total = 0;
    for (const auto& traj : offline_held.trajectories()) {
      for (Index t = 0; t + 1 < traj.states.rows() && total < 300; t += 3) {
        const Vector z = wm.encode(traj.states.row(t).transpose());
        const Vector zhat = wm.predict_latent(z, traj.actions.row(t).transpose());
        const Vector z_true = wm.encode(traj.states.row(t + 1).transpose());
        const auto& rnd_traj =
            offline_held.trajectories()[rng.below(offline_held.size())];
        const Index rt = static_cast<Index>(rng.below(static_cast<std::uint64_t>(rnd_traj.states.rows())));
        const Vector z_rand = wm.encode(rnd_traj.states.row(rt).transpose());
        if ((zhat - z_true).norm() < (zhat - z_rand).norm()) {
          ++good;
        }
        ++total;
      }
    }
    REQUIRE(total >= 200);
    CHECK(static_cast<double>(good) / static_cast<double>(total) >= 0.9);
  }

  SUBCASE("held-out reconstruction error stays under 10% of per-dimension std") {
    double err = 0.0;
    Index count = 0;
    for (const auto& traj : offline_held.trajectories()) {
      for (Index t = 0; t < traj.states.rows(); t += 5) {
        const Vector s = traj.states.row(t).transpose();
        const Vector back = wm.decode(wm.encode(s));
        const Vector norm_err =
            wm.norm().normalize_state(back) - wm.norm().normalize_state(s);
        err += norm_err.norm() / std::sqrt(static_cast<double>(s.size()));
        ++count;
      }
    }
    CHECK(err / static_cast<double>(count) < 0.1);
  }
}

TEST_CASE("export_embeddings: counts and full-precision equality") {
  std::filesystem::create_directories(kTmp);
  const WorldModel wm = WorldModel::identity(1, 1);

  SUBCASE("empty dataset gives a header-only file") {
    const auto path = kTmp / "empty.csv";
    export_embeddings(wm, Dataset{}, path);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "traj_id,t,source,z_0");
    CHECK(!std::getline(in, line));
  }

  SUBCASE("two trajectories of three states give six rows that re-encode exactly") {
    Dataset d;
    d.add(testutil::scalar_traj(0, Source::Expert, {0.1234567890123456, 1.5, 2.25}));
    d.add(testutil::scalar_traj(1, Source::Offline, {-3.75, 0.0625, 9.13e-7}));
    const auto path = kTmp / "two.csv";
    export_embeddings(wm, d, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
      const auto last_comma = line.rfind(',');
      const double z = std::stod(line.substr(last_comma + 1));
      const auto first_comma = line.find(',');
      const auto second_comma = line.find(',', first_comma + 1);
      const std::int64_t traj_id = std::stoll(line.substr(0, first_comma));
      const Index t = std::stoll(line.substr(first_comma + 1, second_comma - first_comma - 1));
      const Vector expected = wm.encode(d.state_at(StateId{traj_id, t}));
      CHECK(z == expected(0));  // %.17g round-trips doubles exactly
      ++rows;
    }
    CHECK(rows == 6);
  }
}

TEST_CASE("world model checkpoints round-trip bit-exactly") {
  std::filesystem::create_directories(kTmp);
  const auto [expert, offline] = maze_data(2, 4, 31);
  WmConfig cfg;
  cfg.latent_dim = 3;
  cfg.horizon = 1;
  cfg.enc_hidden = {8};
  cfg.dyn_hidden = {8};
  cfg.dec_hidden = {8};
  cfg.epochs = 2;
  cfg.seed = 12;
  const auto [wm, log] = train_world_model(expert, offline, cfg);

  const auto p1 = kTmp / "wm1.ckpt";
  const auto p2 = kTmp / "wm2.ckpt";
  save_world_model(wm, p1);
  const WorldModel loaded = load_world_model(p1);
  save_world_model(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  const Vector s = expert.trajectories()[0].states.row(0).transpose();
  CHECK((wm.encode(s) - loaded.encode(s)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("similarity: metric basics") {
  CHECK(similarity(Vector::Constant(3, 0.5), Vector::Constant(3, 0.5)) == 0.0);

  Vector a(2), b(2);
  a << 0, 0;
  b << 3, 4;
  CHECK(similarity(a, b) == doctest::Approx(-5.0));

  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    Vector x(4), y(4), z(4);
    for (Index d = 0; d < 4; ++d) {
      x(d) = rng.normal();
      y(d) = rng.normal();
      z(d) = rng.normal();
    }
    CHECK(similarity(x, y) == similarity(y, x));
    CHECK(similarity(x, y) <= 0.0);
    // triangle inequality on the underlying distance
    CHECK(-similarity(x, z) <= -similarity(x, y) - similarity(y, z) + 1e-12);
  }
  CHECK_THROWS_AS(similarity(Vector::Zero(2), Vector::Zero(3)), DimensionError);
}

TEST_CASE("max_expert_similarity: trivials and brute-force agreement") {
  const WorldModel wm = WorldModel::identity(1, 1);
  Dataset expert;
  expert.add(testutil::scalar_traj(0, Source::Expert, {0.0, 10.0}));
  const SimilarityIndex index = SimilarityIndex::build(wm, {&expert});

  SUBCASE("query matching an indexed state returns similarity 0 and its id") {
    const auto [sim, id] = max_expert_similarity(index, Vector::Constant(1, 10.0));
    CHECK(sim == 0.0);
    CHECK(id == StateId{0, 1});
  }
  SUBCASE("1-D query at 4 resolves to the state at 0") {
    const auto [sim, id] = max_expert_similarity(index, Vector::Constant(1, 4.0));
    CHECK(sim == doctest::Approx(-4.0));
    CHECK(id == StateId{0, 0});
  }
  SUBCASE("tie at equal distance goes to the smallest id") {
    const auto [sim, id] = max_expert_similarity(index, Vector::Constant(1, 5.0));
    CHECK(id == StateId{0, 0});
  }
  SUBCASE("200 random expert latents vs 50 queries match the double loop exactly") {
    const WorldModel wm4 = WorldModel::identity(4, 1);
    Rng rng(21);
    Dataset big;
    Trajectory t;
    t.traj_id = 0;
    t.source = Source::Expert;
    t.states = Matrix(200, 4);
    for (Index r = 0; r < 200; ++r) {
      for (Index c = 0; c < 4; ++c) {
        t.states(r, c) = rng.normal();
      }
    }
    t.actions = Matrix::Zero(199, 1);
    big.add(t);
    const SimilarityIndex idx = SimilarityIndex::build(wm4, {&big});
    for (int q = 0; q < 50; ++q) {
      Vector query(4);
      for (Index c = 0; c < 4; ++c) {
        query(c) = rng.normal();
      }
      // oracle: exhaustive double loop over raw states
      double best = -1e300;
      StateId best_id{};
      for (Index r = 0; r < 200; ++r) {
        double acc = 0.0;
        for (Index c = 0; c < 4; ++c) {
          const double d = t.states(r, c) - query(c);
          acc += d * d;
        }
        const double sim = -std::sqrt(acc);
        if (sim > best) {
          best = sim;
          best_id = StateId{0, r};
        }
      }
      const auto [sim, id] = max_expert_similarity(idx, query);
      CHECK(sim == best);
      CHECK(id == best_id);
    }
  }
  SUBCASE("empty index is a contract error") {
    const SimilarityIndex empty = SimilarityIndex::build(wm, {});
    CHECK_THROWS_AS(max_expert_similarity(empty, Vector::Zero(1)), ContractError);
  }
}

TEST_CASE("compute_stats: extremes, degeneracy, criterion endpoints") {
  const WorldModel wm = WorldModel::identity(1, 1);
  Dataset expert;
  expert.add(testutil::scalar_traj(0, Source::Expert, {0.0, 0.0}));

  SUBCASE("a single offline state degenerates") {
    Dataset offline;
    offline.add(testutil::scalar_traj(1, Source::Offline, {4.0, 4.0}));
    const SimilarityIndex index = SimilarityIndex::build(wm, {&expert});
    Matrix states(1, 1);
    states << 4.0;
    CHECK_THROWS_AS(compute_stats(index, states), DegenerateStatsError);
  }

  SUBCASE("best similarities {-1,-3,-5} give S+=-1, S-=-5 and F endpoints") {
    const SimilarityIndex index = SimilarityIndex::build(wm, {&expert});
    Matrix states(3, 1);
    states << 1.0, 3.0, 5.0;
    const CriterionStats stats = compute_stats(index, states);
    CHECK(stats.s_plus == doctest::Approx(-1.0));
    CHECK(stats.s_minus == doctest::Approx(-5.0));
    CHECK(criterion_value(stats, index, Vector::Constant(1, 1.0)) == doctest::Approx(1.0));
    CHECK(criterion_value(stats, index, Vector::Constant(1, 5.0)) == doctest::Approx(0.0));
    // hand normalization: (-3 + 5) / (-1 + 5)
    CHECK(criterion_value(stats, index, Vector::Constant(1, 3.0)) == doctest::Approx(0.5));
  }
}

TEST_CASE("criterion stays in [0,1] with both endpoints attained; isometry invariant") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const Index dim = 2 + static_cast<Index>(rng.below(3));
    const WorldModel wm = WorldModel::identity(dim, 1);
    const auto random_traj = [&](std::int64_t id, Index len) {
      Trajectory t;
      t.traj_id = id;
      t.source = Source::Offline;
      t.states = Matrix(len + 1, dim);
      for (Index r = 0; r <= len; ++r) {
        for (Index c = 0; c < dim; ++c) {
          t.states(r, c) = rng.normal();
        }
      }
      t.actions = Matrix::Zero(len, 1);
      return t;
    };
    Dataset expert, offline;
    expert.add(random_traj(0, 4));
    offline.add(random_traj(1, 9));
    offline.add(random_traj(2, 9));

    const SimilarityIndex index = SimilarityIndex::build(wm, {&expert});
    Matrix queries(offline.state_count(), dim);
    Index q = 0;
    for (const auto& t : offline.trajectories()) {
      for (Index r = 0; r < t.states.rows(); ++r) {
        queries.row(q++) = t.states.row(r);
      }
    }
    const CriterionStats stats = compute_stats(index, queries);
    bool hit_one = false, hit_zero = false;
    std::vector<double> values;
    for (Index r = 0; r < queries.rows(); ++r) {
      const double f = criterion_value(stats, index, queries.row(r).transpose());
      values.push_back(f);
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      hit_one = hit_one || f == 1.0;
      hit_zero = hit_zero || f == 0.0;
    }
    CHECK(hit_one);
    CHECK(hit_zero);

    // random orthogonal map applied jointly to every state
    Matrix gauss(dim, dim);
    for (Index r = 0; r < dim; ++r) {
      for (Index c = 0; c < dim; ++c) {
        gauss(r, c) = rng.normal();
      }
    }
    const Matrix orth = Eigen::HouseholderQR<Matrix>(gauss).householderQ();
    const auto rotate = [&](const Dataset& d, std::int64_t base) {
      Dataset out;
      for (const auto& t : d.trajectories()) {
        Trajectory rt = t;
        rt.traj_id = t.traj_id + base;
        rt.states = t.states * orth.transpose();
        out.add(rt);
      }
      return out;
    };
    const Dataset expert_rot = rotate(expert, 0);
    const SimilarityIndex index_rot = SimilarityIndex::build(wm, {&expert_rot});
    const Matrix queries_rot = queries * orth.transpose();
    const CriterionStats stats_rot = compute_stats(index_rot, queries_rot);
    double worst = 0.0;
    for (Index r = 0; r < queries.rows(); ++r) {
      const double f_rot =
          criterion_value(stats_rot, index_rot, queries_rot.row(r).transpose());
      worst = std::max(worst, std::abs(f_rot - values[static_cast<std::size_t>(r)]));
    }
    CHECK(worst < 1e-9);
  }
}
