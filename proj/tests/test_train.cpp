#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "diffpf/eval.hpp"
#include "diffpf/train.hpp"

using namespace diffpf;
using namespace diffpf::train;
using tasks::TaskId;
namespace fs = std::filesystem;

namespace {

filter::Normalizer identity_norm(i64 dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

double avg(const std::vector<float>& v, size_t from, size_t to) {
  double s = 0;
  for (size_t i = from; i < to; ++i) s += v[i];
  return s / (to - from);
}

}  // namespace

TEST_CASE("adam minimizes a quadratic") {
  nn::ParamStore ps;
  auto& w = ps.create("w", {1, 4});
  AdamConfig ac;
  ac.lr_start = ac.lr_end = 0.05;
  Adam opt(ps, ac, 400);
  FTensor target({1, 4}, {1.f, -2.f, 3.f, 0.5f});
  for (int i = 0; i < 400; ++i) {
    FTape tape;
    TapeGuard<float> guard(tape);
    auto loss = sum(square(sub(w, target)));
    tape.backward_from(loss);
    opt.step();
  }
  auto wv = w.values();
  CHECK(wv[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(wv[1] == doctest::Approx(-2.0).epsilon(1e-3));
  CHECK(wv[2] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(wv[3] == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("adam learning rate follows the cosine schedule") {
  nn::ParamStore ps;
  ps.create("w", {1, 1});
  AdamConfig ac;
  ac.lr_start = 1e-3;
  ac.lr_end = 1e-5;
  Adam opt(ps, ac, 100);
  CHECK(opt.current_lr() == doctest::Approx(1e-3));
  for (int i = 0; i < 50; ++i) {
    FTape tape;
    TapeGuard<float> guard(tape);
    auto loss = sum(square(ps.at("w")));
    tape.backward_from(loss);
    opt.step();
  }
  double mid = 1e-5 + 0.5 * (1e-3 - 1e-5);
  CHECK(opt.current_lr() == doctest::Approx(mid).epsilon(1e-6));
  for (int i = 0; i < 50; ++i) {
    FTape tape;
    TapeGuard<float> guard(tape);
    auto loss = sum(square(ps.at("w")));
    tape.backward_from(loss);
    opt.step();
  }
  CHECK(opt.current_lr() == doctest::Approx(1e-5));
}

TEST_CASE("adam reports the pre-clip norm and skips non-finite gradients") {
  nn::ParamStore ps;
  auto& w = ps.create("w", {1, 2});
  auto wv = w.values();
  wv[0] = 1.f;
  wv[1] = 1.f;
  AdamConfig ac;
  ac.clip_norm = 1.0;
  Adam opt(ps, ac, 10);

  w.ensure_grad();
  auto g = w.grad();
  g[0] = 3.f;
  g[1] = 4.f;
  double norm = opt.step();
  CHECK(norm == doctest::Approx(5.0));
  CHECK(opt.skipped() == 0);

  float before0 = w.values()[0];
  w.ensure_grad();
  g = w.grad();
  g[0] = std::numeric_limits<float>::infinity();
  double bad = opt.step();
  CHECK(!std::isfinite(bad));
  CHECK(opt.skipped() == 1);
  CHECK(w.values()[0] == before0);  // skipped update leaves weights alone
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("teacher particles track the previous true state") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 6, 1, 20, 3);
  filter::ModelConfig cfg;
  cfg.task = TaskId::Lg;
  cfg.particles = 64;
  cfg.diffusion_steps = 4;
  auto m = filter::fresh_model(cfg, ds.meta);

  GaussianDraw rng(11);
  auto prior = teacher_particles(m, ds, 0, 0, default_tf_noise(TaskId::Lg), rng);
  CHECK(prior.n == 64);
  double spread = 0;
  for (i64 i = 0; i < prior.n; ++i) spread += prior.at(i)[0] * prior.at(i)[0];
  CHECK(std::sqrt(spread / prior.n) == doctest::Approx(1.0).epsilon(0.4));

  auto tp = teacher_particles(m, ds, 0, 5, default_tf_noise(TaskId::Lg), rng);
  auto prev = ds.state(0, 4);
  double mean0 = 0;
  for (i64 i = 0; i < tp.n; ++i) mean0 += tp.at(i)[0];
  mean0 /= tp.n;
  // jittered previous state through x' = 0.9 x + w; the shared center
  // offset dominates the cloud-mean spread. Bound uses the widest teacher
  // cloud the width factor can produce.
  double want = 0.9 * prev[0];
  double tfw = 1.8 * 0.4;
  double sd = std::sqrt(0.9 * 0.9 * tfw * tfw +
                        (0.9 * 0.9 * tfw * tfw + 0.1) / 64.0);
  CHECK(std::abs(mean0 - want) < 4.0 * sd);

  CHECK_THROWS(teacher_particles(m, ds, 0, 5, {1.0}, rng));
}

TEST_CASE("regressor training reduces the loss") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 20, 2, 25, 7);
  filter::ModelConfig mc;
  mc.method = "regressor";
  mc.task = TaskId::Lg;
  mc.init_seed = 1;
  auto m = filter::fresh_model(mc, ds.meta);

  TrainConfig tc;
  tc.iterations = 300;
  tc.batch = 16;
  tc.seed = 5;
  auto res = train_model(m, ds, tc);
  REQUIRE(res.loss_trace.size() == 300);
  CHECK(res.skipped_updates == 0);
  // zero-initialized head predicts the normalized-state mean, unit loss scale
  CHECK(res.loss_trace[0] > 1.2);
  double tail = avg(res.loss_trace, 280, 300);
  CHECK(tail < 0.7 * res.loss_trace[0]);
  for (float v : res.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("noise-prediction training starts at the zero-model plateau and improves") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 20, 2, 25, 13);
  filter::ModelConfig mc;
  mc.task = TaskId::Lg;
  mc.particles = 16;
  mc.diffusion_steps = 6;
  mc.init_seed = 2;
  auto m = filter::fresh_model(mc, ds.meta);

  TrainConfig tc;
  tc.iterations = 400;
  tc.batch = 16;
  tc.seed = 9;
  auto res = train_model(m, ds, tc);
  REQUIRE(res.loss_trace.size() == 400);
  // zero-initialized output layer predicts zero noise, so the expected loss
  // is the state dimension
  CHECK(res.loss_trace[0] == doctest::Approx(2.0).epsilon(0.75));
  double head = avg(res.loss_trace, 0, 20);
  double tail = avg(res.loss_trace, 380, 400);
  CHECK(tail < head - 0.4);

  // phase 2 consumes the phase-1 weights without blowing up
  TrainConfig p2 = tc;
  p2.phase = 2;
  p2.iterations = 30;
  auto r2 = train_model(m, ds, p2);
  REQUIRE(r2.loss_trace.size() == 30);
  for (float v : r2.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("training rejects bad configs and mismatched datasets") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 4, 1, 10, 1);
  filter::ModelConfig mc;
  mc.task = TaskId::Bimodal;
  auto m = filter::build_model(mc, identity_norm(1), identity_norm(1));
  TrainConfig tc;
  CHECK_THROWS_AS(train_model(m, ds, tc), std::invalid_argument);

  auto m2 = filter::fresh_model(
      []{ filter::ModelConfig c; c.task = TaskId::Lg; return c; }(), ds.meta);
  TrainConfig bad;
  bad.phase = 3;
  CHECK_THROWS_AS(train_model(m2, ds, bad), std::invalid_argument);
}

TEST_CASE("loss trace lands on disk as csv") {
  auto p = fs::temp_directory_path() / "diffpf_trace.csv";
  write_loss_trace({1.f, 0.5f, 0.25f}, p);
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  CHECK(line == "iteration,loss");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 3);
  fs::remove(p);
}

TEST_CASE("eval produces reproducible finite reports") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 6, 3, 15, 21);
  filter::ModelConfig mc;
  mc.task = TaskId::Lg;
  mc.particles = 16;
  mc.diffusion_steps = 3;
  auto m = filter::fresh_model(mc, ds.meta);

  eval::EvalConfig ec;
  ec.particles = 16;
  ec.seeds = {0, 1};
  auto r1 = eval::run_diffpf(m, ds, ec);
  auto r2 = eval::run_diffpf(m, ds, ec);
  REQUIRE(r1.per_seed.size() == 2);
  for (const auto& sm : r1.per_seed) {
    CHECK(std::isfinite(sm.mse));
    CHECK(sm.rmse == doctest::Approx(std::sqrt(sm.mse)));
    CHECK(sm.timed_steps == 3 * 14);
  }
  // metrics are bit-reproducible; wall-clock rates are not
  CHECK(r1.per_seed[0].mse == r2.per_seed[0].mse);
  CHECK(r1.per_seed[1].final_rmse == r2.per_seed[1].final_rmse);
  CHECK(r1.per_seed[0].mse != r1.per_seed[1].mse);

  // a summary-trained model bakes the particle count into the conditioning
  m.summary_trained = true;
  eval::EvalConfig wrong;
  wrong.particles = 8;
  CHECK_THROWS(eval::run_diffpf(m, ds, wrong));
}

TEST_CASE("kalman eval beats the zero predictor on lg") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 2, 10, 30, 3);
  auto rep = eval::run_kalman(ds);
  REQUIRE(rep.per_seed.size() == 1);
  double zero_sq = 0;
  i64 n = 0;
  for (i64 sq = 0; sq < ds.meta.num_test; ++sq)
    for (i64 t = 0; t < ds.meta.seq_len; ++t) {
      auto st = ds.state(ds.meta.num_train + sq, t);
      zero_sq += st[0] * st[0] + st[1] * st[1];
      ++n;
    }
  double zero_rmse = std::sqrt(zero_sq / n);
  CHECK(rep.per_seed[0].rmse < 0.8 * zero_rmse);

  auto tr = eval::kalman_track(ds, ds.meta.num_train);
  REQUIRE(tr.mean.size() == 30);
  // variance settles to the steady state of the recursion
  CHECK(tr.var[29] == doctest::Approx(tr.var[28]).epsilon(1e-3));
  CHECK(tr.var[29] < 0.3);
}

TEST_CASE("bpf eval runs end to end on lg") {
  auto ds = tasks::gen_dataset(TaskId::Lg, 8, 2, 12, 31);
  filter::ModelConfig mc;
  mc.method = "regressor";
  mc.task = TaskId::Lg;
  auto reg = filter::fresh_model(mc, ds.meta);
  TrainConfig tc;
  tc.iterations = 150;
  tc.batch = 16;
  auto tr = train_model(reg, ds, tc);
  REQUIRE(tr.loss_trace.size() == 150);

  eval::EvalConfig ec;
  ec.particles = 64;
  ec.seeds = {3};
  auto rep = eval::run_bpf(reg, ds, ec);
  REQUIRE(rep.per_seed.size() == 1);
  CHECK(std::isfinite(rep.per_seed[0].mse));
  CHECK(rep.method == "bpf");
  // a trained regressor plus motion model should beat the zero predictor
  double zero_sq = 0;
  i64 n = 0;
  for (i64 sq = 0; sq < ds.meta.num_test; ++sq)
    for (i64 t = 0; t < ds.meta.seq_len; ++t) {
      auto st = ds.state(ds.meta.num_train + sq, t);
      zero_sq += st[0] * st[0] + st[1] * st[1];
      ++n;
    }
  CHECK(rep.per_seed[0].rmse < std::sqrt(zero_sq / n));
}

TEST_CASE("maze uniform-prior baseline sits at the free-space spread") {
  auto ds = tasks::gen_dataset(TaskId::Maze, 2, 3, 20, 17);
  double rmse = eval::maze_uniform_prior_rmse(ds);
  CHECK(rmse > 100.0);
  CHECK(rmse < 400.0);
}

TEST_CASE("trajectory export writes one row per step") {
  auto ds = tasks::gen_dataset(TaskId::Bimodal, 3, 2, 8, 2);
  filter::ModelConfig mc;
  mc.task = TaskId::Bimodal;
  mc.particles = 8;
  mc.diffusion_steps = 2;
  auto m = filter::fresh_model(mc, ds.meta);

  auto p = fs::temp_directory_path() / "diffpf_traj.csv";
  eval::EvalConfig ec;
  ec.particles = 8;
  ec.seeds = {0};
  ec.trajectory_csv = p;
  eval::run_diffpf(m, ds, ec);
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  CHECK(line.starts_with("seed,sequence,t,est0,true0,p0_0,p1_0"));
  CHECK(line.ends_with(",p7_0"));
  int rows = 0;
  int last_commas = 0;
  while (std::getline(f, line)) {
    ++rows;
    last_commas = static_cast<int>(std::count(line.begin(), line.end(), ','));
  }
  CHECK(rows == 2 * 8);
  CHECK(last_commas == 2 + 1 + 1 + 8);  // seed,seq,t + est + true + particles
  fs::remove(p);

  ec.particle_columns = false;
  ec.trajectory_csv = p;
  eval::run_diffpf(m, ds, ec);
  std::ifstream f2(p);
  std::getline(f2, line);
  CHECK(line == "seed,sequence,t,est0,true0");
  fs::remove(p);
}
