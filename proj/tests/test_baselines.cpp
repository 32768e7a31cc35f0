#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "diffpf/baselines.hpp"

using namespace diffpf;
using namespace diffpf::baselines;
using tasks::TaskId;

namespace {

// 1-d histogram filter for x' = a x + w, z = x + v. Brute-force Bayes on a
// fine grid; the Kalman recursion must agree with it per dimension.
struct GridBayes {
  static constexpr int kBins = 801;
  static constexpr double kLo = -8.0, kHi = 8.0;
  std::vector<double> p;
  std::vector<double> xs;

  GridBayes() : p(kBins), xs(kBins) {
    double dx = (kHi - kLo) / (kBins - 1);
    for (int i = 0; i < kBins; ++i) {
      xs[i] = kLo + i * dx;
      p[i] = std::exp(-0.5 * xs[i] * xs[i] / tasks::lg::kP0);
    }
    normalize();
  }

  void normalize() {
    double s = 0;
    for (double v : p) s += v;
    for (auto& v : p) v /= s;
  }

  void step(double z, bool with_predict) {
    if (with_predict) {
      std::vector<double> np(kBins, 0.0);
      for (int i = 0; i < kBins; ++i) {
        if (p[i] < 1e-300) continue;
        for (int j = 0; j < kBins; ++j) {
          double d = xs[j] - tasks::lg::kA * xs[i];
          np[j] += p[i] * std::exp(-0.5 * d * d / tasks::lg::kQ);
        }
      }
      p = std::move(np);
    }
    for (int i = 0; i < kBins; ++i) {
      double d = z - xs[i];
      p[i] *= std::exp(-0.5 * d * d / tasks::lg::kR);
    }
    normalize();
  }

  double mean() const {
    double m = 0;
    for (int i = 0; i < kBins; ++i) m += p[i] * xs[i];
    return m;
  }
  double var() const {
    double m = mean(), v = 0;
    for (int i = 0; i < kBins; ++i) v += p[i] * (xs[i] - m) * (xs[i] - m);
    return v;
  }
};

}  // namespace

TEST_CASE("kalman single update matches the closed form") {
  KalmanBelief b;
  std::vector<float> z{1.f, -1.f};
  kalman_step(b, z, 0);
  CHECK(b.mean[0] == doctest::Approx(2.0 / 3.0));
  CHECK(b.mean[1] == doctest::Approx(-2.0 / 3.0));
  CHECK(b.var == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("kalman recursion agrees with grid-Bayes") {
  GaussianDraw rng(31);
  GridBayes grid;
  KalmanBelief b;
  double x = rng.normal();  // true state, dim 0 of the lg task
  for (i64 t = 0; t < 12; ++t) {
    if (t > 0) x = tasks::lg::kA * x + std::sqrt(tasks::lg::kQ) * rng.normal();
    double z = x + std::sqrt(tasks::lg::kR) * rng.normal();
    grid.step(z, t > 0);
    std::vector<float> zv{static_cast<float>(z), 0.f};
    kalman_step(b, zv, t);
    CHECK(std::abs(b.mean[0] - grid.mean()) < 1e-3);
    CHECK(std::abs(b.var - grid.var()) < 1e-3);
  }
  // posterior variance contracts below the prior
  CHECK(b.var < 0.5);
}

TEST_CASE("soft resampling corrects weights exactly at the endpoints") {
  GaussianDraw rng(5);
  WeightedParticleSet ps;
  ps.n = 4;
  ps.dim = 1;
  ps.x = {0.f, 1.f, 2.f, 3.f};
  ps.w = {0.4, 0.3, 0.2, 0.1};

  auto a1 = ps;
  soft_resample(a1, 1.0, rng);
  for (double w : a1.w) CHECK(w == doctest::Approx(0.25));

  // alpha = 0 proposes uniformly; systematic sampling then visits every index
  // once and the corrected weights are the originals
  auto a0 = ps;
  soft_resample(a0, 0.0, rng);
  CHECK(a0.x == ps.x);
  for (i64 i = 0; i < 4; ++i) CHECK(a0.w[i] == doctest::Approx(ps.w[i]));

  CHECK_THROWS_AS(soft_resample(ps, 1.5, rng), std::invalid_argument);
}

TEST_CASE("soft resampling keeps estimators unbiased") {
  GaussianDraw rng(77);
  const i64 n = 1000;
  WeightedParticleSet base;
  base.n = n;
  base.dim = 1;
  base.x.resize(n);
  base.w.resize(n);
  double ws = 0;
  for (i64 i = 0; i < n; ++i) {
    base.x[i] = static_cast<float>(10.0 * i / n);
    base.w[i] = std::exp(std::sin(0.37 * i));
    ws += base.w[i];
  }
  for (auto& w : base.w) w /= ws;
  double mu = 0, m2 = 0;
  for (i64 i = 0; i < n; ++i) {
    mu += base.w[i] * base.x[i];
    m2 += base.w[i] * base.x[i] * base.x[i];
  }

  const int reps = 800;
  double s1 = 0, s2 = 0, sq1 = 0;
  for (int r = 0; r < reps; ++r) {
    auto ps = base;
    soft_resample(ps, 0.37, rng);
    double e1 = 0, e2 = 0;
    for (i64 i = 0; i < n; ++i) {
      e1 += ps.w[i] * ps.x[i];
      e2 += ps.w[i] * ps.x[i] * ps.x[i];
    }
    s1 += e1;
    s2 += e2;
    sq1 += e1 * e1;
  }
  double avg1 = s1 / reps, avg2 = s2 / reps;
  double se1 = std::sqrt((sq1 / reps - avg1 * avg1) / reps);
  CHECK(std::abs(avg1 - mu) < 3.0 * se1 + 1e-6);
  CHECK(avg2 == doctest::Approx(m2).epsilon(0.02));
}

TEST_CASE("weighted estimate averages on the circle") {
  constexpr double pi = std::numbers::pi;
  WeightedParticleSet ps;
  ps.n = 2;
  ps.dim = 3;
  ps.x = {0.f, 0.f, static_cast<float>(pi - 0.01),
          0.f, 0.f, static_cast<float>(-pi + 0.01)};
  ps.w = {0.5, 0.5};
  auto est = weighted_estimate(TaskId::Maze, ps);
  CHECK(std::abs(est[2]) == doctest::Approx(pi).epsilon(1e-3));
}

TEST_CASE("prior particles carry uniform weights") {
  GaussianDraw rng(1);
  auto ps = from_prior(TaskId::Lg, 64, rng);
  CHECK(ps.n == 64);
  CHECK(ps.dim == 2);
  for (double w : ps.w) CHECK(w == doctest::Approx(1.0 / 64));
}

TEST_CASE("bpf step pulls the estimate toward the pseudo-likelihood center") {
  filter::ModelConfig cfg;
  cfg.method = "regressor";
  cfg.task = TaskId::Lg;
  cfg.init_seed = 3;
  filter::Normalizer idn{{0.0, 0.0}, {1.0, 1.0}};
  auto reg = filter::build_model(cfg, idn, idn);
  // zero the head so the regressor output is exactly the origin
  auto w = reg.params.at("head.w").values();
  std::fill(w.begin(), w.end(), 0.f);
  auto b = reg.params.at("head.b").values();
  std::fill(b.begin(), b.end(), 0.f);

  GaussianDraw rng(9);
  WeightedParticleSet ps;
  ps.n = 2000;
  ps.dim = 2;
  ps.x.resize(2 * ps.n);
  ps.w.assign(ps.n, 1.0 / ps.n);
  // particles spread around (2, -2); likelihood centered at the origin
  for (i64 i = 0; i < ps.n; ++i) {
    ps.x[2 * i] = static_cast<float>(2.0 + rng.normal());
    ps.x[2 * i + 1] = static_cast<float>(-2.0 + rng.normal());
  }
  BpfConfig bc;
  bc.soft_alpha = 0.5;
  bc.likelihood_var = {1.0, 1.0};
  BpfStats stats;
  std::vector<float> obs{0.f, 0.f};
  auto est = bpf_step(reg, ps, obs, {}, 0, bc, rng, &stats);
  // posterior of N(2,1) prior with N(0,1) likelihood sits near 1
  CHECK(est[0] == doctest::Approx(1.0).epsilon(0.15));
  CHECK(est[1] == doctest::Approx(-1.0).epsilon(0.15));
  CHECK(stats.degeneracy_resets == 0);

  // collapsing the likelihood variance under particles far from the center
  // floors every weight to zero and triggers the uniform reset
  WeightedParticleSet far;
  far.n = 8;
  far.dim = 2;
  far.x.assign(16, 50.f);
  far.w.assign(8, 1.0 / 8);
  bc.likelihood_var = {1e-300, 1e-300};
  bpf_step(reg, far, obs, {}, 0, bc, rng, &stats);
  CHECK(stats.degeneracy_resets == 1);
  for (double wv : far.w) CHECK(wv == doctest::Approx(1.0 / 8));
}

TEST_CASE("bpf propagates particles with the action at t > 0") {
  filter::ModelConfig cfg;
  cfg.method = "regressor";
  cfg.task = TaskId::Disk;
  cfg.image_size = 32;
  cfg.init_seed = 3;
  filter::Normalizer idn{{0.0, 0.0}, {1.0, 1.0}};
  auto reg = filter::build_model(cfg, idn, filter::Normalizer{});

  GaussianDraw rng(4);
  WeightedParticleSet ps;
  ps.n = 500;
  ps.dim = 2;
  ps.x.assign(1000, 0.f);
  ps.w.assign(500, 1.0 / 500);
  BpfConfig bc;
  bc.likelihood_var = {1e6, 1e6};  // flat likelihood isolates the predict move
  std::vector<float> obs(3 * 32 * 32, 0.f);
  std::vector<float> action{10.f, -5.f};
  auto est = bpf_step(reg, ps, obs, action, 1, bc, rng, nullptr);
  CHECK(est[0] == doctest::Approx(10.0).epsilon(0.05));
  CHECK(est[1] == doctest::Approx(-5.0).epsilon(0.05));
}
