#include "diffpf/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace diffpf::eval {

using json = nlohmann::json;
using tasks::TaskId;
using Clock = std::chrono::steady_clock;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

i64 error_dims(TaskId task) {
  auto info = tasks::task_info(task);
  return info.angular_last ? info.pose_dim - 1 : info.pose_dim;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct ErrorAccum {
  double sum_sq = 0, final_sq = 0;
  i64 steps = 0, finals = 0;

  void add(std::span<const float> est, std::span<const float> truth, i64 dims,
           bool final_step) {
    double e2 = 0;
    for (i64 d = 0; d < dims; ++d) {
      double e = static_cast<double>(est[d]) - truth[d];
      e2 += e * e;
    }
    sum_sq += e2;
    ++steps;
    if (final_step) {
      final_sq += e2;
      ++finals;
    }
  }

  void fill(SeedMetrics& m) const {
    m.mse = sum_sq / steps;
    m.rmse = std::sqrt(m.mse);
    m.final_rmse = std::sqrt(final_sq / finals);
  }
};

struct TrajWriter {
  std::ofstream f;
  i64 pose_dim, particles;

  TrajWriter(const std::filesystem::path& path, i64 pd, i64 np)
      : f(path), pose_dim(pd), particles(np) {
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "seed,sequence,t";
    for (i64 d = 0; d < pd; ++d) f << ",est" << d;
    for (i64 d = 0; d < pd; ++d) f << ",true" << d;
    for (i64 i = 0; i < particles; ++i)
      for (i64 d = 0; d < pd; ++d) f << ",p" << i << "_" << d;
    f << "\n";
  }

  template <class Particles>
  void row(std::uint64_t seed, i64 seq, i64 t, std::span<const float> est,
           std::span<const float> truth, const Particles& ps) {
    f << seed << "," << seq << "," << t;
    for (i64 d = 0; d < pose_dim; ++d) f << "," << est[d];
    for (i64 d = 0; d < pose_dim; ++d) f << "," << truth[d];
    for (i64 i = 0; i < particles; ++i) {
      auto p = ps.at(i);
      for (i64 d = 0; d < pose_dim; ++d) f << "," << p[d];
    }
    f << "\n";
  }
};

}  // namespace

double Report::median_mse() const {
  std::vector<double> v;
  for (const auto& m : per_seed) v.push_back(m.mse);
  return median(std::move(v));
}
double Report::median_rmse() const {
  std::vector<double> v;
  for (const auto& m : per_seed) v.push_back(m.rmse);
  return median(std::move(v));
}
double Report::median_final_rmse() const {
  std::vector<double> v;
  for (const auto& m : per_seed) v.push_back(m.final_rmse);
  return median(std::move(v));
}
double Report::median_hz() const {
  std::vector<double> v;
  for (const auto& m : per_seed) v.push_back(m.hz);
  return median(std::move(v));
}

namespace {

json mean_std(const std::vector<SeedMetrics>& per_seed,
              double (SeedMetrics::*field)) {
  double mean = 0;
  for (const auto& m : per_seed) mean += m.*field;
  mean /= per_seed.size();
  double var = 0;
  for (const auto& m : per_seed) {
    double d = m.*field - mean;
    var += d * d;
  }
  var = per_seed.size() > 1 ? var / (per_seed.size() - 1) : 0.0;
  return {{"mean", mean}, {"std", std::sqrt(var)}};
}

}  // namespace

std::string Report::to_json() const {
  json j;
  j["task"] = task;
  j["method"] = method;
  j["particles"] = particles;
  j["diffusion_steps"] = diffusion_steps;
  j["num_sequences"] = num_sequences;
  j["seq_len"] = seq_len;
  json ps = json::array();
  for (const auto& m : per_seed)
    ps.push_back({{"seed", m.seed},
                  {"mse", m.mse},
                  {"rmse", m.rmse},
                  {"final_rmse", m.final_rmse},
                  {"hz", m.hz},
                  {"timed_steps", m.timed_steps}});
  j["per_seed"] = ps;
  j["median"] = {{"mse", median_mse()},
                 {"rmse", median_rmse()},
                 {"final_rmse", median_final_rmse()},
                 {"hz", median_hz()}};
  j["aggregate"] = {{"mse", mean_std(per_seed, &SeedMetrics::mse)},
                    {"rmse", mean_std(per_seed, &SeedMetrics::rmse)},
                    {"final_rmse", mean_std(per_seed, &SeedMetrics::final_rmse)},
                    {"hz", mean_std(per_seed, &SeedMetrics::hz)}};
  return j.dump(2);
}

void Report::write(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_json() << "\n";
}

Report run_diffpf(const filter::Model& m, const tasks::TrajectoryDataset& ds,
                  const EvalConfig& cfg) {
  if (m.cfg.method != "diffpf")
    throw std::invalid_argument("run_diffpf wants a diffpf model");
  if (ds.meta.task != tasks::task_name(m.cfg.task))
    throw std::invalid_argument("model and dataset task disagree");
  if (m.summary_trained && m.cfg.task != TaskId::Disk &&
      cfg.particles != m.cfg.particles)
    throw std::invalid_argument(
        "this task flattens particles into the conditioning vector, so the "
        "evaluation particle count must equal the trained count " +
        std::to_string(m.cfg.particles));
  if (ds.meta.num_test < 1) throw std::invalid_argument("dataset has no test split");

  auto task = m.cfg.task;
  i64 dims = error_dims(task);
  i64 T = ds.meta.seq_len;

  Report rep;
  rep.task = ds.meta.task;
  rep.method = "diffpf";
  rep.particles = cfg.particles;
  rep.diffusion_steps = m.cfg.diffusion_steps;
  rep.num_sequences = ds.meta.num_test;
  rep.seq_len = T;

  std::optional<TrajWriter> tw;
  if (cfg.trajectory_csv)
    tw.emplace(*cfg.trajectory_csv, tasks::task_info(task).pose_dim,
               cfg.particle_columns ? cfg.particles : 0);

  for (auto seed : cfg.seeds) {
    ErrorAccum acc;
    double timed = 0;
    i64 timed_steps = 0;
    for (i64 sq = 0; sq < ds.meta.num_test; ++sq) {
      i64 s = ds.meta.num_train + sq;
      std::uint64_t base = mix_seed(seed, static_cast<std::uint64_t>(s));
      GaussianDraw predict_rng(base);
      auto ps = filter::init_particles(task, cfg.particles, predict_rng);
      for (i64 t = 0; t < T; ++t) {
        auto t0 = Clock::now();
        auto est = filter::filter_step(m, ps, ds.observation(s, t),
                                       ds.action(s, t), t,
                                       mix_seed(base, static_cast<std::uint64_t>(t)),
                                       predict_rng);
        auto t1 = Clock::now();
        if (t > 0) {
          timed += std::chrono::duration<double>(t1 - t0).count();
          ++timed_steps;
        }
        acc.add(est, ds.state(s, t), dims, t == T - 1);
        if (tw) tw->row(seed, s, t, est, ds.state(s, t), ps);
      }
    }
    SeedMetrics sm;
    sm.seed = seed;
    acc.fill(sm);
    sm.timed_steps = timed_steps;
    sm.hz = timed > 0 ? timed_steps / timed : 0.0;
    rep.per_seed.push_back(sm);
  }
  return rep;
}

Report run_bpf(const filter::Model& regressor,
               const tasks::TrajectoryDataset& ds, const EvalConfig& cfg,
               double soft_alpha) {
  if (regressor.cfg.method != "regressor")
    throw std::invalid_argument("run_bpf wants a regressor model");
  if (ds.meta.task != tasks::task_name(regressor.cfg.task))
    throw std::invalid_argument("model and dataset task disagree");
  if (ds.meta.num_test < 1) throw std::invalid_argument("dataset has no test split");

  auto task = regressor.cfg.task;
  i64 dims = error_dims(task);
  i64 T = ds.meta.seq_len;

  baselines::BpfConfig bc;
  bc.soft_alpha = soft_alpha;
  bc.likelihood_var = baselines::fit_residual_variance(regressor, ds);

  Report rep;
  rep.task = ds.meta.task;
  rep.method = "bpf";
  rep.particles = cfg.particles;
  rep.diffusion_steps = 0;
  rep.num_sequences = ds.meta.num_test;
  rep.seq_len = T;

  std::optional<TrajWriter> tw;
  if (cfg.trajectory_csv)
    tw.emplace(*cfg.trajectory_csv, tasks::task_info(task).pose_dim,
               cfg.particle_columns ? cfg.particles : 0);

  for (auto seed : cfg.seeds) {
    ErrorAccum acc;
    double timed = 0;
    i64 timed_steps = 0;
    baselines::BpfStats stats;
    for (i64 sq = 0; sq < ds.meta.num_test; ++sq) {
      i64 s = ds.meta.num_train + sq;
      GaussianDraw rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
      auto ps = baselines::from_prior(task, cfg.particles, rng);
      for (i64 t = 0; t < T; ++t) {
        auto t0 = Clock::now();
        auto est = baselines::bpf_step(regressor, ps, ds.observation(s, t),
                                       ds.action(s, t), t, bc, rng, &stats);
        auto t1 = Clock::now();
        if (t > 0) {
          timed += std::chrono::duration<double>(t1 - t0).count();
          ++timed_steps;
        }
        acc.add(est, ds.state(s, t), dims, t == T - 1);
        if (tw) tw->row(seed, s, t, est, ds.state(s, t), ps);
      }
    }
    SeedMetrics sm;
    sm.seed = seed;
    acc.fill(sm);
    sm.timed_steps = timed_steps;
    sm.hz = timed > 0 ? timed_steps / timed : 0.0;
    rep.per_seed.push_back(sm);
  }
  return rep;
}

Report run_kalman(const tasks::TrajectoryDataset& ds) {
  if (ds.meta.task != "lg")
    throw std::invalid_argument("kalman baseline only covers the lg task");
  if (ds.meta.num_test < 1) throw std::invalid_argument("dataset has no test split");
  i64 T = ds.meta.seq_len;

  Report rep;
  rep.task = ds.meta.task;
  rep.method = "kalman";
  rep.particles = 0;
  rep.diffusion_steps = 0;
  rep.num_sequences = ds.meta.num_test;
  rep.seq_len = T;

  ErrorAccum acc;
  for (i64 sq = 0; sq < ds.meta.num_test; ++sq) {
    i64 s = ds.meta.num_train + sq;
    baselines::KalmanBelief b;
    for (i64 t = 0; t < T; ++t) {
      baselines::kalman_step(b, ds.observation(s, t), t);
      std::vector<float> est{static_cast<float>(b.mean[0]),
                             static_cast<float>(b.mean[1])};
      acc.add(est, ds.state(s, t), 2, t == T - 1);
    }
  }
  SeedMetrics sm;
  acc.fill(sm);
  rep.per_seed.push_back(sm);
  return rep;
}

KalmanTrack kalman_track(const tasks::TrajectoryDataset& ds, i64 seq) {
  if (ds.meta.task != "lg")
    throw std::invalid_argument("kalman track only covers the lg task");
  KalmanTrack tr;
  baselines::KalmanBelief b;
  for (i64 t = 0; t < ds.meta.seq_len; ++t) {
    baselines::kalman_step(b, ds.observation(seq, t), t);
    tr.mean.push_back(b.mean);
    tr.var.push_back(b.var);
  }
  return tr;
}

double maze_uniform_prior_rmse(const tasks::TrajectoryDataset& ds) {
  if (ds.meta.task != "maze")
    throw std::invalid_argument("uniform-prior baseline is maze-specific");
  // a guess drawn uniformly over free space has expected squared error
  // ||x - mu||^2 + tr(cov) against the final-step pose x
  auto m = tasks::maze::free_space_moments();
  double sum_sq = 0;
  i64 n = 0;
  for (i64 sq = 0; sq < ds.meta.num_test; ++sq) {
    i64 s = ds.meta.num_train + sq;
    auto st = ds.state(s, ds.meta.seq_len - 1);
    double dx = st[0] - m.mean_x, dy = st[1] - m.mean_y;
    sum_sq += dx * dx + dy * dy;
    ++n;
  }
  return std::sqrt(sum_sq / n + m.cov_trace);
}

}  // namespace diffpf::eval
