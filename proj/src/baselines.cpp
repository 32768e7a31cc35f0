#include "diffpf/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace diffpf::baselines {

using tasks::TaskId;

WeightedParticleSet from_prior(TaskId task, i64 n, GaussianDraw& rng) {
  auto base = filter::init_particles(task, n, rng);
  WeightedParticleSet ps;
  ps.n = base.n;
  ps.dim = base.dim;
  ps.x = std::move(base.x);
  ps.w.assign(n, 1.0 / n);
  return ps;
}

void soft_resample(WeightedParticleSet& ps, double alpha, GaussianDraw& rng) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("soft_resample: alpha outside [0,1]");
  i64 n = ps.n;
  std::vector<double> q(n);
  for (i64 i = 0; i < n; ++i) q[i] = alpha * ps.w[i] + (1.0 - alpha) / n;

  std::vector<float> nx(ps.x.size());
  std::vector<double> nw(n);
  double u = rng.uniform() / n;
  double cum = q[0];
  i64 j = 0;
  for (i64 i = 0; i < n; ++i) {
    double target = u + static_cast<double>(i) / n;
    while (cum < target && j + 1 < n) cum += q[++j];
    std::copy(ps.at(j).begin(), ps.at(j).end(), nx.begin() + i * ps.dim);
    nw[i] = ps.w[j] / q[j];
  }
  double sum = 0;
  for (double w : nw) sum += w;
  for (auto& w : nw) w /= sum;
  ps.x = std::move(nx);
  ps.w = std::move(nw);
}

std::vector<float> weighted_estimate(TaskId task,
                                     const WeightedParticleSet& ps) {
  auto info = tasks::task_info(task);
  std::vector<double> acc(info.pose_dim, 0.0);
  double ssin = 0.0, scos = 0.0;
  for (i64 i = 0; i < ps.n; ++i) {
    auto p = ps.at(i);
    for (i64 d = 0; d < info.pose_dim; ++d) acc[d] += ps.w[i] * p[d];
    if (info.angular_last) {
      ssin += ps.w[i] * std::sin(static_cast<double>(p[info.pose_dim - 1]));
      scos += ps.w[i] * std::cos(static_cast<double>(p[info.pose_dim - 1]));
    }
  }
  std::vector<float> est(info.pose_dim);
  for (i64 d = 0; d < info.pose_dim; ++d) est[d] = static_cast<float>(acc[d]);
  if (info.angular_last)
    est[info.pose_dim - 1] = static_cast<float>(std::atan2(ssin, scos));
  return est;
}

std::vector<double> fit_residual_variance(const filter::Model& regressor,
                                          const tasks::TrajectoryDataset& ds,
                                          i64 max_samples) {
  auto task = tasks::task_from_name(ds.meta.task);
  auto info = tasks::task_info(task);
  i64 total = ds.meta.num_train * ds.meta.seq_len;
  i64 stride = std::max<i64>(1, total / std::max<i64>(1, max_samples));
  std::vector<double> var(info.pose_dim, 0.0);
  i64 used = 0;
  for (i64 f = 0; f < total; f += stride) {
    i64 s = f / ds.meta.seq_len, t = f % ds.meta.seq_len;
    auto est = filter::regressor_estimate(regressor, ds.observation(s, t));
    auto truth = ds.state(s, t);
    for (i64 d = 0; d < info.pose_dim; ++d) {
      double e = est[d] - truth[d];
      if (info.angular_last && d == info.pose_dim - 1) e = tasks::wrap_angle(e);
      var[d] += e * e;
    }
    ++used;
  }
  for (auto& v : var) v = std::max(v / used, 1e-6);
  return var;
}

std::vector<float> bpf_step(const filter::Model& regressor,
                            WeightedParticleSet& ps, std::span<const float> obs,
                            std::span<const float> action, i64 t,
                            const BpfConfig& cfg, GaussianDraw& rng,
                            BpfStats* stats) {
  auto task = regressor.cfg.task;
  auto info = tasks::task_info(task);
  if (static_cast<i64>(cfg.likelihood_var.size()) != info.pose_dim)
    throw std::invalid_argument("bpf: likelihood_var dim mismatch");

  if (t > 0) {
    filter::ParticleSet tmp{ps.n, ps.dim, std::move(ps.x)};
    filter::predict(tmp, task, action, rng);
    ps.x = std::move(tmp.x);
  }

  auto y = filter::regressor_estimate(regressor, obs);
  std::vector<double> logw(ps.n);
  double max_lw = -1e300;
  for (i64 i = 0; i < ps.n; ++i) {
    auto p = ps.at(i);
    double lw = std::log(std::max(ps.w[i], 1e-300));
    for (i64 d = 0; d < info.pose_dim; ++d) {
      double e = p[d] - y[d];
      if (info.angular_last && d == info.pose_dim - 1) e = tasks::wrap_angle(e);
      lw -= 0.5 * e * e / cfg.likelihood_var[d];
    }
    logw[i] = lw;
    max_lw = std::max(max_lw, lw);
  }
  double sum = 0;
  for (i64 i = 0; i < ps.n; ++i) {
    ps.w[i] = std::exp(logw[i] - max_lw);
    sum += ps.w[i];
  }
  if (!(sum > 0) || !std::isfinite(sum)) {
    for (auto& w : ps.w) w = 1.0 / ps.n;
    if (stats) ++stats->degeneracy_resets;
  } else {
    for (auto& w : ps.w) w /= sum;
  }

  auto est = weighted_estimate(task, ps);
  soft_resample(ps, cfg.soft_alpha, rng);
  return est;
}

void kalman_step(KalmanBelief& b, std::span<const float> z, i64 t) {
  if (z.size() != 2) throw std::invalid_argument("kalman: want 2-d observation");
  if (t > 0) {
    for (auto& m : b.mean) m *= tasks::lg::kA;
    b.var = tasks::lg::kA * tasks::lg::kA * b.var + tasks::lg::kQ;
  }
  double gain = b.var / (b.var + tasks::lg::kR);
  for (i64 d = 0; d < 2; ++d) b.mean[d] += gain * (z[d] - b.mean[d]);
  b.var *= (1.0 - gain);
}

}  // namespace diffpf::baselines
