#include "diffpf/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "diffpf/diffusion.hpp"

namespace diffpf::train {

using tasks::TaskId;

Adam::Adam(nn::ParamStore& ps, AdamConfig cfg, i64 total_steps)
    : ps_(&ps), cfg_(cfg), total_steps_(std::max<i64>(1, total_steps)) {
  for (const auto& name : ps.names()) {
    i64 n = ps.at(name).numel();
    m_.emplace_back(n, 0.f);
    v_.emplace_back(n, 0.f);
  }
}

double Adam::current_lr() const {
  double frac = static_cast<double>(std::min(t_, total_steps_)) / total_steps_;
  return cfg_.lr_end +
         0.5 * (cfg_.lr_start - cfg_.lr_end) *
             (1.0 + std::cos(std::numbers::pi * frac));
}

double Adam::step() {
  const auto& names = ps_->names();
  double norm2 = 0.0;
  for (const auto& name : names) {
    const auto& t = ps_->at(name);
    if (!t.has_grad()) continue;
    for (float g : t.grad()) norm2 += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) {
    ++skipped_;
    ps_->zero_grads();
    return norm;
  }
  double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
  double lr = current_lr();
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t p = 0; p < names.size(); ++p) {
    auto& t = ps_->at(names[p]);
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < g.size(); ++i) {
      double gi = g[i] * scale;
      m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
      v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
      double mh = m[i] / bc1, vh = v[i] / bc2;
      w[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
  ps_->zero_grads();
  return norm;
}

std::vector<double> default_tf_noise(TaskId task) {
  switch (task) {
    case TaskId::Disk: return {3.0, 3.0};
    case TaskId::Maze: return {15.0, 15.0, 0.15};
    case TaskId::Lg: return {0.4, 0.4};
    case TaskId::Bimodal: return {0.4};
  }
  throw std::logic_error("bad task id");
}

filter::ParticleSet teacher_particles(const filter::Model& m,
                                      const tasks::TrajectoryDataset& ds,
                                      i64 seq, i64 t,
                                      const std::vector<double>& tf_noise,
                                      GaussianDraw& rng) {
  auto task = m.cfg.task;
  auto info = tasks::task_info(task);
  i64 n = m.cfg.particles;
  if (t == 0) return filter::init_particles(task, n, rng);

  if (static_cast<i64>(tf_noise.size()) != info.pose_dim)
    throw std::invalid_argument("teacher_particles: tf_noise dim mismatch");
  auto prev = ds.state(seq, t - 1);
  // shared offset: at inference the whole cloud is centered on the previous
  // posterior mean, not on the true state, and the spread of that center is
  // about one posterior width. Per-particle jitter alone would train the
  // denoiser only on clouds pinned to the truth.
  std::vector<double> center(info.pose_dim);
  for (i64 d = 0; d < info.pose_dim; ++d)
    center[d] = prev[d] + tf_noise[d] * rng.normal();
  filter::ParticleSet ps{n, info.pose_dim,
                         std::vector<float>(n * info.pose_dim)};
  for (i64 i = 0; i < n; ++i) {
    auto p = ps.at(i);
    for (i64 d = 0; d < info.pose_dim; ++d)
      p[d] = static_cast<float>(center[d] + tf_noise[d] * rng.normal());
    if (info.angular_last)
      p[info.pose_dim - 1] =
          static_cast<float>(tasks::wrap_angle(p[info.pose_dim - 1]));
  }
  filter::predict(ps, task, ds.action(seq, t), rng);
  return ps;
}

namespace {

FTensor condition_for(const filter::Model& m, const tasks::TrajectoryDataset& ds,
                      i64 seq, i64 t, const TrainConfig& cfg,
                      const std::vector<double>& tf_noise, GaussianDraw& rng) {
  auto obs_feat = filter::encode_observation(m, ds.observation(seq, t));
  FTensor summary;
  if (cfg.phase == 1 || t == 0) {
    // no prediction exists at the first step, so its condition carries the
    // zero summary in training and at inference alike
    summary = filter::zero_summary(m);
  } else {
    auto ps = teacher_particles(m, ds, seq, t, tf_noise, rng);
    summary = filter::particle_summary(m, ps);
  }
  return filter::make_condition(obs_feat, summary);
}

// Least-squares fit of the per-dimension readout calibration. Regressing the
// true target on the sampler's own mean over fresh conditions measures how
// far the terminal mean falls short of the conditional target; applying the
// inverse at inference centers the sampled cloud on it.
void calibrate_readout(filter::Model& m, const tasks::TrajectoryDataset& ds,
                       const TrainConfig& cfg,
                       const std::vector<double>& tf_noise, GaussianDraw& rng) {
  const i64 rounds = 384, draws = 48;
  const i64 ed = m.enc_dim(), T = ds.meta.seq_len;
  for (int regime = 0; regime < 2; ++regime) {
    bool obs_only = regime == 1;
    // phase 1 never builds summary conditions, so only the obs-only pair
    // is identifiable there
    if (!obs_only && cfg.phase == 1) continue;
    // per-condition records: target, sampler mean, split-half means, spread
    std::vector<std::vector<double>> ys(rounds), xs(rounds), xa(rounds),
        xb(rounds), s2(rounds);
    for (i64 r = 0; r < rounds; ++r) {
      i64 s = rng.uniform_int(0, ds.meta.num_train - 1);
      i64 t = obs_only ? (cfg.phase == 1 ? rng.uniform_int(0, T - 1) : 0)
                       : rng.uniform_int(1, T - 1);
      auto cond = condition_for(m, ds, s, t, cfg, tf_noise, rng);
      std::vector<double> sum(ed, 0.0), sum2(ed, 0.0), suma(ed, 0.0);
      for (i64 k = 0; k < draws; ++k) {
        GaussianDraw chain(cfg.seed ^ (0x9e3779b97f4a7c15ULL +
                                       static_cast<std::uint64_t>(r) * 7919 +
                                       static_cast<std::uint64_t>(k)));
        auto z = diffusion::sample_posterior(m.denoiser, cond, m.schedule, ed,
                                             chain, filter::kSampleClip);
        for (i64 d = 0; d < ed; ++d) {
          sum[d] += z[d];
          sum2[d] += static_cast<double>(z[d]) * z[d];
          if (k < draws / 2) suma[d] += z[d];
        }
      }
      auto enc = tasks::encode_state(m.cfg.task, ds.state(s, t));
      auto y = m.state_norm.normalize(enc);
      ys[r].assign(y.begin(), y.end());
      xs[r].resize(ed);
      xa[r].resize(ed);
      xb[r].resize(ed);
      s2[r].resize(ed);
      for (i64 d = 0; d < ed; ++d) {
        xs[r][d] = sum[d] / draws;
        xa[r][d] = suma[d] / (draws / 2);
        xb[r][d] = (sum[d] - suma[d]) / (draws - draws / 2);
        s2[r][d] = sum2[d] / draws - xs[r][d] * xs[r][d];
      }
    }
    auto& scale = obs_only ? m.calib_obs_scale : m.calib_scale;
    auto& shift = obs_only ? m.calib_obs_shift : m.calib_shift;
    auto& spread = obs_only ? m.calib_obs_spread : m.calib_spread;
    for (i64 d = 0; d < ed; ++d) {
      double mx = 0, my = 0, ma = 0, mb = 0;
      for (i64 r = 0; r < rounds; ++r) {
        mx += xs[r][d];
        my += ys[r][d];
        ma += xa[r][d];
        mb += xb[r][d];
      }
      mx /= rounds, my /= rounds, ma /= rounds, mb /= rounds;
      double cxy = 0, cab = 0, ms2 = 0;
      for (i64 r = 0; r < rounds; ++r) {
        cxy += (xs[r][d] - mx) * (ys[r][d] - my);
        cab += (xa[r][d] - ma) * (xb[r][d] - mb);
        ms2 += s2[r][d];
      }
      cxy /= rounds, cab /= rounds, ms2 /= rounds;
      // the two half-means share no chain noise, so their covariance is the
      // variance of the sampler's conditional mean with that noise cancelled;
      // dividing by it instead of by the raw mean variance removes the
      // errors-in-variables attenuation of the slope
      double u = (cab > 1e-6) ? cxy / cab : 1.0;
      u = std::clamp(u, 0.5, 2.5);
      scale[d] = static_cast<float>(u);
      shift[d] = static_cast<float>(std::clamp(my - u * mx, -2.0, 2.0));
      // the cloud should carry the full residual variance of the target
      // about the calibrated mean, sampler mean error included; only the
      // chain noise left in the many-draw mean estimate is subtracted
      double r2 = 0;
      for (i64 r = 0; r < rounds; ++r) {
        double e = ys[r][d] - (u * xs[r][d] + shift[d]);
        r2 += e * e;
      }
      r2 /= rounds;
      double want = r2 - u * u * ms2 / draws;
      double got = u * u * ms2;
      double lam = (want > 1e-6 && got > 1e-6) ? std::sqrt(want / got) : 1.0;
      spread[d] = static_cast<float>(std::clamp(lam, 0.8, 1.8));
    }
  }
}

TrainResult train_diffpf(filter::Model& m, const tasks::TrajectoryDataset& ds,
                         const TrainConfig& cfg,
                         const std::vector<double>& tf_noise) {
  Adam opt(m.params, cfg.adam, cfg.iterations);
  GaussianDraw rng(cfg.seed);
  TrainResult res;
  res.loss_trace.reserve(cfg.iterations);
  i64 T = ds.meta.seq_len;

  // averaged weights; the sampler's terminal mean is sensitive to the last
  // few gradient steps, and the average lands closer to the optimum than
  // any single iterate
  constexpr float kEmaDecay = 0.999f;
  std::vector<std::vector<float>> ema;
  ema.reserve(m.params.names().size());
  for (const auto& name : m.params.names()) {
    auto v = m.params.at(name).values();
    ema.emplace_back(v.begin(), v.end());
  }

  for (i64 it = 0; it < cfg.iterations; ++it) {
    FTape tape;
    TapeGuard<float> guard(tape);
    std::vector<std::vector<float>> x0s;
    std::vector<FTensor> conds;
    x0s.reserve(cfg.batch);
    conds.reserve(cfg.batch);
    for (i64 b = 0; b < cfg.batch; ++b) {
      i64 s = rng.uniform_int(0, ds.meta.num_train - 1);
      i64 t = rng.uniform_int(0, T - 1);
      // the first update conditions on the zero summary, a regime phase 2
      // would otherwise touch in 1/T of its samples; a fixed batch share
      // keeps it from drifting while the summary weights train
      if (cfg.phase == 2 && rng.uniform_int(0, 7) == 0) t = 0;
      auto enc = tasks::encode_state(m.cfg.task, ds.state(s, t));
      x0s.push_back(m.state_norm.normalize(enc));
      conds.push_back(condition_for(m, ds, s, t, cfg, tf_noise, rng));
    }
    auto loss = diffusion::ddpm_loss(x0s, conds, m.denoiser, m.schedule, rng);
    float lv = loss.item();
    if (!std::isfinite(lv))
      throw std::runtime_error("training diverged at iteration " +
                               std::to_string(it) + ": loss " +
                               std::to_string(lv));
    tape.backward_from(loss);
    opt.step();
    res.loss_trace.push_back(lv);
    std::size_t pi = 0;
    for (const auto& name : m.params.names()) {
      auto v = m.params.at(name).values();
      auto& e = ema[pi++];
      for (std::size_t j = 0; j < e.size(); ++j)
        e[j] = kEmaDecay * e[j] + (1.f - kEmaDecay) * v[j];
    }
  }
  std::size_t pi = 0;
  for (const auto& name : m.params.names()) {
    auto v = m.params.at(name).values();
    auto& e = ema[pi++];
    std::copy(e.begin(), e.end(), v.begin());
  }
  res.skipped_updates = opt.skipped();
  m.summary_trained = cfg.phase == 2;
  calibrate_readout(m, ds, cfg, tf_noise, rng);
  return res;
}

TrainResult train_regressor(filter::Model& m, const tasks::TrajectoryDataset& ds,
                            const TrainConfig& cfg) {
  Adam opt(m.params, cfg.adam, cfg.iterations);
  GaussianDraw rng(cfg.seed);
  TrainResult res;
  res.loss_trace.reserve(cfg.iterations);
  i64 T = ds.meta.seq_len;

  for (i64 it = 0; it < cfg.iterations; ++it) {
    FTape tape;
    TapeGuard<float> guard(tape);
    std::vector<FTensor> losses;
    losses.reserve(cfg.batch);
    for (i64 b = 0; b < cfg.batch; ++b) {
      i64 s = rng.uniform_int(0, ds.meta.num_train - 1);
      i64 t = rng.uniform_int(0, T - 1);
      auto enc = tasks::encode_state(m.cfg.task, ds.state(s, t));
      auto target = m.state_norm.normalize(enc);
      auto feat = filter::encode_observation(m, ds.observation(s, t));
      auto pred = m.head.forward(feat);
      i64 td = static_cast<i64>(target.size());
      FTensor tt({1, td}, std::move(target));
      losses.push_back(sum(square(sub(pred, tt))));
    }
    auto loss = scale(add_many(losses), 1.f / static_cast<float>(cfg.batch));
    float lv = loss.item();
    if (!std::isfinite(lv))
      throw std::runtime_error("training diverged at iteration " +
                               std::to_string(it) + ": loss " +
                               std::to_string(lv));
    tape.backward_from(loss);
    opt.step();
    res.loss_trace.push_back(lv);
  }
  res.skipped_updates = opt.skipped();
  return res;
}

}  // namespace

TrainResult train_model(filter::Model& m, const tasks::TrajectoryDataset& ds,
                        const TrainConfig& cfg) {
  if (ds.meta.task != tasks::task_name(m.cfg.task))
    throw std::invalid_argument("model and dataset task disagree");
  if (cfg.phase != 1 && cfg.phase != 2)
    throw std::invalid_argument("phase must be 1 or 2");
  if (cfg.iterations < 1 || cfg.batch < 1)
    throw std::invalid_argument("bad training config");

  if (m.cfg.method == "regressor") return train_regressor(m, ds, cfg);
  auto tf = cfg.tf_noise.empty() ? default_tf_noise(m.cfg.task) : cfg.tf_noise;
  return train_diffpf(m, ds, cfg, tf);
}

void write_loss_trace(const std::vector<float>& trace,
                      const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "iteration,loss\n";
  for (size_t i = 0; i < trace.size(); ++i) f << i << "," << trace[i] << "\n";
}

}  // namespace diffpf::train
