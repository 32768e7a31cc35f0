#include "diffpf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace diffpf::filter {

using json = nlohmann::json;
namespace fs = std::filesystem;
using tasks::TaskId;

std::vector<float> Normalizer::normalize(std::span<const float> v) const {
  if (v.size() != mean.size())
    throw std::invalid_argument("normalize: dim mismatch");
  std::vector<float> out(v.size());
  for (size_t d = 0; d < v.size(); ++d)
    out[d] = static_cast<float>((v[d] - mean[d]) / stdev[d]);
  return out;
}

std::vector<float> Normalizer::denormalize(std::span<const float> v) const {
  if (v.size() != mean.size())
    throw std::invalid_argument("denormalize: dim mismatch");
  std::vector<float> out(v.size());
  for (size_t d = 0; d < v.size(); ++d)
    out[d] = static_cast<float>(v[d] * stdev[d] + mean[d]);
  return out;
}

namespace {

// flattened tasks append this many values per particle to the condition
i64 flatten_per_particle(TaskId task) {
  // maze keeps the heading as one raw angle instead of sin/cos
  if (task == TaskId::Maze) return 3;
  return tasks::encoded_dim(task);
}

}  // namespace

i64 summary_width(const ModelConfig& cfg) {
  if (cfg.task == TaskId::Disk) return cfg.feature_dim;
  // flattened slots plus per-dimension mean and spread of the cloud; the
  // spread tells the denoiser how informative the prediction is, which the
  // raw slots only encode implicitly
  i64 per = flatten_per_particle(cfg.task);
  return cfg.particles * per + 2 * per;
}

i64 cond_width(const ModelConfig& cfg) {
  return cfg.feature_dim + summary_width(cfg);
}

Model build_model(const ModelConfig& cfg, Normalizer state_norm,
                  Normalizer obs_norm) {
  if (cfg.method != "diffpf" && cfg.method != "regressor")
    throw std::invalid_argument("unknown method: " + cfg.method);
  if (cfg.particles < 1 || cfg.diffusion_steps < 1 || cfg.feature_dim < 1)
    throw std::invalid_argument("bad model config");
  auto info = tasks::task_info(cfg.task);
  i64 ed = tasks::encoded_dim(cfg.task);
  if (state_norm.dim() != ed)
    throw std::invalid_argument("state normalizer dim mismatch");

  Model m;
  m.cfg = cfg;
  m.state_norm = std::move(state_norm);
  m.obs_norm = std::move(obs_norm);
  m.calib_scale.assign(ed, 1.f);
  m.calib_shift.assign(ed, 0.f);
  m.calib_obs_scale.assign(ed, 1.f);
  m.calib_obs_shift.assign(ed, 0.f);
  m.calib_spread.assign(ed, 1.f);
  m.calib_obs_spread.assign(ed, 1.f);
  GaussianDraw rng(cfg.init_seed);

  switch (cfg.task) {
    case TaskId::Disk:
      m.obs_conv = nn::ConvEncoder(m.params, "obs_enc", 3, cfg.image_size,
                                   cfg.image_size, cfg.feature_dim, rng);
      break;
    case TaskId::Maze:
      m.obs_conv = nn::ConvEncoder(m.params, "obs_enc", 1, tasks::maze::kPatch,
                                   tasks::maze::kPatch, cfg.feature_dim, rng);
      break;
    case TaskId::Lg:
    case TaskId::Bimodal: {
      i64 od = tasks::task_info(cfg.task).image_obs ? 0 : (cfg.task == TaskId::Lg ? 2 : 1);
      if (m.obs_norm.dim() != od)
        throw std::invalid_argument("obs normalizer dim mismatch");
      m.obs_mlp = nn::MlpEncoder(m.params, "obs_enc", od, 64, cfg.feature_dim, rng);
      break;
    }
  }

  if (cfg.method == "diffpf") {
    if (cfg.task == TaskId::Disk)
      m.summary_conv = nn::ConvEncoder(m.params, "sum_enc", 1, kHeatmapGrid,
                                       kHeatmapGrid, cfg.feature_dim, rng);
    m.denoiser = nn::DenoiserNet(m.params, "eps", ed, cond_width(cfg), rng);
    m.schedule = diffusion::build_schedule(cfg.diffusion_steps);
  } else {
    m.head = nn::Linear(m.params, "head", cfg.feature_dim, ed, rng);
  }
  (void)info;
  return m;
}

Model fresh_model(const ModelConfig& cfg, const tasks::DatasetMeta& meta) {
  if (meta.task != tasks::task_name(cfg.task))
    throw std::invalid_argument("model task does not match dataset task");
  Normalizer sn{meta.state_mean, meta.state_std};
  Normalizer on{meta.obs_mean, meta.obs_std};
  ModelConfig c = cfg;
  if (cfg.task == TaskId::Disk) c.image_size = meta.image_size;
  return build_model(c, std::move(sn), std::move(on));
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr char kMagic[8] = {'D', 'P', 'F', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void save_model(const Model& m, const fs::path& path) {
  json h;
  h["format_version"] = 1;
  h["method"] = m.cfg.method;
  h["task"] = tasks::task_name(m.cfg.task);
  h["particles"] = m.cfg.particles;
  h["diffusion_steps"] = m.cfg.diffusion_steps;
  h["feature_dim"] = m.cfg.feature_dim;
  h["image_size"] = m.cfg.image_size;
  h["init_seed"] = m.cfg.init_seed;
  h["summary_trained"] = m.summary_trained;
  h["calib"] = {{"scale", m.calib_scale},
                {"shift", m.calib_shift},
                {"spread", m.calib_spread},
                {"obs_scale", m.calib_obs_scale},
                {"obs_shift", m.calib_obs_shift},
                {"obs_spread", m.calib_obs_spread}};
  h["state_norm"] = {{"mean", m.state_norm.mean}, {"std", m.state_norm.stdev}};
  h["obs_norm"] = {{"mean", m.obs_norm.mean}, {"std", m.obs_norm.stdev}};
  if (m.cfg.method == "diffpf") h["alpha_bar"] = m.schedule.alpha_bar;

  json manifest = json::array();
  i64 total = 0;
  for (const auto& name : m.params.names()) {
    const auto& t = m.params.at(name);
    manifest.push_back({{"name", name}, {"shape", t.shape()}});
    total += t.numel();
  }
  h["tensors"] = manifest;
  h["total_floats"] = total;

  std::string header = h.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(kMagic, 8);
  std::uint64_t len = header.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& name : m.params.names()) {
    const auto& v = m.params.at(name).values();
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("short write to " + path.string());
}

Model load_model(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  if (!f || len == 0 || len > (1u << 26))
    throw std::runtime_error(path.string() + ": corrupt header length");
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error(path.string() + ": truncated header");
  json h = json::parse(header);

  ModelConfig cfg;
  cfg.method = h.at("method").get<std::string>();
  cfg.task = tasks::task_from_name(h.at("task").get<std::string>());
  cfg.particles = h.at("particles").get<i64>();
  cfg.diffusion_steps = h.at("diffusion_steps").get<i64>();
  cfg.feature_dim = h.at("feature_dim").get<i64>();
  cfg.image_size = h.at("image_size").get<i64>();
  cfg.init_seed = h.at("init_seed").get<std::uint64_t>();
  Normalizer sn{h.at("state_norm").at("mean").get<std::vector<double>>(),
                h.at("state_norm").at("std").get<std::vector<double>>()};
  Normalizer on{h.at("obs_norm").at("mean").get<std::vector<double>>(),
                h.at("obs_norm").at("std").get<std::vector<double>>()};

  Model m = build_model(cfg, std::move(sn), std::move(on));
  m.summary_trained = h.at("summary_trained").get<bool>();
  const auto& cal = h.at("calib");
  m.calib_scale = cal.at("scale").get<std::vector<float>>();
  m.calib_shift = cal.at("shift").get<std::vector<float>>();
  m.calib_spread = cal.at("spread").get<std::vector<float>>();
  m.calib_obs_scale = cal.at("obs_scale").get<std::vector<float>>();
  m.calib_obs_shift = cal.at("obs_shift").get<std::vector<float>>();
  m.calib_obs_spread = cal.at("obs_spread").get<std::vector<float>>();
  if (static_cast<i64>(m.calib_scale.size()) != m.enc_dim() ||
      static_cast<i64>(m.calib_obs_scale.size()) != m.enc_dim() ||
      static_cast<i64>(m.calib_spread.size()) != m.enc_dim())
    throw std::runtime_error("checkpoint calibration dimension mismatch");
  if (cfg.method == "diffpf") {
    auto ab = h.at("alpha_bar").get<std::vector<double>>();
    m.schedule = diffusion::schedule_from_alpha_bar(std::move(ab));
    if (m.schedule.K != cfg.diffusion_steps)
      throw std::runtime_error("checkpoint schedule length disagrees with config");
  }

  const auto& manifest = h.at("tensors");
  if (manifest.size() != m.params.names().size())
    throw std::runtime_error("checkpoint manifest does not match architecture");
  for (const auto& entry : manifest) {
    auto name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<Shape>();
    if (!m.params.contains(name))
      throw std::runtime_error("checkpoint has unknown tensor " + name);
    auto& t = m.params.at(name);
    if (t.shape() != shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    auto v = t.values();
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!f) throw std::runtime_error(path.string() + ": truncated blob");
  }
  return m;
}

// ---------------------------------------------------------------------------
// observation and particle encoding

FTensor encode_observation(const Model& m, std::span<const float> obs) {
  auto info = tasks::task_info(m.cfg.task);
  if (info.image_obs) {
    i64 c = m.obs_conv.in_channels(), h = m.obs_conv.image_h(),
        w = m.obs_conv.image_w();
    if (static_cast<i64>(obs.size()) != c * h * w)
      throw std::invalid_argument("observation size mismatch");
    std::vector<float> px(obs.size());
    // map pixel intensities into [-1, 1]
    for (size_t i = 0; i < obs.size(); ++i) px[i] = 2.f * obs[i] - 1.f;
    FTensor img({c, h, w}, std::move(px));
    return m.obs_conv.forward(img);
  }
  auto z = m.obs_norm.normalize(obs);
  i64 zd = static_cast<i64>(z.size());
  FTensor v({1, zd}, std::move(z));
  return m.obs_mlp.forward(v);
}

ParticleSet init_particles(TaskId task, i64 n, GaussianDraw& rng) {
  auto info = tasks::task_info(task);
  ParticleSet ps{n, info.pose_dim, std::vector<float>(n * info.pose_dim)};
  for (i64 i = 0; i < n; ++i) {
    auto p = ps.at(i);
    switch (task) {
      case TaskId::Disk: {
        double r = tasks::disk::kExtent - tasks::disk::kTargetRadius;
        p[0] = static_cast<float>((2.0 * rng.uniform() - 1.0) * r);
        p[1] = static_cast<float>((2.0 * rng.uniform() - 1.0) * r);
        break;
      }
      case TaskId::Maze: {
        auto pose = tasks::maze::random_free_pose(rng);
        p[0] = static_cast<float>(pose.x);
        p[1] = static_cast<float>(pose.y);
        p[2] = static_cast<float>(pose.th);
        break;
      }
      case TaskId::Lg:
        p[0] = static_cast<float>(std::sqrt(tasks::lg::kP0) * rng.normal());
        p[1] = static_cast<float>(std::sqrt(tasks::lg::kP0) * rng.normal());
        break;
      case TaskId::Bimodal:
        p[0] = static_cast<float>(tasks::bimodal::kP0Std * rng.normal());
        break;
    }
  }
  return ps;
}

void predict(ParticleSet& ps, TaskId task, std::span<const float> action,
             GaussianDraw& rng) {
  auto info = tasks::task_info(task);
  if (static_cast<i64>(action.size()) != info.action_dim)
    throw std::invalid_argument("predict: action dim mismatch");
  for (i64 i = 0; i < ps.n; ++i) {
    auto p = ps.at(i);
    switch (task) {
      case TaskId::Disk:
        p[0] += action[0] + static_cast<float>(kDiskPredictStd * rng.normal());
        p[1] += action[1] + static_cast<float>(kDiskPredictStd * rng.normal());
        break;
      case TaskId::Maze: {
        tasks::maze::Pose pose{p[0], p[1], p[2]};
        auto nx = tasks::maze::process(
            pose, {action[0], action[1], action[2]}, &rng);
        p[0] = static_cast<float>(nx.x);
        p[1] = static_cast<float>(nx.y);
        p[2] = static_cast<float>(nx.th);
        break;
      }
      case TaskId::Lg:
        for (i64 d = 0; d < 2; ++d)
          p[d] = static_cast<float>(tasks::lg::kA * p[d] +
                                    std::sqrt(tasks::lg::kQ) * rng.normal());
        break;
      case TaskId::Bimodal:
        p[0] = static_cast<float>(tasks::bimodal::kA * p[0] +
                                  tasks::bimodal::kProcStd * rng.normal());
        break;
    }
  }
}

FTensor particle_summary(const Model& m, const ParticleSet& ps,
                         i64* out_clamped) {
  if (out_clamped) *out_clamped = 0;
  if (m.cfg.task == TaskId::Disk) {
    constexpr i64 g = kHeatmapGrid;
    double cell = 2.0 * tasks::disk::kExtent / g;
    std::vector<float> heat(g * g, 0.f);
    double bw2 = kHeatmapBandwidth * kHeatmapBandwidth;
    i64 reach = static_cast<i64>(std::ceil(3.0 * kHeatmapBandwidth));
    for (i64 i = 0; i < ps.n; ++i) {
      auto p = ps.at(i);
      double gx = (p[0] + tasks::disk::kExtent) / cell - 0.5;
      double gy = (p[1] + tasks::disk::kExtent) / cell - 0.5;
      if (gx < 0 || gx > g - 1 || gy < 0 || gy > g - 1) {
        if (out_clamped) ++(*out_clamped);
        gx = std::clamp(gx, 0.0, static_cast<double>(g - 1));
        gy = std::clamp(gy, 0.0, static_cast<double>(g - 1));
      }
      i64 x0 = std::max<i64>(0, static_cast<i64>(std::floor(gx)) - reach);
      i64 x1 = std::min<i64>(g - 1, static_cast<i64>(std::ceil(gx)) + reach);
      i64 y0 = std::max<i64>(0, static_cast<i64>(std::floor(gy)) - reach);
      i64 y1 = std::min<i64>(g - 1, static_cast<i64>(std::ceil(gy)) + reach);
      for (i64 y = y0; y <= y1; ++y)
        for (i64 x = x0; x <= x1; ++x) {
          double d2 = (x - gx) * (x - gx) + (y - gy) * (y - gy);
          heat[y * g + x] += static_cast<float>(std::exp(-d2 / (2.0 * bw2)));
        }
    }
    float inv = 1.f / static_cast<float>(ps.n);
    for (auto& v : heat) v *= inv;
    FTensor img({1, g, g}, std::move(heat));
    return m.summary_conv.forward(img);
  }

  // flattened slots; maze keeps the raw heading next to normalized position
  i64 per = flatten_per_particle(m.cfg.task);
  if (ps.n != m.cfg.particles)
    throw std::invalid_argument(
        "flattened particle summary needs the configured particle count");
  std::vector<float> block(ps.n * per);
  for (i64 i = 0; i < ps.n; ++i) {
    auto p = ps.at(i);
    if (m.cfg.task == TaskId::Maze) {
      block[i * per + 0] = static_cast<float>(
          (p[0] - m.state_norm.mean[0]) / m.state_norm.stdev[0]);
      block[i * per + 1] = static_cast<float>(
          (p[1] - m.state_norm.mean[1]) / m.state_norm.stdev[1]);
      block[i * per + 2] = p[2];
    } else {
      auto enc = tasks::encode_state(m.cfg.task, p);
      auto z = m.state_norm.normalize(enc);
      std::copy(z.begin(), z.end(), block.begin() + i * per);
    }
  }
  constexpr float lim = static_cast<float>(kSummaryClip);
  for (auto& v : block) v = std::clamp(v, -lim, lim);

  // column moments over the clamped slots, heading treated as a plain scalar
  block.resize(block.size() + 2 * per, 0.f);
  float* mom = block.data() + ps.n * per;
  for (i64 d = 0; d < per; ++d) {
    double s = 0.0, s2 = 0.0;
    for (i64 i = 0; i < ps.n; ++i) {
      double v = block[i * per + d];
      s += v;
      s2 += v * v;
    }
    double mean = s / ps.n;
    double var = std::max(0.0, s2 / ps.n - mean * mean);
    mom[d] = static_cast<float>(mean);
    mom[per + d] = static_cast<float>(std::sqrt(var));
  }
  i64 bw = static_cast<i64>(block.size());
  return FTensor({1, bw}, std::move(block));
}

FTensor zero_summary(const Model& m) {
  return zeros_tensor<float>({1, summary_width(m.cfg)}, false);
}

FTensor make_condition(const FTensor& obs_feat, const FTensor& summary) {
  return concat_cols<float>({obs_feat, summary});
}

void update(const Model& m, ParticleSet& ps, const FTensor& cond,
            std::uint64_t step_seed, bool obs_only) {
  if (m.cfg.method != "diffpf")
    throw std::logic_error("update needs a diffpf model");
  i64 ed = m.enc_dim();
  auto info = tasks::task_info(m.cfg.task);
  const auto& cs = obs_only ? m.calib_obs_scale : m.calib_scale;
  const auto& cb = obs_only ? m.calib_obs_shift : m.calib_shift;
  const auto& csp = obs_only ? m.calib_obs_spread : m.calib_spread;
  bool inflate = false;
  for (i64 d = 0; d < ed; ++d) inflate |= csp[d] != 1.f;

  std::vector<std::vector<float>> zs(ps.n);
  std::vector<double> zmean(ed, 0.0);
  for (i64 i = 0; i < ps.n; ++i) {
    GaussianDraw chain(step_seed + static_cast<std::uint64_t>(i));
    zs[i] = diffusion::sample_posterior(m.denoiser, cond, m.schedule, ed,
                                        chain, kSampleClip);
    for (i64 d = 0; d < ed; ++d) {
      zs[i][d] = cs[d] * zs[i][d] + cb[d];
      zmean[d] += zs[i][d];
    }
  }
  ParticleSet out{ps.n, info.pose_dim,
                  std::vector<float>(ps.n * info.pose_dim)};
  for (i64 i = 0; i < ps.n; ++i) {
    if (inflate)
      // widen residuals around the cloud mean; leaves the mean untouched
      for (i64 d = 0; d < ed; ++d) {
        float mu = static_cast<float>(zmean[d] / ps.n);
        zs[i][d] = mu + csp[d] * (zs[i][d] - mu);
      }
    auto enc = m.state_norm.denormalize(zs[i]);
    auto pose = tasks::decode_state(m.cfg.task, enc);
    std::copy(pose.begin(), pose.end(), out.at(i).begin());
  }
  ps = std::move(out);
}

std::vector<float> estimate(TaskId task, const ParticleSet& ps) {
  auto info = tasks::task_info(task);
  std::vector<double> acc(info.pose_dim, 0.0);
  double ssin = 0.0, scos = 0.0;
  for (i64 i = 0; i < ps.n; ++i) {
    auto p = ps.at(i);
    for (i64 d = 0; d < info.pose_dim; ++d) acc[d] += p[d];
    if (info.angular_last) {
      ssin += std::sin(static_cast<double>(p[info.pose_dim - 1]));
      scos += std::cos(static_cast<double>(p[info.pose_dim - 1]));
    }
  }
  std::vector<float> est(info.pose_dim);
  for (i64 d = 0; d < info.pose_dim; ++d)
    est[d] = static_cast<float>(acc[d] / ps.n);
  if (info.angular_last)
    est[info.pose_dim - 1] = static_cast<float>(std::atan2(ssin, scos));
  return est;
}

std::vector<float> filter_step(const Model& m, ParticleSet& ps,
                               std::span<const float> obs,
                               std::span<const float> action, i64 t,
                               std::uint64_t step_seed,
                               GaussianDraw& predict_rng) {
  if (t > 0) predict(ps, m.cfg.task, action, predict_rng);
  auto obs_feat = encode_observation(m, obs);
  // the first step has no prediction to summarize, and an untrained summary
  // head would feed noise, so both cases condition on the observation alone
  bool obs_only = !m.summary_trained || t == 0;
  auto summary = obs_only ? zero_summary(m) : particle_summary(m, ps);
  auto cond = make_condition(obs_feat, summary);
  update(m, ps, cond, step_seed, obs_only);
  return estimate(m.cfg.task, ps);
}

std::vector<float> regressor_estimate(const Model& m,
                                      std::span<const float> obs) {
  if (m.cfg.method != "regressor")
    throw std::logic_error("regressor_estimate needs a regressor model");
  auto feat = encode_observation(m, obs);
  auto out = m.head.forward(feat);
  auto enc = m.state_norm.denormalize(out.values());
  return tasks::decode_state(m.cfg.task, enc);
}

}  // namespace diffpf::filter
