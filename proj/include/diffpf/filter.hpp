#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffpf/diffusion.hpp"
#include "diffpf/nn.hpp"
#include "diffpf/random.hpp"
#include "diffpf/tasks.hpp"
#include "diffpf/tensor.hpp"

namespace diffpf::filter {

using tasks::i64;

// Per-dimension affine map between encoded state space and the normalized
// space the diffusion model works in.
struct Normalizer {
  std::vector<double> mean, stdev;

  i64 dim() const { return static_cast<i64>(mean.size()); }
  std::vector<float> normalize(std::span<const float> v) const;
  std::vector<float> denormalize(std::span<const float> v) const;
};

struct ModelConfig {
  std::string method = "diffpf";  // "diffpf" or "regressor"
  tasks::TaskId task = tasks::TaskId::Lg;
  i64 particles = 32;        // N the conditioning layout is built for
  i64 diffusion_steps = 10;  // K
  i64 feature_dim = 128;
  i64 image_size = 64;  // disk observation size
  std::uint64_t init_seed = 0;
};

// disk summarizes particles as an encoded heatmap (width = feature_dim);
// the other tasks flatten normalized particle states into fixed slots
i64 summary_width(const ModelConfig& cfg);
i64 cond_width(const ModelConfig& cfg);

// disk particle heatmap: square grid over the native frame, Gaussian splat
constexpr i64 kHeatmapGrid = 32;
constexpr double kHeatmapBandwidth = 2.0;  // grid cells

// bounds in normalized state space; the flattened summary and the sampled
// posterior both stay inside them, so a stray particle cannot push the
// conditioning out of the range the denoiser was trained on
constexpr double kSummaryClip = 4.0;
constexpr double kSampleClip = 8.0;

struct Model {
  ModelConfig cfg;
  nn::ParamStore params;
  nn::ConvEncoder obs_conv;      // image observations
  nn::MlpEncoder obs_mlp;        // vector observations
  nn::ConvEncoder summary_conv;  // disk heatmap encoder
  nn::DenoiserNet denoiser;      // diffpf head
  nn::Linear head;               // regressor head
  diffusion::NoiseSchedule schedule;
  Normalizer state_norm;  // over encoded state space
  Normalizer obs_norm;    // vector observations only

  // whether the denoiser was last trained to read particle summaries;
  // until then inference conditions on the observation alone, since the
  // summary input columns are still at their random initialization
  bool summary_trained = false;

  // per-dimension affine readout in normalized space, fitted after training
  // so the sampled cloud is centered on the conditional target; the chain's
  // terminal mean otherwise responds slightly sublinearly to it. One pair for
  // summary-conditioned updates, one for observation-only updates.
  std::vector<float> calib_scale, calib_shift;
  std::vector<float> calib_obs_scale, calib_obs_shift;
  // residual inflation around the sampled cloud mean, fitted alongside the
  // affine; the chain runs under-dispersed relative to the target posterior
  // and a too-narrow cloud makes the filter over-trust its own prediction
  std::vector<float> calib_spread, calib_obs_spread;

  i64 enc_dim() const { return tasks::encoded_dim(cfg.task); }
};

Model build_model(const ModelConfig& cfg, Normalizer state_norm,
                  Normalizer obs_norm);
// pulls the normalizers out of dataset metadata
Model fresh_model(const ModelConfig& cfg, const tasks::DatasetMeta& meta);

// single-file checkpoint: magic, JSON header (config, normalizers, schedule,
// tensor manifest), then raw f32 parameter blob in manifest order
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// observation -> [1, feature_dim]; images are mapped to [-1, 1], vectors are
// standardized with the stored statistics
FTensor encode_observation(const Model& m, std::span<const float> obs);

// Equally weighted particles in raw pose space.
struct ParticleSet {
  i64 n = 0, dim = 0;
  std::vector<float> x;  // [n, dim]

  std::span<float> at(i64 i) { return {x.data() + i * dim, static_cast<size_t>(dim)}; }
  std::span<const float> at(i64 i) const {
    return {x.data() + i * dim, static_cast<size_t>(dim)};
  }
};

// task prior: disk uniform over the frame, maze uniform over free space,
// lg/bimodal the initial-state Gaussian
ParticleSet init_particles(tasks::TaskId task, i64 n, GaussianDraw& rng);

// pushes every particle through the stochastic process model
void predict(ParticleSet& ps, tasks::TaskId task, std::span<const float> action,
             GaussianDraw& rng);
// process-noise scale used when propagating disk particles
constexpr double kDiskPredictStd = 1.0;

// particle summary block [1, summary_width]; out_clamped counts disk
// particles that fell outside the heatmap extent and were clamped to its edge
FTensor particle_summary(const Model& m, const ParticleSet& ps,
                         i64* out_clamped = nullptr);
// zero summary block, the phase-1 conditioning
FTensor zero_summary(const Model& m);

FTensor make_condition(const FTensor& obs_feat, const FTensor& summary);

// replaces the set with n fresh draws from the conditional sampler; chain i
// runs on its own stream seeded step_seed + i. obs_only selects the readout
// calibration matching a zero-summary condition.
void update(const Model& m, ParticleSet& ps, const FTensor& cond,
            std::uint64_t step_seed, bool obs_only = false);

// particle mean; heading dimensions use the circular mean
std::vector<float> estimate(tasks::TaskId task, const ParticleSet& ps);

// one filter step at time t: predict (skipped at t = 0), encode, fuse, update,
// estimate. predict_rng drives process noise; step_seed seeds the sampler.
std::vector<float> filter_step(const Model& m, ParticleSet& ps,
                               std::span<const float> obs,
                               std::span<const float> action, i64 t,
                               std::uint64_t step_seed, GaussianDraw& predict_rng);

// regressor readout: observation -> decoded raw state estimate
std::vector<float> regressor_estimate(const Model& m,
                                      std::span<const float> obs);

}  // namespace diffpf::filter
