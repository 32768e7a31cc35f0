#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffpf/filter.hpp"
#include "diffpf/nn.hpp"
#include "diffpf/tasks.hpp"

namespace diffpf::train {

using tasks::i64;

struct AdamConfig {
  double lr_start = 1e-3;
  double lr_end = 1e-5;  // cosine decay target over the run
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 10.0;
};

// Adam over every tensor in a ParamStore. step() consumes the accumulated
// gradients and zeroes them. A non-finite gradient norm skips the update and
// is counted instead of poisoning the moments.
class Adam {
 public:
  Adam(nn::ParamStore& ps, AdamConfig cfg, i64 total_steps);

  double step();  // returns the pre-clip gradient norm
  double current_lr() const;
  i64 steps_taken() const { return t_; }
  i64 skipped() const { return skipped_; }

 private:
  nn::ParamStore* ps_;
  AdamConfig cfg_;
  i64 total_steps_, t_ = 0, skipped_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainConfig {
  i64 iterations = 4000;
  i64 batch = 64;
  i64 phase = 1;  // 1: zero particle summary, 2: teacher-forced summary
  std::uint64_t seed = 0;
  AdamConfig adam;
  // teacher-forcing jitter applied to the previous true state, per raw pose
  // dimension; empty picks the task default
  std::vector<double> tf_noise;
};

std::vector<double> default_tf_noise(tasks::TaskId task);

// teacher-forced stand-in for the predicted particle cloud at (seq, t):
// jittered previous true state pushed through the stochastic process model;
// t = 0 draws from the task prior exactly like inference does
filter::ParticleSet teacher_particles(const filter::Model& m,
                                      const tasks::TrajectoryDataset& ds,
                                      i64 seq, i64 t,
                                      const std::vector<double>& tf_noise,
                                      GaussianDraw& rng);

struct TrainResult {
  std::vector<float> loss_trace;  // one entry per iteration
  i64 skipped_updates = 0;
};

// Trains in place on the training split. method "diffpf" minimizes the
// noise-prediction loss; "regressor" a squared error in normalized encoded
// space. Throws if the loss ever turns non-finite.
TrainResult train_model(filter::Model& m, const tasks::TrajectoryDataset& ds,
                        const TrainConfig& cfg);

void write_loss_trace(const std::vector<float>& trace,
                      const std::filesystem::path& path);

}  // namespace diffpf::train
