#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffpf/baselines.hpp"
#include "diffpf/filter.hpp"
#include "diffpf/tasks.hpp"

namespace diffpf::eval {

using tasks::i64;

// deterministic stream splitter for (seed, index) pairs
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// dimensions the error metrics score (headings are tracked but not scored)
i64 error_dims(tasks::TaskId task);

struct EvalConfig {
  i64 particles = 32;
  std::vector<std::uint64_t> seeds{0};
  // optional CSV sink for estimated and true trajectories
  std::optional<std::filesystem::path> trajectory_csv;
  bool particle_columns = true;  // include every particle in the CSV
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double mse = 0, rmse = 0, final_rmse = 0;
  double hz = 0;   // filter steps per wall second, first step of each
                   // sequence excluded
  i64 timed_steps = 0;
};

struct Report {
  std::string task, method;
  i64 particles = 0, diffusion_steps = 0;
  i64 num_sequences = 0, seq_len = 0;
  std::vector<SeedMetrics> per_seed;

  double median_mse() const;
  double median_rmse() const;
  double median_final_rmse() const;
  double median_hz() const;

  std::string to_json() const;  // stable key order, recomputable aggregates
  void write(const std::filesystem::path& path) const;
};

// Runs the filter over the test split of ds, once per seed. Flattened-summary
// tasks require cfg.particles to match the model's configured count.
Report run_diffpf(const filter::Model& m, const tasks::TrajectoryDataset& ds,
                  const EvalConfig& cfg);

// Bootstrap-filter baseline around a trained regressor. Fits the
// pseudo-likelihood variance on the training split.
Report run_bpf(const filter::Model& regressor,
               const tasks::TrajectoryDataset& ds, const EvalConfig& cfg,
               double soft_alpha = 0.5);

// Exact Kalman posterior mean for the linear-Gaussian task. Deterministic,
// so the seed list collapses to one entry.
Report run_kalman(const tasks::TrajectoryDataset& ds);

// per-step Kalman posterior mean and variance for one observation sequence
struct KalmanTrack {
  std::vector<std::array<double, 2>> mean;  // [T]
  std::vector<double> var;                  // [T]
};
KalmanTrack kalman_track(const tasks::TrajectoryDataset& ds, i64 seq);

// expected final-step RMSE of a pose guessed uniformly over free space,
// the analytic floor any informed maze filter has to beat
double maze_uniform_prior_rmse(const tasks::TrajectoryDataset& ds);

}  // namespace diffpf::eval
