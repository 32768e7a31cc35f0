#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "diffpf/filter.hpp"
#include "diffpf/random.hpp"
#include "diffpf/tasks.hpp"

namespace diffpf::baselines {

using tasks::i64;

struct WeightedParticleSet {
  i64 n = 0, dim = 0;
  std::vector<float> x;   // [n, dim]
  std::vector<double> w;  // normalized

  std::span<float> at(i64 i) { return {x.data() + i * dim, static_cast<size_t>(dim)}; }
  std::span<const float> at(i64 i) const {
    return {x.data() + i * dim, static_cast<size_t>(dim)};
  }
};

WeightedParticleSet from_prior(tasks::TaskId task, i64 n, GaussianDraw& rng);

// Systematic resampling from the softened proposal q = alpha w + (1-alpha)/n.
// Surviving weights are corrected by w/q and renormalized, so the estimator
// stays unbiased for any alpha; alpha = 1 reduces to plain resampling.
void soft_resample(WeightedParticleSet& ps, double alpha, GaussianDraw& rng);

std::vector<float> weighted_estimate(tasks::TaskId task,
                                     const WeightedParticleSet& ps);

struct BpfConfig {
  double soft_alpha = 0.5;
  // per-dimension variance of the pseudo-likelihood centered on the regressor
  // output (heading dims compare wrapped differences)
  std::vector<double> likelihood_var;
};

struct BpfStats {
  i64 degeneracy_resets = 0;
};

// Regressor residual variance on the training split, the natural scale for
// the pseudo-likelihood. Evaluates at most max_samples frames, evenly spaced.
std::vector<double> fit_residual_variance(const filter::Model& regressor,
                                          const tasks::TrajectoryDataset& ds,
                                          i64 max_samples = 4000);

// One bootstrap-filter step: propagate (skipped at t = 0), reweight with the
// pseudo-likelihood, estimate, then soft resample. Collapsed weights reset to
// uniform and are counted in stats.
std::vector<float> bpf_step(const filter::Model& regressor,
                            WeightedParticleSet& ps, std::span<const float> obs,
                            std::span<const float> action, i64 t,
                            const BpfConfig& cfg, GaussianDraw& rng,
                            BpfStats* stats = nullptr);

// Exact posterior for the linear-Gaussian task. The model is isotropic
// (A, Q, H, R all scalar multiples of I), so one variance covers both dims.
struct KalmanBelief {
  std::array<double, 2> mean{0.0, 0.0};
  double var = tasks::lg::kP0;
};

// t = 0 is a pure measurement update of the prior; later steps predict first
void kalman_step(KalmanBelief& b, std::span<const float> z, i64 t);

}  // namespace diffpf::baselines
