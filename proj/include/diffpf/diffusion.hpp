#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffpf/nn.hpp"
#include "diffpf/random.hpp"
#include "diffpf/tensor.hpp"

namespace diffpf::diffusion {

// Discrete-time schedule, index k = 1..K (index 0 holds alpha_bar = 1).
// alpha_bar follows the squared-cosine profile with offset s = 0.008; each
// per-step alpha is clamped to >= 1e-3 and alpha_bar is re-accumulated from
// the clamped steps. sigma_1 is zero: the last reverse step is deterministic.
struct NoiseSchedule {
  i64 K = 0;
  std::vector<double> alpha;      // [K+1], alpha[0] unused (1.0)
  std::vector<double> alpha_bar;  // [K+1], alpha_bar[0] = 1
  std::vector<double> sigma;      // [K+1], sigma[0] unused (0.0)

  // reverse-update coefficients: x_{k-1} = beta_k (x_k + gamma_k eps) + sigma_k z
  std::vector<double> beta_coef;   // 1 / sqrt(alpha_k)
  std::vector<double> gamma_coef;  // -(1 - alpha_k) / sqrt(1 - alpha_bar_k)
};

NoiseSchedule build_schedule(i64 K);

// Rebuilds every derived array from a stored alpha_bar sequence (element 0
// must be 1). Used when loading checkpoints; bit-identical to the schedule
// that produced the array.
NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar);

// x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps
template <class T>
std::vector<T> q_sample(std::span<const T> x0, i64 k, std::span<const T> eps,
                        const NoiseSchedule& s);

// One reverse step. z is the fresh standard-normal draw; it is ignored at
// k = 1 where sigma is zero.
template <class T>
std::vector<T> reverse_step(std::span<const T> x_k, i64 k,
                            std::span<const T> eps_hat, std::span<const T> z,
                            const NoiseSchedule& s);

// Runs the full reverse chain conditioned on c, starting from a standard
// normal draw. Returns a sample in the normalized diffusion space. A
// positive clip bounds every intermediate state to [-clip, clip], which
// keeps a partially trained chain from amplifying its own mistakes; 0
// leaves the chain untouched.
std::vector<float> sample_posterior(const nn::DenoiserNet& denoiser,
                                    const FTensor& cond,
                                    const NoiseSchedule& s, i64 dim,
                                    GaussianDraw& rng, double clip = 0.0);

// Noise-prediction loss over a batch: for each sample draws k ~ U[1..K] and
// eps ~ N(0,I), corrupts x0, and scores |eps - eps_theta|^2 summed over
// dimensions, averaged over the batch. Records onto the active tape.
FTensor ddpm_loss(const std::vector<std::vector<float>>& x0_batch,
                  const std::vector<FTensor>& conds,
                  const nn::DenoiserNet& denoiser, const NoiseSchedule& s,
                  GaussianDraw& rng);

}  // namespace diffpf::diffusion
