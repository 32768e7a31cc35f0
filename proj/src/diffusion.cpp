#include "diffpf/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffpf::diffusion {

namespace {

constexpr double kAlphaFloor = 1e-3;
constexpr double kCosineOffset = 0.008;

void derive_coefficients(NoiseSchedule& s) {
  const i64 K = s.K;
  s.sigma.assign(K + 1, 0.0);
  s.beta_coef.assign(K + 1, 0.0);
  s.gamma_coef.assign(K + 1, 0.0);
  for (i64 k = 1; k <= K; ++k) {
    const double a = s.alpha[k];
    const double ab = s.alpha_bar[k];
    const double ab_prev = s.alpha_bar[k - 1];
    s.beta_coef[k] = 1.0 / std::sqrt(a);
    s.gamma_coef[k] = -(1.0 - a) / std::sqrt(1.0 - ab);
    s.sigma[k] =
        k == 1 ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - a));
  }
}

void check_k(i64 k, const NoiseSchedule& s, const char* op) {
  if (k < 1 || k > s.K)
    throw std::invalid_argument(std::string(op) + ": step " +
                                std::to_string(k) + " outside 1.." +
                                std::to_string(s.K));
}

}  // namespace

NoiseSchedule build_schedule(i64 K) {
  if (K < 1)
    throw std::invalid_argument("schedule: K must be >= 1, got " +
                                std::to_string(K));
  auto profile = [K](i64 k) {
    const double t = (static_cast<double>(k) / static_cast<double>(K) +
                      kCosineOffset) /
                     (1.0 + kCosineOffset);
    const double c = std::cos(t * M_PI / 2.0);
    return c * c;
  };
  const double f0 = profile(0);

  std::vector<double> alpha_bar(K + 1, 1.0);
  for (i64 k = 1; k <= K; ++k) {
    const double raw_ratio = profile(k) / profile(k - 1);
    alpha_bar[k] = alpha_bar[k - 1] * std::max(raw_ratio, kAlphaFloor);
  }
  (void)f0;
  // alpha_bar is the persisted array; deriving the rest through the same
  // path as checkpoint load keeps save/load bit-identical
  return schedule_from_alpha_bar(std::move(alpha_bar));
}

NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 2 || alpha_bar[0] != 1.0)
    throw std::invalid_argument(
        "schedule: alpha_bar must start at 1 and cover at least one step");
  NoiseSchedule s;
  s.K = static_cast<i64>(alpha_bar.size()) - 1;
  s.alpha_bar = std::move(alpha_bar);
  s.alpha.assign(s.K + 1, 1.0);
  for (i64 k = 1; k <= s.K; ++k) {
    const double ratio = s.alpha_bar[k] / s.alpha_bar[k - 1];
    if (!(ratio > 0.0 && ratio < 1.0))
      throw std::invalid_argument("schedule: alpha_bar not strictly decreasing "
                                  "in (0,1) at step " +
                                  std::to_string(k));
    // the division can land one ulp under the floor the builder applied
    s.alpha[k] = std::max(ratio, kAlphaFloor);
  }
  derive_coefficients(s);
  return s;
}

template <class T>
std::vector<T> q_sample(std::span<const T> x0, i64 k, std::span<const T> eps,
                        const NoiseSchedule& s) {
  check_k(k, s, "q_sample");
  if (x0.size() != eps.size())
    throw std::invalid_argument("q_sample: x0 has " +
                                std::to_string(x0.size()) + " dims, eps " +
                                std::to_string(eps.size()));
  const T a = static_cast<T>(std::sqrt(s.alpha_bar[k]));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar[k]));
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <class T>
std::vector<T> reverse_step(std::span<const T> x_k, i64 k,
                            std::span<const T> eps_hat, std::span<const T> z,
                            const NoiseSchedule& s) {
  check_k(k, s, "reverse_step");
  if (x_k.size() != eps_hat.size() || (k > 1 && z.size() != x_k.size()))
    throw std::invalid_argument("reverse_step: dimension mismatch");
  const T beta = static_cast<T>(s.beta_coef[k]);
  const T gamma = static_cast<T>(s.gamma_coef[k]);
  const T sig = static_cast<T>(s.sigma[k]);
  std::vector<T> out(x_k.size());
  for (std::size_t i = 0; i < x_k.size(); ++i) {
    out[i] = beta * (x_k[i] + gamma * eps_hat[i]);
    if (k > 1) out[i] += sig * z[i];
  }
  return out;
}

template std::vector<float> q_sample<float>(std::span<const float>, i64,
                                            std::span<const float>,
                                            const NoiseSchedule&);
template std::vector<double> q_sample<double>(std::span<const double>, i64,
                                              std::span<const double>,
                                              const NoiseSchedule&);
template std::vector<float> reverse_step<float>(std::span<const float>, i64,
                                                std::span<const float>,
                                                std::span<const float>,
                                                const NoiseSchedule&);
template std::vector<double> reverse_step<double>(std::span<const double>, i64,
                                                  std::span<const double>,
                                                  std::span<const double>,
                                                  const NoiseSchedule&);

std::vector<float> sample_posterior(const nn::DenoiserNet& denoiser,
                                    const FTensor& cond,
                                    const NoiseSchedule& s, i64 dim,
                                    GaussianDraw& rng, double clip) {
  std::vector<float> x = rng.normal_vec<float>(dim);
  std::vector<float> z(dim, 0.f);
  for (i64 k = s.K; k >= 1; --k) {
    const FTensor xt({1, dim}, x);
    const FTensor eps_hat = denoiser.forward(xt, k, cond);
    if (k > 1) rng.fill_normal<float>(z);
    x = reverse_step<float>(x, k, eps_hat.values(), z, s);
    if (clip > 0)
      for (auto& v : x)
        v = std::clamp(v, static_cast<float>(-clip), static_cast<float>(clip));
  }
  return x;
}

FTensor ddpm_loss(const std::vector<std::vector<float>>& x0_batch,
                  const std::vector<FTensor>& conds,
                  const nn::DenoiserNet& denoiser, const NoiseSchedule& s,
                  GaussianDraw& rng) {
  if (x0_batch.empty() || x0_batch.size() != conds.size())
    throw std::invalid_argument("ddpm_loss: batch of " +
                                std::to_string(x0_batch.size()) +
                                " states vs " + std::to_string(conds.size()) +
                                " conditions");
  std::vector<FTensor> per_sample;
  per_sample.reserve(x0_batch.size());
  for (std::size_t i = 0; i < x0_batch.size(); ++i) {
    const auto& x0 = x0_batch[i];
    const i64 k = rng.uniform_int(1, s.K);
    const std::vector<float> eps = rng.normal_vec<float>(x0.size());
    const std::vector<float> xk = q_sample<float>(x0, k, eps, s);
    const FTensor xk_t({1, static_cast<i64>(xk.size())}, xk);
    const FTensor eps_t({1, static_cast<i64>(eps.size())}, eps);
    const FTensor pred = denoiser.forward(xk_t, k, conds[i]);
    per_sample.push_back(sum(square(sub(eps_t, pred))));
  }
  return scale(add_many(per_sample),
               1.0f / static_cast<float>(per_sample.size()));
}

}  // namespace diffpf::diffusion
