#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace diffpf {

// Seeded standard-normal stream. The transform is written out here instead of
// using std::normal_distribution so the exact sequence is owned by this code:
// identical seed, identical bits, on any build of this project with the same
// toolchain.
class GaussianDraw {
 public:
  explicit GaussianDraw(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // lo..hi inclusive; modulo bias is < 2^-40 for every range used here
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<std::int64_t>(eng_() % span);
  }

  // Box-Muller pair, second value cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void fill_normal(std::span<T> out) {
    for (auto& x : out) x = static_cast<T>(normal());
  }

  template <class T>
  std::vector<T> normal_vec(std::size_t n) {
    std::vector<T> v(n);
    fill_normal<T>(v);
    return v;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace diffpf
