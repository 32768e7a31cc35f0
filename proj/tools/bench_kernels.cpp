// Compares the serial reference kernels against the OpenMP variants on the
// shapes this project actually runs (encoder convolutions, linear layers).
// Usage: bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "diffpf/kernels.hpp"
#include "diffpf/random.hpp"

namespace k = diffpf::kernels;
using i64 = k::i64;

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(
             clock::now().time_since_epoch())
      .count();
}

template <class Fn>
double time_ms(int repeats, Fn&& fn) {
  fn();  // warm-up
  const double t0 = now_ms();
  for (int i = 0; i < repeats; ++i) fn();
  return (now_ms() - t0) / repeats;
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
  std::printf("%-34s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n",
              name.c_str(), serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
  const int threads = k::max_threads();
  std::printf("threads: %d, repeats: %d\n", threads, repeats);

  diffpf::GaussianDraw g(1);

  {
    const i64 m = 64, kk = 4096, n = 128;  // encoder head as a batch matmul
    auto a = g.normal_vec<float>(m * kk);
    auto b = g.normal_vec<float>(kk * n);
    std::vector<float> y(m * n);
    report("matmul 64x4096x128",
           time_ms(repeats, [&] {
             k::matmul_serial(a.data(), b.data(), y.data(), m, kk, n, false,
                              false, false);
           }),
           time_ms(repeats, [&] {
             k::matmul_parallel(a.data(), b.data(), y.data(), m, kk, n, false,
                                false, false, threads);
           }));
  }

  {
    // first encoder stage on a 64x64 RGB frame
    const auto geo = k::conv2d_geometry(3, 64, 64, 16, 3, 3, 3, 2, 1);
    auto x = g.normal_vec<float>(geo.cin * geo.h * geo.w);
    auto kr = g.normal_vec<float>(geo.cout * geo.cin * geo.kh * geo.kw);
    std::vector<float> y(geo.cout * geo.ho * geo.wo);
    report("conv2d 3x64x64 -> 16x32x32",
           time_ms(repeats,
                   [&] { k::conv2d_forward_serial(x.data(), kr.data(), y.data(), geo); }),
           time_ms(repeats, [&] {
             k::conv2d_forward_parallel(x.data(), kr.data(), y.data(), geo,
                                        threads);
           }));

    auto gy = g.normal_vec<float>(y.size());
    std::vector<float> gx(x.size(), 0.f);
    report("conv2d backward input",
           time_ms(repeats,
                   [&] {
                     k::conv2d_backward_input_serial(gy.data(), kr.data(),
                                                     gx.data(), geo);
                   }),
           time_ms(repeats, [&] {
             k::conv2d_backward_input_parallel(gy.data(), kr.data(), gx.data(),
                                               geo, threads);
           }));

    std::vector<float> gk(kr.size(), 0.f);
    report("conv2d backward kernel",
           time_ms(repeats,
                   [&] {
                     k::conv2d_backward_kernel_serial(gy.data(), x.data(),
                                                      gk.data(), geo);
                   }),
           time_ms(repeats, [&] {
             k::conv2d_backward_kernel_parallel(gy.data(), x.data(), gk.data(),
                                                geo, threads);
           }));
  }

  {
    // deeper stage: 32 -> 64 channels on 16x16
    const auto geo = k::conv2d_geometry(32, 16, 16, 64, 32, 3, 3, 2, 1);
    auto x = g.normal_vec<float>(geo.cin * geo.h * geo.w);
    auto kr = g.normal_vec<float>(geo.cout * geo.cin * geo.kh * geo.kw);
    std::vector<float> y(geo.cout * geo.ho * geo.wo);
    report("conv2d 32x16x16 -> 64x8x8",
           time_ms(repeats,
                   [&] { k::conv2d_forward_serial(x.data(), kr.data(), y.data(), geo); }),
           time_ms(repeats, [&] {
             k::conv2d_forward_parallel(x.data(), kr.data(), y.data(), geo,
                                        threads);
           }));
  }

  return 0;
}
