#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "diffpf/kernels.hpp"
#include "diffpf/random.hpp"

namespace k = diffpf::kernels;
using diffpf::GaussianDraw;
using i64 = k::i64;

namespace {

std::vector<float> randu(GaussianDraw& g, i64 n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(g.normal());
  return v;
}

}  // namespace

TEST_CASE("matmul serial and parallel are bit-identical") {
  GaussianDraw g(11);
  for (int trial = 0; trial < 8; ++trial) {
    const i64 m = g.uniform_int(1, 17), kk = g.uniform_int(1, 23),
              n = g.uniform_int(1, 19);
    for (const bool ta : {false, true}) {
      for (const bool tb : {false, true}) {
        const auto a = randu(g, m * kk);
        const auto b = randu(g, kk * n);
        std::vector<float> y1(m * n, 0.5f), y2(m * n, 0.5f);
        for (const bool acc : {false, true}) {
          k::matmul_serial(a.data(), b.data(), y1.data(), m, kk, n, ta, tb, acc);
          k::matmul_parallel(a.data(), b.data(), y2.data(), m, kk, n, ta, tb,
                             acc, 4);
          CHECK(y1 == y2);
        }
      }
    }
  }
}

TEST_CASE("matmul matches a plain triple loop") {
  GaussianDraw g(12);
  const i64 m = 5, kk = 7, n = 3;
  const auto a = randu(g, m * kk);
  const auto b = randu(g, kk * n);
  std::vector<float> y(m * n);
  k::matmul(a.data(), b.data(), y.data(), m, kk, n);
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) {
      float acc = 0.f;
      for (i64 p = 0; p < kk; ++p) acc += a[i * kk + p] * b[p * n + j];
      CHECK(y[i * n + j] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("conv2d forward serial and parallel are bit-identical") {
  GaussianDraw g(13);
  for (int trial = 0; trial < 6; ++trial) {
    const i64 cin = g.uniform_int(1, 4), h = g.uniform_int(4, 12),
              w = g.uniform_int(4, 12), cout = g.uniform_int(1, 6);
    const i64 stride = g.uniform_int(1, 2), pad = g.uniform_int(0, 1);
    const auto geo = k::conv2d_geometry(cin, h, w, cout, cin, 3, 3, stride, pad);
    const auto x = randu(g, cin * h * w);
    const auto kr = randu(g, cout * cin * 9);
    std::vector<float> y1(cout * geo.ho * geo.wo), y2(y1.size());
    k::conv2d_forward_serial(x.data(), kr.data(), y1.data(), geo);
    k::conv2d_forward_parallel(x.data(), kr.data(), y2.data(), geo, 4);
    CHECK(y1 == y2);

    const auto gy = randu(g, y1.size());
    std::vector<float> gx1(x.size(), 0.f), gx2(x.size(), 0.f);
    k::conv2d_backward_input_serial(gy.data(), kr.data(), gx1.data(), geo);
    k::conv2d_backward_input_parallel(gy.data(), kr.data(), gx2.data(), geo, 4);
    CHECK(gx1 == gx2);

    std::vector<float> gk1(kr.size(), 0.f), gk2(kr.size(), 0.f);
    k::conv2d_backward_kernel_serial(gy.data(), x.data(), gk1.data(), geo);
    k::conv2d_backward_kernel_parallel(gy.data(), x.data(), gk2.data(), geo, 4);
    CHECK(gk1 == gk2);
  }
}

TEST_CASE("conv2d geometry") {
  // 64 -> 32 -> 16 -> 8 with k3 s2 p1
  auto g = k::conv2d_geometry(3, 64, 64, 16, 3, 3, 3, 2, 1);
  CHECK(g.ho == 32);
  CHECK(g.wo == 32);
  g = k::conv2d_geometry(16, 32, 32, 32, 16, 3, 3, 2, 1);
  CHECK(g.ho == 16);

  CHECK_THROWS_AS(k::conv2d_geometry(3, 2, 2, 8, 3, 5, 5, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(k::conv2d_geometry(3, 8, 8, 8, 4, 3, 3, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(k::conv2d_geometry(3, 8, 8, 8, 3, 3, 3, 0, 0),
                  std::invalid_argument);
}

TEST_CASE("kernel output does not depend on thread count") {
  GaussianDraw g(14);
  const i64 m = 33, kk = 31, n = 29;
  const auto a = randu(g, m * kk);
  const auto b = randu(g, kk * n);
  std::vector<float> ref(m * n);
  k::matmul_serial(a.data(), b.data(), ref.data(), m, kk, n, false, false,
                   false);
  for (int threads : {2, 3, 5, 8}) {
    std::vector<float> y(m * n);
    k::matmul_parallel(a.data(), b.data(), y.data(), m, kk, n, false, false,
                       false, threads);
    CHECK(y == ref);
  }
}
