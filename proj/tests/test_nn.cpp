#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffpf/nn.hpp"

using namespace diffpf;
using namespace diffpf::nn;

TEST_CASE("sinusoidal embedding interleaves sin and cos") {
  const FTensor e0 = sinusoidal_embed(0, 32);
  for (i64 i = 0; i < 16; ++i) {
    CHECK(e0.values()[2 * i] == 0.0f);
    CHECK(e0.values()[2 * i + 1] == 1.0f);
  }
  const FTensor e5 = sinusoidal_embed(5, 32);
  for (i64 i = 0; i < 16; ++i) {
    const double f = std::pow(10000.0, -2.0 * i / 32.0);
    CHECK(e5.values()[2 * i] == doctest::Approx(std::sin(5.0 * f)));
    CHECK(e5.values()[2 * i + 1] == doctest::Approx(std::cos(5.0 * f)));
  }
  CHECK_THROWS_AS(sinusoidal_embed(1, 7), std::invalid_argument);
}

TEST_CASE("conv encoder maps both task geometries to feature_dim") {
  ParamStore ps;
  GaussianDraw rng(1);
  ConvEncoder disk(ps, "disk_enc", 3, 64, 64, 128, rng);
  ConvEncoder maze(ps, "maze_enc", 1, 24, 24, 128, rng);

  GaussianDraw noise(2);
  FTensor img64({3, 64, 64}, noise.normal_vec<float>(3 * 64 * 64));
  FTensor img24({1, 24, 24}, noise.normal_vec<float>(1 * 24 * 24));
  CHECK(disk.forward(img64).shape() == Shape{1, 128});
  CHECK(maze.forward(img24).shape() == Shape{1, 128});

  CHECK_THROWS_AS(disk.forward(img24), std::invalid_argument);
}

TEST_CASE("zero image through zeroed head gives zero features") {
  ParamStore ps;
  GaussianDraw rng(3);
  ConvEncoder enc(ps, "enc", 1, 24, 24, 128, rng);
  for (auto& v : ps.at("enc.head.w").values()) v = 0.f;
  // conv biases are zero-initialized, so a zero image stays zero through silu
  FTensor zero_img({1, 24, 24}, std::vector<float>(24 * 24, 0.f));
  const FTensor f = enc.forward(zero_img);
  for (float v : f.values()) CHECK(v == 0.0f);
}

TEST_CASE("parameter count is stable across construction") {
  auto count = [](unsigned seed) {
    ParamStore ps;
    GaussianDraw rng(seed);
    ConvEncoder enc(ps, "obs", 3, 64, 64, 128, rng);
    DenoiserNet den(ps, "den", 2, 256, rng);
    return ps.total_params();
  };
  CHECK(count(1) == count(99));
}

TEST_CASE("registration order survives to names()") {
  ParamStore ps;
  GaussianDraw rng(1);
  Linear a(ps, "a", 4, 5, rng);
  Linear b(ps, "b", 5, 6, rng);
  REQUIRE(ps.names().size() == 4);
  CHECK(ps.names()[0] == "a.w");
  CHECK(ps.names()[1] == "a.b");
  CHECK(ps.names()[2] == "b.w");
  CHECK(ps.names()[3] == "b.b");
  CHECK_THROWS_AS(ps.create("a.w", {1}), std::invalid_argument);
}

TEST_CASE("denoiser output layer starts at zero") {
  ParamStore ps;
  GaussianDraw rng(4);
  DenoiserNet den(ps, "den", 3, 16, rng);
  GaussianDraw noise(5);
  const FTensor x({1, 3}, noise.normal_vec<float>(3));
  const FTensor c({1, 16}, noise.normal_vec<float>(16));
  const FTensor out = den.forward(x, 2, c);
  REQUIRE(out.shape() == Shape{1, 3});
  for (float v : out.values()) CHECK(v == 0.0f);
}

TEST_CASE("skip connection feeds the last hidden stage") {
  ParamStore ps;
  GaussianDraw rng(6);
  DenoiserNet den(ps, "den", 2, 8, rng);
  constexpr i64 h1 = DenoiserNet::kHidden1, h2 = DenoiserNet::kHidden2,
                h3 = DenoiserNet::kHidden3;
  init_uniform(ps.at("den.out.w"), h3, rng);  // make the head observable

  GaussianDraw noise(7);
  const FTensor x({1, 2}, noise.normal_vec<float>(2));
  const FTensor c({1, 8}, noise.normal_vec<float>(8));
  const FTensor before = den.forward(x, 1, c);

  // l3 consumes concat(h2, h1); rows h2.. of its weight are the skip
  auto w3 = ps.at("den.l3.w");
  REQUIRE(w3.shape() == Shape{h2 + h1, h3});
  for (i64 r = h2; r < h2 + h1; ++r)
    for (i64 col = 0; col < h3; ++col) w3.values()[r * h3 + col] = 0.f;
  const FTensor after = den.forward(x, 1, c);

  bool changed = false;
  for (i64 i = 0; i < before.numel(); ++i)
    changed = changed || before.values()[i] != after.values()[i];
  CHECK(changed);
}

TEST_CASE("denoiser validates state and condition widths") {
  ParamStore ps;
  GaussianDraw rng(8);
  DenoiserNet den(ps, "den", 2, 8, rng);
  const FTensor ok_x({1, 2}, {0.f, 0.f});
  const FTensor bad_x({1, 3}, {0.f, 0.f, 0.f});
  const FTensor ok_c({1, 8}, std::vector<float>(8, 0.f));
  const FTensor bad_c({1, 9}, std::vector<float>(9, 0.f));
  CHECK_THROWS_AS(den.forward(bad_x, 1, ok_c), std::invalid_argument);
  CHECK_THROWS_AS(den.forward(ok_x, 1, bad_c), std::invalid_argument);
}

TEST_CASE("init bounds follow fan-in") {
  ParamStore ps;
  GaussianDraw rng(9);
  Linear l(ps, "l", 100, 50, rng);
  const float bound = 1.0f / std::sqrt(100.0f);
  float max_abs = 0.f;
  for (float v : ps.at("l.w").values()) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.5f * bound);  // not degenerate
  for (float v : ps.at("l.b").values()) CHECK(v == 0.0f);
}
