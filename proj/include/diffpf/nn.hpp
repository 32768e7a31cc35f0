#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffpf/random.hpp"
#include "diffpf/tensor.hpp"

namespace diffpf::nn {

// Named parameter registry. Iteration follows registration order, which is
// what the checkpoint manifest serializes, so save/load round-trips keep a
// stable layout.
class ParamStore {
 public:
  FTensor& create(const std::string& name, Shape shape);
  FTensor& at(const std::string& name);
  const FTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  i64 total_params() const;
  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, FTensor> map_;
};

// weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
void init_uniform(FTensor& t, i64 fan_in, GaussianDraw& rng);

// Interleaved [sin, cos] pairs of k / 10000^(2i/dim). k=0 gives [0,1,0,1,...].
FTensor sinusoidal_embed(i64 k, i64 dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, i64 in, i64 out,
         GaussianDraw& rng, bool zero_init = false);
  FTensor forward(const FTensor& x) const;  // [1,in] -> [1,out]
  FTensor& weight() { return *w_; }
  FTensor& bias() { return *b_; }

 private:
  FTensor* w_ = nullptr;  // [in, out]
  FTensor* b_ = nullptr;  // [1, out]
};

class Conv {
 public:
  Conv() = default;
  Conv(ParamStore& ps, const std::string& prefix, i64 cin, i64 cout, i64 ksize,
       i64 stride, i64 pad, GaussianDraw& rng);
  FTensor forward(const FTensor& x) const;  // [cin,h,w] -> [cout,h',w']

 private:
  FTensor* k_ = nullptr;
  FTensor* b_ = nullptr;
  i64 stride_ = 1, pad_ = 0;
};

// Three strided conv stages (16/32/64 channels, 3x3, stride 2, pad 1), silu
// between, flattened and projected to feature_dim. Construction fixes the
// input geometry; forward rejects anything else.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(ParamStore& ps, const std::string& prefix, i64 in_channels,
              i64 image_h, i64 image_w, i64 feature_dim, GaussianDraw& rng);
  FTensor forward(const FTensor& image) const;  // -> [1, feature_dim]

  i64 in_channels() const { return cin_; }
  i64 image_h() const { return h_; }
  i64 image_w() const { return w_; }
  i64 feature_dim() const { return feature_dim_; }

 private:
  Conv c1_, c2_, c3_;
  Linear head_;
  i64 cin_ = 0, h_ = 0, w_ = 0, flat_ = 0, feature_dim_ = 0;
};

// Encoder for tasks whose observation is a plain vector.
class MlpEncoder {
 public:
  MlpEncoder() = default;
  MlpEncoder(ParamStore& ps, const std::string& prefix, i64 obs_dim,
             i64 hidden, i64 feature_dim, GaussianDraw& rng);
  FTensor forward(const FTensor& obs) const;  // [1,obs_dim] -> [1,feature_dim]

  i64 obs_dim() const { return obs_dim_; }
  i64 feature_dim() const { return feature_dim_; }

 private:
  Linear l1_, l2_;
  i64 obs_dim_ = 0, feature_dim_ = 0;
};

// Noise predictor eps_theta(x_k, k, c). Input is the corrupted state, the
// timestep embedding and the condition vector, concatenated. Hidden stages
// 128 -> 64 -> 128; the last hidden stage additionally sees the first one
// (concat skip). Output layer starts at zero so the initial prediction is the
// zero noise field.
class DenoiserNet {
 public:
  static constexpr i64 kTimeEmbedDim = 32;
  static constexpr i64 kHidden1 = 192, kHidden2 = 96, kHidden3 = 192;

  DenoiserNet() = default;
  DenoiserNet(ParamStore& ps, const std::string& prefix, i64 state_dim,
              i64 cond_width, GaussianDraw& rng);
  FTensor forward(const FTensor& x_k, i64 k, const FTensor& cond) const;

  i64 state_dim() const { return state_dim_; }
  i64 cond_width() const { return cond_width_; }

 private:
  Linear l1_, l2_, l3_, out_;
  i64 state_dim_ = 0, cond_width_ = 0;
};

}  // namespace diffpf::nn
