#include "diffpf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace diffpf::nn {

FTensor& ParamStore::create(const std::string& name, Shape shape) {
  if (map_.count(name))
    throw std::invalid_argument("param already registered: " + name);
  const i64 n = shape_numel(shape);
  FTensor t(std::move(shape), std::vector<float>(n, 0.f), true);
  names_.push_back(name);
  return map_.emplace(name, std::move(t)).first->second;
}

FTensor& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::invalid_argument("no such param: " + name);
  return it->second;
}

const FTensor& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::invalid_argument("no such param: " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return map_.count(name) > 0;
}

i64 ParamStore::total_params() const {
  i64 n = 0;
  for (const auto& name : names_) n += map_.at(name).numel();
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& name : names_) map_.at(name).zero_grad();
}

void init_uniform(FTensor& t, i64 fan_in, GaussianDraw& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (auto& v : t.values())
    v = bound * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
}

FTensor sinusoidal_embed(i64 k, i64 dim) {
  if (dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: dim must be even, got " +
                                std::to_string(dim));
  std::vector<float> v(dim);
  for (i64 i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    const double a = static_cast<double>(k) * freq;
    v[2 * i] = static_cast<float>(std::sin(a));
    v[2 * i + 1] = static_cast<float>(std::cos(a));
  }
  return FTensor({1, dim}, std::move(v));
}

Linear::Linear(ParamStore& ps, const std::string& prefix, i64 in, i64 out,
               GaussianDraw& rng, bool zero_init) {
  w_ = &ps.create(prefix + ".w", {in, out});
  b_ = &ps.create(prefix + ".b", {1, out});
  if (!zero_init) init_uniform(*w_, in, rng);
}

FTensor Linear::forward(const FTensor& x) const {
  return add(matmul(x, *w_), *b_);
}

Conv::Conv(ParamStore& ps, const std::string& prefix, i64 cin, i64 cout,
           i64 ksize, i64 stride, i64 pad, GaussianDraw& rng)
    : stride_(stride), pad_(pad) {
  k_ = &ps.create(prefix + ".k", {cout, cin, ksize, ksize});
  b_ = &ps.create(prefix + ".b", {cout});
  init_uniform(*k_, cin * ksize * ksize, rng);
}

FTensor Conv::forward(const FTensor& x) const {
  return add_channel_bias(conv2d(x, *k_, stride_, pad_), *b_);
}

namespace {

i64 halved(i64 s) { return (s + 2 - 3) / 2 + 1; }  // 3x3, stride 2, pad 1

}  // namespace

ConvEncoder::ConvEncoder(ParamStore& ps, const std::string& prefix,
                         i64 in_channels, i64 image_h, i64 image_w,
                         i64 feature_dim, GaussianDraw& rng)
    : cin_(in_channels), h_(image_h), w_(image_w), feature_dim_(feature_dim) {
  c1_ = Conv(ps, prefix + ".c1", in_channels, 16, 3, 2, 1, rng);
  c2_ = Conv(ps, prefix + ".c2", 16, 32, 3, 2, 1, rng);
  c3_ = Conv(ps, prefix + ".c3", 32, 64, 3, 2, 1, rng);
  const i64 h3 = halved(halved(halved(image_h)));
  const i64 w3 = halved(halved(halved(image_w)));
  if (h3 < 1 || w3 < 1)
    throw std::invalid_argument("encoder input too small: " +
                                std::to_string(image_h) + "x" +
                                std::to_string(image_w));
  flat_ = 64 * h3 * w3;
  head_ = Linear(ps, prefix + ".head", flat_, feature_dim, rng);
}

FTensor ConvEncoder::forward(const FTensor& image) const {
  if (image.shape() != Shape{cin_, h_, w_})
    throw std::invalid_argument("encoder expects " +
                                shape_str({cin_, h_, w_}) + ", got " +
                                shape_str(image.shape()));
  FTensor h = silu(c1_.forward(image));
  h = silu(c2_.forward(h));
  h = silu(c3_.forward(h));
  return head_.forward(reshape(h, {1, flat_}));
}

MlpEncoder::MlpEncoder(ParamStore& ps, const std::string& prefix, i64 obs_dim,
                       i64 hidden, i64 feature_dim, GaussianDraw& rng)
    : obs_dim_(obs_dim), feature_dim_(feature_dim) {
  l1_ = Linear(ps, prefix + ".l1", obs_dim, hidden, rng);
  l2_ = Linear(ps, prefix + ".l2", hidden, feature_dim, rng);
}

FTensor MlpEncoder::forward(const FTensor& obs) const {
  if (obs.shape() != Shape{1, obs_dim_})
    throw std::invalid_argument("encoder expects [1," +
                                std::to_string(obs_dim_) + "], got " +
                                shape_str(obs.shape()));
  return l2_.forward(silu(l1_.forward(obs)));
}

DenoiserNet::DenoiserNet(ParamStore& ps, const std::string& prefix,
                         i64 state_dim, i64 cond_width, GaussianDraw& rng)
    : state_dim_(state_dim), cond_width_(cond_width) {
  const i64 in = state_dim + kTimeEmbedDim + cond_width;
  l1_ = Linear(ps, prefix + ".l1", in, kHidden1, rng);
  l2_ = Linear(ps, prefix + ".l2", kHidden1, kHidden2, rng);
  l3_ = Linear(ps, prefix + ".l3", kHidden2 + kHidden1, kHidden3, rng);
  out_ = Linear(ps, prefix + ".out", kHidden3, state_dim, rng,
                /*zero_init=*/true);
}

FTensor DenoiserNet::forward(const FTensor& x_k, i64 k,
                             const FTensor& cond) const {
  if (x_k.shape() != Shape{1, state_dim_})
    throw std::invalid_argument("denoiser state: want [1," +
                                std::to_string(state_dim_) + "], got " +
                                shape_str(x_k.shape()));
  if (cond.shape() != Shape{1, cond_width_})
    throw std::invalid_argument("denoiser condition: want [1," +
                                std::to_string(cond_width_) + "], got " +
                                shape_str(cond.shape()));
  const FTensor emb = sinusoidal_embed(k, kTimeEmbedDim);
  const FTensor in = concat_cols<float>({x_k, emb, cond});
  const FTensor h1 = silu(l1_.forward(in));
  const FTensor h2 = silu(l2_.forward(h1));
  const FTensor h3 = silu(l3_.forward(concat_cols<float>({h2, h1})));
  return out_.forward(h3);
}

}  // namespace diffpf::nn
