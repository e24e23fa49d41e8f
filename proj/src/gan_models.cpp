#include "llgan/gan_models.hpp"

#include <cmath>

namespace llgan::gan {

namespace {
int scaled(int depth, float scale) {
  return std::max(1, static_cast<int>(std::lround(depth * scale)));
}
}  // namespace

Generator::Generator(GeneratorConfig cfg) : cfg_(cfg) {
  struct Row { int depth, kernel, stride, pad; };
  const Row table[] = {
      {1024, 8, 2, 0}, {512, 4, 2, 0}, {256, 4, 2, 1},
      {128, 4, 2, 1},  {64, 2, 2, 1},  {3, 2, 2, 1},
  };
  int in_ch = cfg_.latent_dim;
  for (size_t i = 0; i < std::size(table); ++i) {
    const bool head = i + 1 == std::size(table);
    const int out_ch = head ? 3 : scaled(table[i].depth, cfg_.channel_scale);
    blocks_.emplace_back(in_ch, out_ch, table[i].kernel, table[i].stride,
                         table[i].pad);
    if (!head) norms_.emplace_back(out_ch);
    in_ch = out_ch;
  }
}

FTensor Generator::forward(const FTensor& z, bool train) {
  if (z.shape().size() != 2 || z.dim(1) != cfg_.latent_dim)
    throw std::invalid_argument("generator: expected N x " +
                                std::to_string(cfg_.latent_dim) +
                                " latent, got " + nn::shape_str(z.shape()));
  FTensor x = nn::reshape(z, {z.dim(0), cfg_.latent_dim, 1, 1});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x);
    if (i + 1 < blocks_.size()) {
      x = norms_[i](x, train);
      x = nn::relu(x);
    } else {
      x = nn::tanh_act(x);
    }
  }
  return x;
}

void Generator::init_weights(uint64_t seed) {
  Rng rng(seed);
  for (auto& b : blocks_) b.init(rng);
  for (auto& n : norms_) n.init(rng);
}

std::vector<nn::NamedParam> Generator::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect("g.block" + std::to_string(i), out);
  std::vector<nn::NamedBuffer> ignored;
  for (size_t i = 0; i < norms_.size(); ++i)
    norms_[i].collect("g.bn" + std::to_string(i), out, ignored);
  return out;
}

std::vector<nn::NamedBuffer> Generator::named_buffers() {
  std::vector<nn::NamedParam> ignored;
  std::vector<nn::NamedBuffer> out;
  for (size_t i = 0; i < norms_.size(); ++i)
    norms_[i].collect("g.bn" + std::to_string(i), ignored, out);
  return out;
}

Discriminator::Discriminator(DiscriminatorConfig cfg) : cfg_(cfg) {
  struct Row { int depth, kernel, stride, pad; };
  const Row table[] = {
      {64, 4, 2, 1},
      {cfg.l3_depth, 3, 2, 1},
      {256, 3, 2, 1},
      {512, 3, 2, 1},
      {cfg.l6_depth, 3, 2, 1},
  };
  int in_ch = 3;
  for (size_t i = 0; i < std::size(table); ++i) {
    const int out_ch = scaled(table[i].depth, cfg_.channel_scale);
    blocks_.emplace_back(in_ch, out_ch, table[i].kernel, table[i].stride,
                         table[i].pad);
    if (i > 0) norms_.emplace_back(out_ch);
    in_ch = out_ch;
  }
  pre_fc_features_ = in_ch * 9 * 9;  // 282 -> 141 -> 71 -> 36 -> 18 -> 9
  fc_ = nn::LinearLayer(pre_fc_features_, 1);
}

FTensor Discriminator::forward(const FTensor& images, bool train) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != 282 || s[3] != 282)
    throw std::invalid_argument("discriminator: expected N x 3 x 282 x 282, got " +
                                nn::shape_str(s));
  FTensor x = images;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x);
    if (i > 0) x = norms_[i - 1](x, train);
    x = nn::leaky_relu(x, 0.2f);
  }
  x = nn::reshape(x, {s[0], pre_fc_features_});
  return fc_(x);
}

void Discriminator::init_weights(uint64_t seed) {
  Rng rng(seed);
  for (auto& b : blocks_) b.init(rng);
  for (auto& n : norms_) n.init(rng);
  fc_.init(rng);
}

std::vector<nn::NamedParam> Discriminator::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect("d.block" + std::to_string(i), out);
  std::vector<nn::NamedBuffer> ignored;
  for (size_t i = 0; i < norms_.size(); ++i)
    norms_[i].collect("d.bn" + std::to_string(i), out, ignored);
  fc_.collect("d.fc", out);
  return out;
}

std::vector<nn::NamedBuffer> Discriminator::named_buffers() {
  std::vector<nn::NamedParam> ignored;
  std::vector<nn::NamedBuffer> out;
  for (size_t i = 0; i < norms_.size(); ++i)
    norms_[i].collect("d.bn" + std::to_string(i), ignored, out);
  return out;
}

}  // namespace llgan::gan
