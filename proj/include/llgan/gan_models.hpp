#pragma once

#include <vector>

#include "llgan/layers.hpp"

namespace llgan::gan {

using nn::FTensor;

// Fixed layer table of the generator: kernels/strides/pads pin the
// 1 -> 8 -> 18 -> 36 -> 72 -> 142 -> 282 spatial chain.
struct GeneratorConfig {
  int latent_dim = 500;
  float channel_scale = 1.0f;
};

struct DiscriminatorConfig {
  float channel_scale = 1.0f;
  // Printed table value is 123; stock width is 128. Both are supported.
  int l3_depth = 128;
  // The framework size table is consistent with a 512-deep final block;
  // the printed 1024 is available as an override.
  int l6_depth = 512;
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg = {});

  // z: N x latent_dim -> N x 3 x 282 x 282 in [-1, 1].
  FTensor forward(const FTensor& z, bool train);

  void init_weights(uint64_t seed);
  std::vector<nn::NamedParam> named_params();
  std::vector<nn::NamedBuffer> named_buffers();
  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  std::vector<nn::ConvTranspose2dLayer> blocks_;
  std::vector<nn::BatchNorm2dLayer> norms_;  // all blocks but the tanh head
};

class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig cfg = {});

  // images: N x 3 x 282 x 282 -> N logits (N x 1).
  FTensor forward(const FTensor& images, bool train);

  void init_weights(uint64_t seed);
  std::vector<nn::NamedParam> named_params();
  std::vector<nn::NamedBuffer> named_buffers();
  const DiscriminatorConfig& config() const { return cfg_; }
  int pre_fc_features() const { return pre_fc_features_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<nn::Conv2dLayer> blocks_;
  std::vector<nn::BatchNorm2dLayer> norms_;  // all blocks but the first
  nn::LinearLayer fc_;
  int pre_fc_features_ = 0;
};

}  // namespace llgan::gan
