#pragma once

#include <string>
#include <utility>
#include <vector>

#include "llgan/ops.hpp"
#include "llgan/rng.hpp"
#include "llgan/tensor.hpp"

// Small parameter-holding modules shared by the GAN models, the detector
// and the proxy embedder. float-only; the templated ops stay generic.
namespace llgan::nn {

using FTensor = Tensor<float>;

struct NamedParam {
  std::string name;
  FTensor tensor;
};

// Non-trainable state (batchnorm running stats) saved with checkpoints.
struct NamedBuffer {
  std::string name;
  std::vector<float>* data;
};

struct Conv2dLayer {
  FTensor weight, bias;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int kernel, int stride_, int pad_,
              bool with_bias = true)
      : stride(stride_), pad(pad_) {
    weight = FTensor::zeros({out_ch, in_ch, kernel, kernel}, true);
    if (with_bias) bias = FTensor::zeros({out_ch}, true);
  }

  FTensor operator()(const FTensor& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }

  void init(Rng& rng, float stddev = 0.02f) {
    for (auto& v : weight.data()) v = rng.normal(0.f, stddev);
    if (bias.defined())
      for (auto& v : bias.data()) v = 0.f;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

struct ConvTranspose2dLayer {
  FTensor weight, bias;  // weight: in x out x k x k
  int stride = 1, pad = 0;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(int in_ch, int out_ch, int kernel, int stride_,
                       int pad_, bool with_bias = true)
      : stride(stride_), pad(pad_) {
    weight = FTensor::zeros({in_ch, out_ch, kernel, kernel}, true);
    if (with_bias) bias = FTensor::zeros({out_ch}, true);
  }

  FTensor operator()(const FTensor& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad);
  }

  void init(Rng& rng, float stddev = 0.02f) {
    for (auto& v : weight.data()) v = rng.normal(0.f, stddev);
    if (bias.defined())
      for (auto& v : bias.data()) v = 0.f;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

struct BatchNorm2dLayer {
  FTensor gamma, beta;
  std::vector<float> running_mean, running_var;
  float momentum = 0.1f, eps = 1e-5f;

  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(int channels) {
    gamma = FTensor::filled({channels}, 1.f, true);
    beta = FTensor::zeros({channels}, true);
    running_mean.assign(channels, 0.f);
    running_var.assign(channels, 1.f);
  }

  FTensor operator()(const FTensor& x, bool train) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, train,
                       momentum, eps);
  }

  void init(Rng& rng, float stddev = 0.02f) {
    for (auto& v : gamma.data()) v = rng.normal(1.f, stddev);
    for (auto& v : beta.data()) v = 0.f;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& params,
               std::vector<NamedBuffer>& buffers) {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
    buffers.push_back({prefix + ".running_mean", &running_mean});
    buffers.push_back({prefix + ".running_var", &running_var});
  }
};

struct LinearLayer {
  FTensor weight, bias;  // weight: in x out

  LinearLayer() = default;
  LinearLayer(int in_f, int out_f) {
    weight = FTensor::zeros({in_f, out_f}, true);
    bias = FTensor::zeros({out_f}, true);
  }

  FTensor operator()(const FTensor& x) const {
    return linear(x, weight, bias);
  }

  void init(Rng& rng, float stddev = 0.02f) {
    for (auto& v : weight.data()) v = rng.normal(0.f, stddev);
    for (auto& v : bias.data()) v = 0.f;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

inline int64_t param_count(const std::vector<NamedParam>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

inline void zero_grads(std::vector<NamedParam>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

inline void set_requires_grad(std::vector<NamedParam>& params, bool rg) {
  for (auto& p : params) p.tensor.set_requires_grad(rg);
}

}  // namespace llgan::nn
