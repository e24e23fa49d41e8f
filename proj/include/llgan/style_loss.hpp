#pragma once

#include <vector>

#include "llgan/detector.hpp"
#include "llgan/ops.hpp"

namespace llgan::style {

using nn::FTensor;

// Flattens a C x H x W RoI block into C rows of H*W values (row-major).
template <typename T>
nn::Tensor<T> vectorize_roi(const nn::Tensor<T>& roi) {
  const auto& s = roi.shape();
  if (s.size() != 3)
    throw std::invalid_argument("vectorize_roi: C x H x W required, got " +
                                nn::shape_str(s));
  return nn::reshape(roi, {s[0], s[1] * s[2]});
}

// Normalized squared distance between two C x C Gram matrices:
// sum_ij (Gr - Gf)^2 / (2*H*W)^2. The optional channel term divides by C^2
// as in classical style loss; off by default to match the regional form.
template <typename T>
nn::Tensor<T> roi_style_distance(const nn::Tensor<T>& g_real,
                                 const nn::Tensor<T>& g_fake, int h, int w,
                                 bool normalize_channels = false) {
  if (g_real.shape() != g_fake.shape())
    throw std::invalid_argument("roi_style_distance: Gram shape mismatch " +
                                nn::shape_str(g_real.shape()) + " vs " +
                                nn::shape_str(g_fake.shape()));
  const int c = g_real.dim(0);
  T denom = static_cast<T>(2.0 * h * w) * static_cast<T>(2.0 * h * w);
  if (normalize_channels) denom *= static_cast<T>(c) * static_cast<T>(c);
  nn::Tensor<T> d = nn::sub(g_real, g_fake);
  return nn::scale(nn::sum(nn::mul(d, d)), T(1) / denom);
}

struct StyleLossReport {
  std::vector<float> distances;  // D_k per fake RoI
  int b = 0;                     // RoI count
  float value = 0;               // L_S = sum(D_k)/B
  FTensor loss;                  // graph-connected L_S
};

// L_S between one real RoI (detached inside) and B fake RoIs. Gradients
// reach only the fake branch.
StyleLossReport style_loss(const det::RoiFeature& real_roi,
                           const std::vector<det::RoiFeature>& fake_rois,
                           bool normalize_channels = false);

// Mean over FPN levels of per-level mean squared difference. The real
// branch is detached.
FTensor backbone_content_loss(const det::FpnFeatures& real,
                              const det::FpnFeatures& fake);

// Detection loss evaluated on a fake image's forward pass, with the gt box
// borrowed from the paired real sample. Gradients flow to the generator
// through the fake image; detector parameters stay frozen by construction
// (their requires_grad is off during generation training).
FTensor fake_detection_loss(det::Detector& detector,
                            const det::FpnFeatures& fake_feats,
                            const det::RpnOutputs& fake_rpn, const det::Box& gt,
                            Rng& rng);

}  // namespace llgan::style
