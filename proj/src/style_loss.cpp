#include "llgan/style_loss.hpp"

namespace llgan::style {

StyleLossReport style_loss(const det::RoiFeature& real_roi,
                           const std::vector<det::RoiFeature>& fake_rois,
                           bool normalize_channels) {
  if (fake_rois.empty())
    throw std::invalid_argument("style_loss: no fake RoIs (B must be >= 1)");
  const auto& rs = real_roi.values.shape();
  const int h = rs[1], w = rs[2];
  FTensor g_real = nn::gram(vectorize_roi(real_roi.values.detach()));
  StyleLossReport report;
  report.b = static_cast<int>(fake_rois.size());
  FTensor acc;
  for (const auto& roi : fake_rois) {
    if (roi.values.shape() != rs)
      throw std::invalid_argument("style_loss: RoI shape mismatch " +
                                  nn::shape_str(roi.values.shape()) + " vs " +
                                  nn::shape_str(rs));
    FTensor g_fake = nn::gram(vectorize_roi(roi.values));
    FTensor d = roi_style_distance(g_real, g_fake, h, w, normalize_channels);
    report.distances.push_back(d.item());
    acc = acc.defined() ? nn::add(acc, d) : d;
  }
  report.loss = nn::scale(acc, 1.f / static_cast<float>(report.b));
  report.value = report.loss.item();
  return report;
}

FTensor backbone_content_loss(const det::FpnFeatures& real,
                              const det::FpnFeatures& fake) {
  if (real.p2.shape() != fake.p2.shape() ||
      real.p3.shape() != fake.p3.shape())
    throw std::invalid_argument("backbone_content_loss: level shape mismatch");
  auto level_mse = [](const FTensor& r, const FTensor& f) {
    FTensor d = nn::sub(f, r.detach());
    return nn::mean(nn::mul(d, d));
  };
  return nn::scale(
      nn::add(level_mse(real.p2, fake.p2), level_mse(real.p3, fake.p3)),
      0.5f);
}

FTensor fake_detection_loss(det::Detector& detector,
                            const det::FpnFeatures& fake_feats,
                            const det::RpnOutputs& fake_rpn, const det::Box& gt,
                            Rng& rng) {
  return detector.loss_from_forward(fake_feats, fake_rpn, gt, rng,
                                    detector.config().gen_match);
}

}  // namespace llgan::style
