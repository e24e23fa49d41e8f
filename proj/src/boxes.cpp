#include "llgan/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace llgan::det {

float iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid())
    throw std::invalid_argument("iou: degenerate box");
  const float ix1 = std::max(a.x1, b.x1);
  const float iy1 = std::max(a.y1, b.y1);
  const float ix2 = std::min(a.x2, b.x2);
  const float iy2 = std::min(a.y2, b.y2);
  const float iw = std::max(0.f, ix2 - ix1);
  const float ih = std::max(0.f, iy2 - iy1);
  const float inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoxDeltas encode_box(const Box& anchor, const Box& gt) {
  if (anchor.width() <= 0 || anchor.height() <= 0 || gt.width() <= 0 ||
      gt.height() <= 0)
    throw std::invalid_argument("encode_box: non-positive box size");
  const float aw = anchor.width(), ah = anchor.height();
  const float acx = anchor.x1 + 0.5f * aw, acy = anchor.y1 + 0.5f * ah;
  const float gcx = gt.x1 + 0.5f * gt.width();
  const float gcy = gt.y1 + 0.5f * gt.height();
  return {(gcx - acx) / aw, (gcy - acy) / ah, std::log(gt.width() / aw),
          std::log(gt.height() / ah)};
}

Box decode_box(const Box& anchor, const BoxDeltas& d) {
  if (anchor.width() <= 0 || anchor.height() <= 0)
    throw std::invalid_argument("decode_box: non-positive anchor size");
  const float aw = anchor.width(), ah = anchor.height();
  const float acx = anchor.x1 + 0.5f * aw, acy = anchor.y1 + 0.5f * ah;
  // Clamp log-scale deltas so an untrained head cannot overflow.
  const float dw = std::min(d.dw, 4.f), dh = std::min(d.dh, 4.f);
  const float cx = acx + d.dx * aw, cy = acy + d.dy * ah;
  const float w = aw * std::exp(dw), h = ah * std::exp(dh);
  return {cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
}

Box clip_box(const Box& b, float img_w, float img_h) {
  return {std::clamp(b.x1, 0.f, img_w), std::clamp(b.y1, 0.f, img_h),
          std::clamp(b.x2, 0.f, img_w), std::clamp(b.y2, 0.f, img_h)};
}

Box extend_box(const Box& b, float margin, float img_w, float img_h) {
  return clip_box({b.x1 - margin, b.y1 - margin, b.x2 + margin, b.y2 + margin},
                  img_w, img_h);
}

std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<float>& scores, float iou_threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes/scores length mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] > scores[b];
  });
  std::vector<int> kept;
  std::vector<char> removed(boxes.size(), 0);
  for (int idx : order) {
    if (removed[idx]) continue;
    kept.push_back(idx);
    for (int other : order) {
      if (other == idx || removed[other]) continue;
      if (iou(boxes[idx], boxes[other]) > iou_threshold) removed[other] = 1;
    }
  }
  return kept;
}

std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride,
                                  const std::vector<float>& sizes,
                                  const std::vector<float>& aspects,
                                  float img_w, float img_h) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(feat_h) * feat_w * sizes.size() *
                  aspects.size());
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const float cx = (x + 0.5f) * stride;
      const float cy = (y + 0.5f) * stride;
      for (float size : sizes) {
        for (float aspect : aspects) {
          const float w = size * std::sqrt(aspect);
          const float h = size / std::sqrt(aspect);
          Box a{cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
          if (img_w > 0 && img_h > 0) a = clip_box(a, img_w, img_h);
          anchors.push_back(a);
        }
      }
    }
  }
  return anchors;
}

}  // namespace llgan::det
