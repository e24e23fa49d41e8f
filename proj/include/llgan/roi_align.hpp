#pragma once

#include <algorithm>
#include <cmath>

#include "llgan/boxes.hpp"
#include "llgan/tensor.hpp"

namespace llgan::det {

// RoIAlign over a single C x H x W feature map. The box is given in image
// coordinates and divided by the map stride with no rounding. Each output
// bin is the mean of bilinear samples at a regular sampling x sampling
// sub-bin grid; sample coordinates are clamped to the map border.
// Differentiable with respect to the feature map (not the box).
template <typename T>
nn::Tensor<T> roi_align(const nn::Tensor<T>& feat, const Box& box,
                        float stride, int out_h = 7, int out_w = 7,
                        int sampling = 2) {
  const auto& s = feat.shape();
  if (s.size() != 3)
    throw std::invalid_argument("roi_align: C x H x W map required, got " +
                                nn::shape_str(s));
  const int c = s[0], h = s[1], w = s[2];
  const float x1 = box.x1 / stride, y1 = box.y1 / stride;
  const float x2 = box.x2 / stride, y2 = box.y2 / stride;
  if (!(x2 > x1 && y2 > y1))
    throw std::invalid_argument("roi_align: zero-area box after scaling");
  const float bin_w = (x2 - x1) / out_w;
  const float bin_h = (y2 - y1) / out_h;
  const int spb = sampling * sampling;

  struct Tap { int idx00, idx01, idx10, idx11; T w00, w01, w10, w11; };
  std::vector<Tap> taps;
  taps.reserve(static_cast<size_t>(out_h) * out_w * spb);
  for (int by = 0; by < out_h; ++by) {
    for (int bx = 0; bx < out_w; ++bx) {
      for (int sy = 0; sy < sampling; ++sy) {
        for (int sx = 0; sx < sampling; ++sx) {
          float yy = y1 + (by + (sy + 0.5f) / sampling) * bin_h;
          float xx = x1 + (bx + (sx + 0.5f) / sampling) * bin_w;
          yy = std::min(std::max(yy, 0.f), static_cast<float>(h - 1));
          xx = std::min(std::max(xx, 0.f), static_cast<float>(w - 1));
          const int y0 = static_cast<int>(yy);
          const int x0 = static_cast<int>(xx);
          const int y1i = std::min(y0 + 1, h - 1);
          const int x1i = std::min(x0 + 1, w - 1);
          const T fy = static_cast<T>(yy - y0), fx = static_cast<T>(xx - x0);
          taps.push_back({y0 * w + x0, y0 * w + x1i, y1i * w + x0,
                          y1i * w + x1i, (T(1) - fy) * (T(1) - fx),
                          (T(1) - fy) * fx, fy * (T(1) - fx), fy * fx});
        }
      }
    }
  }

  std::vector<T> out(static_cast<size_t>(c) * out_h * out_w);
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int bins = out_h * out_w;
  for (int ch = 0; ch < c; ++ch) {
    const T* src = feat.data().data() + ch * plane;
    for (int b = 0; b < bins; ++b) {
      T acc = 0;
      for (int sp = 0; sp < spb; ++sp) {
        const Tap& t = taps[b * spb + sp];
        acc += t.w00 * src[t.idx00] + t.w01 * src[t.idx01] +
               t.w10 * src[t.idx10] + t.w11 * src[t.idx11];
      }
      out[ch * bins + b] = acc / static_cast<T>(spb);
    }
  }
  auto fn = feat.node();
  auto taps_p = std::make_shared<std::vector<Tap>>(std::move(taps));
  return nn::make_op<T>({c, out_h, out_w}, std::move(out), {feat},
                        [fn, taps_p, c, plane, bins, spb](nn::Node<T>& g) {
    fn->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      T* dst = fn->grad.data() + ch * plane;
      for (int b = 0; b < bins; ++b) {
        const T gv = g.grad[ch * bins + b] / static_cast<T>(spb);
        for (int sp = 0; sp < spb; ++sp) {
          const Tap& t = (*taps_p)[b * spb + sp];
          dst[t.idx00] += gv * t.w00;
          dst[t.idx01] += gv * t.w01;
          dst[t.idx10] += gv * t.w10;
          dst[t.idx11] += gv * t.w11;
        }
      }
    }
  });
}

}  // namespace llgan::det
