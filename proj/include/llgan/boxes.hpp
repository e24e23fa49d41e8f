#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace llgan::det {

// Axis-aligned rectangle in continuous pixel coordinates, x2 > x1, y2 > y1.
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

struct BoxDeltas {
  float dx = 0, dy = 0, dw = 0, dh = 0;
};

float iou(const Box& a, const Box& b);

// Faster R-CNN parameterization: center offsets scaled by anchor size,
// log-space width/height ratios.
BoxDeltas encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const BoxDeltas& d);

Box clip_box(const Box& b, float img_w, float img_h);

// Grows a box by margin on all four sides, clipped to the image.
Box extend_box(const Box& b, float margin, float img_w, float img_h);

// Greedy score-descending suppression; ties broken by lower index. Returns
// kept indices in score order.
std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<float>& scores, float iou_threshold);

// One anchor per (location, size, aspect): center at (x+0.5, y+0.5)*stride,
// width = size*sqrt(aspect), height = size/sqrt(aspect). Clipped to the
// image when img_w/img_h are positive.
std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride,
                                  const std::vector<float>& sizes,
                                  const std::vector<float>& aspects,
                                  float img_w = -1, float img_h = -1);

}  // namespace llgan::det
