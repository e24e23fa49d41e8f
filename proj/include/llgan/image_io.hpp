#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "llgan/tensor.hpp"

namespace llgan::data {

// 8-bit RGB image, row-major, interleaved.
struct ImageU8 {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;

  uint8_t* px(int x, int y) { return rgb.data() + 3 * (y * width + x); }
  const uint8_t* px(int x, int y) const {
    return rgb.data() + 3 * (y * width + x);
  }
};

void save_png(const std::string& path, const ImageU8& img);
ImageU8 load_png(const std::string& path);  // throws on undecodable files
ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h);

// [0,255] -> [-1,1], planar 3 x H x W.
nn::Tensor<float> to_tensor(const ImageU8& img);
// [-1,1] 3 x H x W (or 1x3xHxW) -> clamped 8-bit RGB.
ImageU8 from_tensor(const nn::Tensor<float>& t);

}  // namespace llgan::data
