#include "llgan/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <stdexcept>

namespace llgan::data {

void save_png(const std::string& path, const ImageU8& img) {
  cv::Mat mat(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* p = img.px(x, y);
      mat.at<cv::Vec3b>(y, x) = {p[2], p[1], p[0]};  // BGR on disk side
    }
  if (!cv::imwrite(path, mat))
    throw std::runtime_error("save_png: cannot write " + path);
}

ImageU8 load_png(const std::string& path) {
  cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
  if (mat.empty())
    throw std::runtime_error("load_png: cannot decode " + path);
  ImageU8 img;
  img.width = mat.cols;
  img.height = mat.rows;
  img.rgb.resize(static_cast<size_t>(mat.cols) * mat.rows * 3);
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x) {
      const cv::Vec3b& v = mat.at<cv::Vec3b>(y, x);
      uint8_t* p = img.px(x, y);
      p[0] = v[2];
      p[1] = v[1];
      p[2] = v[0];
    }
  return img;
}

ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h) {
  cv::Mat src(img.height, img.width, CV_8UC3,
              const_cast<uint8_t*>(img.rgb.data()));
  cv::Mat dst;
  cv::resize(src, dst, {out_w, out_h}, 0, 0, cv::INTER_LINEAR);
  ImageU8 out;
  out.width = out_w;
  out.height = out_h;
  out.rgb.assign(dst.data, dst.data + static_cast<size_t>(out_w) * out_h * 3);
  return out;
}

nn::Tensor<float> to_tensor(const ImageU8& img) {
  const int w = img.width, h = img.height;
  std::vector<float> v(static_cast<size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(c * h + y) * w + x] = img.px(x, y)[c] / 127.5f - 1.f;
  return nn::Tensor<float>::from({3, h, w}, std::move(v));
}

ImageU8 from_tensor(const nn::Tensor<float>& t) {
  auto s = t.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[0] != 3)
    throw std::invalid_argument("from_tensor: 3 x H x W required");
  const int h = s[1], w = s[2];
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float v = (t.data()[(c * h + y) * w + x] + 1.f) * 127.5f;
        img.px(x, y)[c] =
            static_cast<uint8_t>(std::clamp(v, 0.f, 255.f) + 0.5f);
      }
  return img;
}

}  // namespace llgan::data
