#include "polyseg/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace polyseg::img {

GrayImage read_gray(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("unreadable image file: " + path);
  GrayImage out;
  out.h = m.rows;
  out.w = m.cols;
  out.pixels.resize(static_cast<size_t>(out.h * out.w));
  for (int64_t r = 0; r < out.h; ++r)
    std::copy_n(m.ptr<uint8_t>(static_cast<int>(r)), out.w,
                out.pixels.data() + r * out.w);
  return out;
}

RgbImage read_rgb(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR
  if (m.empty()) throw std::runtime_error("unreadable image file: " + path);
  RgbImage out;
  out.h = m.rows;
  out.w = m.cols;
  out.pixels.resize(static_cast<size_t>(out.h * out.w * 3));
  for (int64_t r = 0; r < out.h; ++r) {
    const uint8_t* row = m.ptr<uint8_t>(static_cast<int>(r));
    for (int64_t c = 0; c < out.w; ++c) {
      out.pixels[static_cast<size_t>((r * out.w + c) * 3 + 0)] = row[c * 3 + 2];
      out.pixels[static_cast<size_t>((r * out.w + c) * 3 + 1)] = row[c * 3 + 1];
      out.pixels[static_cast<size_t>((r * out.w + c) * 3 + 2)] = row[c * 3 + 0];
    }
  }
  return out;
}

void write_gray(const std::string& path, const GrayImage& image) {
  cv::Mat m(static_cast<int>(image.h), static_cast<int>(image.w), CV_8UC1);
  for (int64_t r = 0; r < image.h; ++r)
    std::copy_n(image.pixels.data() + r * image.w, image.w,
                m.ptr<uint8_t>(static_cast<int>(r)));
  if (!cv::imwrite(path, m))
    throw std::runtime_error("cannot write image file: " + path);
}

void write_rgb(const std::string& path, const RgbImage& image) {
  cv::Mat m(static_cast<int>(image.h), static_cast<int>(image.w), CV_8UC3);
  for (int64_t r = 0; r < image.h; ++r) {
    uint8_t* row = m.ptr<uint8_t>(static_cast<int>(r));
    for (int64_t c = 0; c < image.w; ++c) {
      row[c * 3 + 0] = image.pixels[static_cast<size_t>((r * image.w + c) * 3 + 2)];
      row[c * 3 + 1] = image.pixels[static_cast<size_t>((r * image.w + c) * 3 + 1)];
      row[c * 3 + 2] = image.pixels[static_cast<size_t>((r * image.w + c) * 3 + 0)];
    }
  }
  if (!cv::imwrite(path, m))
    throw std::runtime_error("cannot write image file: " + path);
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int64_t h,
                                    int64_t w, int64_t oh, int64_t ow) {
  if (h == oh && w == ow) return src;
  std::vector<double> out(static_cast<size_t>(oh * ow));
  double sy = static_cast<double>(h) / static_cast<double>(oh);
  double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (int64_t i = 0; i < oh; ++i) {
    double fy = std::max(0.0, (static_cast<double>(i) + 0.5) * sy - 0.5);
    int64_t y0 = std::min(static_cast<int64_t>(fy), h - 1);
    int64_t y1 = std::min(y0 + 1, h - 1);
    double wy = fy - static_cast<double>(y0);
    for (int64_t j = 0; j < ow; ++j) {
      double fx = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
      int64_t x0 = std::min(static_cast<int64_t>(fx), w - 1);
      int64_t x1 = std::min(x0 + 1, w - 1);
      double wx = fx - static_cast<double>(x0);
      out[static_cast<size_t>(i * ow + j)] =
          (1 - wy) * ((1 - wx) * src[static_cast<size_t>(y0 * w + x0)] +
                      wx * src[static_cast<size_t>(y0 * w + x1)]) +
          wy * ((1 - wx) * src[static_cast<size_t>(y1 * w + x0)] +
                wx * src[static_cast<size_t>(y1 * w + x1)]);
    }
  }
  return out;
}

std::vector<double> resize_nearest(const std::vector<double>& src, int64_t h,
                                   int64_t w, int64_t oh, int64_t ow) {
  if (h == oh && w == ow) return src;
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t i = 0; i < oh; ++i) {
    int64_t y = std::min<int64_t>((i * h) / oh, h - 1);
    for (int64_t j = 0; j < ow; ++j) {
      int64_t x = std::min<int64_t>((j * w) / ow, w - 1);
      out[static_cast<size_t>(i * ow + j)] = src[static_cast<size_t>(y * w + x)];
    }
  }
  return out;
}

}  // namespace polyseg::img
