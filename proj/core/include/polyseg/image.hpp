#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace polyseg::img {

struct GrayImage {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> pixels;  // row-major
};

struct RgbImage {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved RGB
};

GrayImage read_gray(const std::string& path);
RgbImage read_rgb(const std::string& path);
void write_gray(const std::string& path, const GrayImage& image);
void write_rgb(const std::string& path, const RgbImage& image);

// Single-plane resampling shared by training, prediction and scoring paths
// (align_corners=false for the bilinear variant).
std::vector<double> resize_bilinear(const std::vector<double>& src, int64_t h,
                                    int64_t w, int64_t oh, int64_t ow);
std::vector<double> resize_nearest(const std::vector<double>& src, int64_t h,
                                   int64_t w, int64_t oh, int64_t ow);

}  // namespace polyseg::img
