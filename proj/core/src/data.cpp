#include "polyseg/data.hpp"

#include "polyseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <stdexcept>

namespace polyseg::data {

namespace fs = std::filesystem;

std::vector<SamplePair> load_folder(const std::string& root) {
  fs::path images = fs::path(root) / "images";
  fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw std::invalid_argument("load_folder: " + root +
                                " must contain images/ and masks/");
  auto is_image = [](const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), ::tolower);
    return e == ".png" || e == ".jpg" || e == ".jpeg";
  };
  std::map<std::string, fs::path> image_by_stem, mask_by_stem;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && is_image(e.path()))
      image_by_stem[e.path().stem().string()] = e.path();
  for (const auto& e : fs::directory_iterator(masks))
    if (e.is_regular_file() && is_image(e.path()))
      mask_by_stem[e.path().stem().string()] = e.path();
  std::string unmatched;
  for (const auto& [stem, p] : image_by_stem)
    if (!mask_by_stem.count(stem)) unmatched += " " + stem;
  for (const auto& [stem, p] : mask_by_stem)
    if (!image_by_stem.count(stem)) unmatched += " " + stem;
  if (!unmatched.empty())
    throw std::invalid_argument("load_folder: unmatched stems:" + unmatched);
  if (image_by_stem.empty())
    throw std::invalid_argument("load_folder: no image/mask pairs in " + root);

  std::vector<SamplePair> out;
  for (const auto& [stem, ipath] : image_by_stem) {
    img::RgbImage im = img::read_rgb(ipath.string());
    img::GrayImage mk = img::read_gray(mask_by_stem.at(stem).string());
    if (im.h != mk.h || im.w != mk.w)
      throw std::invalid_argument("load_folder: image/mask size mismatch for " +
                                  stem);
    SamplePair p;
    p.id = stem;
    p.h = im.h;
    p.w = im.w;
    p.image.resize(static_cast<size_t>(3 * im.h * im.w));
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < im.h * im.w; ++i)
        p.image[static_cast<size_t>(c * im.h * im.w + i)] =
            static_cast<double>(im.pixels[static_cast<size_t>(i * 3 + c)]) / 255.0;
    p.mask.resize(static_cast<size_t>(mk.h * mk.w));
    for (int64_t i = 0; i < mk.h * mk.w; ++i)
      p.mask[static_cast<size_t>(i)] =
          mk.pixels[static_cast<size_t>(i)] > 127 ? 1.0 : 0.0;
    out.push_back(std::move(p));
  }
  return out;  // std::map iteration keeps stems sorted
}

SamplePair preprocess(const SamplePair& pair, int64_t size,
                      const NormConstants& norm) {
  SamplePair out;
  out.id = pair.id;
  out.h = size;
  out.w = size;
  out.image.resize(static_cast<size_t>(3 * size * size));
  for (int64_t c = 0; c < 3; ++c) {
    std::vector<double> plane(pair.image.begin() + c * pair.h * pair.w,
                              pair.image.begin() + (c + 1) * pair.h * pair.w);
    std::vector<double> resized =
        img::resize_bilinear(plane, pair.h, pair.w, size, size);
    for (int64_t i = 0; i < size * size; ++i)
      out.image[static_cast<size_t>(c * size * size + i)] =
          (resized[static_cast<size_t>(i)] - norm.mean[static_cast<size_t>(c)]) /
          norm.stddev[static_cast<size_t>(c)];
  }
  out.mask = img::resize_nearest(pair.mask, pair.h, pair.w, size, size);
  return out;
}

int64_t round_to_multiple_of_32(double x) {
  int64_t m = static_cast<int64_t>(std::floor(x / 32.0 + 0.5)) * 32;
  return std::max<int64_t>(m, 32);
}

int64_t MultiScaleSampler::next_size(int64_t base) {
  double s = scales_[rng_.integer(scales_.size())];
  int64_t size = round_to_multiple_of_32(static_cast<double>(base) * s);
  if (size < 32)
    throw std::invalid_argument("MultiScaleSampler: scale too small for base " +
                                std::to_string(base));
  return size;
}

std::pair<Tensor, Tensor> assemble_batch(
    const std::vector<const SamplePair*>& samples, int64_t size) {
  if (samples.empty())
    throw std::invalid_argument("assemble_batch: empty batch");
  auto b = static_cast<int64_t>(samples.size());
  Tensor images = Tensor::zeros({b, 3, size, size});
  Tensor masks = Tensor::zeros({b, 1, size, size});
  for (int64_t i = 0; i < b; ++i) {
    const SamplePair& p = *samples[static_cast<size_t>(i)];
    for (int64_t c = 0; c < 3; ++c) {
      std::vector<double> plane(p.image.begin() + c * p.h * p.w,
                                p.image.begin() + (c + 1) * p.h * p.w);
      std::vector<double> r = img::resize_bilinear(plane, p.h, p.w, size, size);
      std::copy(r.begin(), r.end(),
                images.data().begin() + ((i * 3 + c) * size * size));
    }
    std::vector<double> m = img::resize_nearest(p.mask, p.h, p.w, size, size);
    std::copy(m.begin(), m.end(), masks.data().begin() + i * size * size);
  }
  return {images, masks};
}

namespace {

// smooth value noise: coarse control grid bilinearly upsampled
std::vector<double> value_noise(nn::Rng& rng, int64_t size, int64_t grid,
                                double lo, double hi) {
  std::vector<double> coarse(static_cast<size_t>(grid * grid));
  for (auto& v : coarse) v = rng.uniform(lo, hi);
  return img::resize_bilinear(coarse, grid, grid, size, size);
}

}  // namespace

std::vector<SamplePair> synth_samples(int64_t n, int64_t size, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_samples: n must be >= 1");
  nn::Rng rng(seed);
  std::vector<SamplePair> out;
  for (int64_t idx = 0; idx < n; ++idx) {
    SamplePair p;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05lld", static_cast<long long>(idx));
    p.id = buf;
    p.h = size;
    p.w = size;
    std::vector<double> base = value_noise(rng, size, 8, 0.35, 0.65);
    std::vector<double> texture(static_cast<size_t>(size * size));
    for (auto& v : texture) v = rng.uniform(-0.05, 0.05);
    p.mask.assign(static_cast<size_t>(size * size), 0.0);
    std::vector<double> offset(static_cast<size_t>(size * size), 0.0);

    int64_t blobs = 1 + static_cast<int64_t>(rng.integer(3));
    for (int64_t bi = 0; bi < blobs; ++bi) {
      double rmax = static_cast<double>(size) / 5.0;
      double rmin = std::max(3.0, static_cast<double>(size) / 16.0);
      double ry = rng.uniform(rmin, rmax);
      double rx = rng.uniform(rmin, rmax);
      double margin = std::max(ry, rx) + 2.0;
      double cy = rng.uniform(margin, static_cast<double>(size) - margin);
      double cx = rng.uniform(margin, static_cast<double>(size) - margin);
      double theta = rng.uniform(0.0, std::numbers::pi);
      double contrast = rng.uniform(0.04, 0.1) * (rng.integer(2) ? 1.0 : -1.0);
      double ct = std::cos(theta), st = std::sin(theta);
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
          double dy = static_cast<double>(y) - cy;
          double dx = static_cast<double>(x) - cx;
          double u = (ct * dy + st * dx) / ry;
          double v = (-st * dy + ct * dx) / rx;
          if (u * u + v * v <= 1.0) {
            p.mask[static_cast<size_t>(y * size + x)] = 1.0;
            offset[static_cast<size_t>(y * size + x)] = contrast;
          }
        }
    }

    p.image.resize(static_cast<size_t>(3 * size * size));
    for (int64_t c = 0; c < 3; ++c) {
      double tint = rng.uniform(-0.02, 0.02);
      for (int64_t i = 0; i < size * size; ++i) {
        bool fg = p.mask[static_cast<size_t>(i)] > 0.5;
        // blobs are smooth: their texture amplitude is halved
        double t = texture[static_cast<size_t>(i)] * (fg ? 0.5 : 1.0);
        double v = base[static_cast<size_t>(i)] + t + tint +
                   offset[static_cast<size_t>(i)];
        p.image[static_cast<size_t>(c * size * size + i)] =
            std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

void synth_dataset(int64_t n, int64_t size, uint64_t seed,
                   const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  for (const auto& p : synth_samples(n, size, seed)) {
    img::RgbImage im;
    im.h = size;
    im.w = size;
    im.pixels.resize(static_cast<size_t>(3 * size * size));
    for (int64_t i = 0; i < size * size; ++i)
      for (int64_t c = 0; c < 3; ++c)
        im.pixels[static_cast<size_t>(i * 3 + c)] = static_cast<uint8_t>(
            std::lround(255.0 * p.image[static_cast<size_t>(c * size * size + i)]));
    img::GrayImage mk;
    mk.h = size;
    mk.w = size;
    mk.pixels.resize(static_cast<size_t>(size * size));
    for (int64_t i = 0; i < size * size; ++i)
      mk.pixels[static_cast<size_t>(i)] =
          p.mask[static_cast<size_t>(i)] > 0.5 ? 255 : 0;
    img::write_rgb((fs::path(out_dir) / "images" / (p.id + ".png")).string(), im);
    img::write_gray((fs::path(out_dir) / "masks" / (p.id + ".png")).string(), mk);
  }
}

}  // namespace polyseg::data
