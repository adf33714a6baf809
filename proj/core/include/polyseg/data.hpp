#pragma once

#include "polyseg/nn.hpp"
#include "polyseg/tensor.hpp"

#include <string>
#include <vector>

namespace polyseg::data {

struct NormConstants {
  // large-corpus channel statistics, the convention of pretrained backbones
  std::vector<double> mean = {0.485, 0.456, 0.406};
  std::vector<double> stddev = {0.229, 0.224, 0.225};
};

struct SamplePair {
  std::string id;
  int64_t h = 0, w = 0;
  std::vector<double> image;  // [3,H,W] planar
  std::vector<double> mask;   // [H,W], strictly {0,1}
};

// Reads <root>/images/*.png|jpg and <root>/masks/*.png with matching stems,
// sorted by stem; images scaled to [0,1], masks binarized at 127/255.
std::vector<SamplePair> load_folder(const std::string& root);

// Bilinear-resizes the image, nearest-resizes the mask, then normalizes the
// image channels.
SamplePair preprocess(const SamplePair& pair, int64_t size,
                      const NormConstants& norm = {});

int64_t round_to_multiple_of_32(double x);

// One training scale per step, shared by the whole batch.
class MultiScaleSampler {
 public:
  MultiScaleSampler(std::vector<double> scales, uint64_t seed)
      : scales_(std::move(scales)), rng_(seed) {}
  int64_t next_size(int64_t base);

 private:
  std::vector<double> scales_;
  nn::Rng rng_;
};

// Stacks preprocessed samples, resampling to `size` when it differs from the
// stored resolution. Returns (images [B,3,s,s], masks [B,1,s,s]).
std::pair<Tensor, Tensor> assemble_batch(
    const std::vector<const SamplePair*>& samples, int64_t size);

// Low-contrast elliptical blobs over textured background noise; masks are the
// exact blob supports. Deterministic for a given seed.
std::vector<SamplePair> synth_samples(int64_t n, int64_t size, uint64_t seed);
void synth_dataset(int64_t n, int64_t size, uint64_t seed,
                   const std::string& out_dir);

}  // namespace polyseg::data
