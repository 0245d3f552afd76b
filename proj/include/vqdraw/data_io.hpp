#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqdraw/tensor.hpp"

namespace vqdraw {

struct Dataset {
  Shape data_shape;  // per-example shape
  std::vector<std::vector<float>> examples;
  std::vector<std::uint8_t> labels;  // optional, unused by training
  std::string split;
  std::string normalization;  // how raw values map to stored ones
  // bounding box for mixture data (empty for images)
  std::vector<double> box_lo, box_hi;

  Tensor<float> example(int i) const {
    return Tensor<float>::from_data(data_shape, examples[i]);
  }
};

// IDX image/label files, big-endian headers (magic 0x00000803 / 0x00000801).
// Pixels are scaled from [0,255] to [0,1].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path = "");

// Writers for synthetic fixtures and round-trip tests.
void write_idx_images(const std::string& path,
                      const std::vector<std::vector<std::uint8_t>>& images,
                      int rows, int cols);
void write_idx_labels(const std::string& path,
                      const std::vector<std::uint8_t>& labels);

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean, scale;
};

struct MixtureSpec {
  int dim = 0;
  std::uint64_t seed = 0;
  std::vector<MixtureComponent> components;

  void validate() const;
};

// Self-describing key=value text:
//   dim = 2
//   seed = 7
//   component = <weight> <mean...> <scale...>
MixtureSpec parse_mixture_spec(const std::string& text);
MixtureSpec read_mixture_spec(const std::string& path);

// n points, seed-deterministic, clipped to mean +- 4*scale per dimension
// (the box is recorded on the dataset).
Dataset gen_mixture(const MixtureSpec& spec, int n);

// Tiles row-major into a binary PGM (1 channel) or PPM (3 channels) with a
// 1-pixel separator; values quantized by round(v*255). Returns the number of
// out-of-range values that had to be clipped.
long write_image_grid(const std::vector<std::vector<float>>& tiles,
                      const Shape& tile_shape, int rows, int cols,
                      const std::string& path);

}  // namespace vqdraw
