// SPDX-License-Identifier: Apache-2.0
//
// Image files and datasets. Images are held as planar RGB (CHW) reals in
// [0, 1]; writing quantises to 8 bits.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iga/msgcodec.hpp"
#include "iga/random.hpp"
#include "iga/tensor.hpp"

namespace iga {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<real> data;  // CHW

  std::size_t size() const { return data.size(); }
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Image read_image(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits. Format follows the
/// extension (png, bmp, ppm, tif are lossless; jpg is not).
void write_image(const std::filesystem::path& path, const Image& image);

/// Bilinear resize.
Image resize_image(const Image& image, std::size_t height, std::size_t width);

/// [N, C, H, W] batch from equally sized images.
Tensor stack_images(std::span<const Image> images);
Image unstack_image(const Tensor& batch, std::size_t index);

enum class Split { all, train, val };

struct DatasetSpec {
  std::filesystem::path root;
  Split split = Split::all;
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t limit = 0;  // 0 = no limit
  std::uint64_t seed = 0;
  /// For a flat folder without train/ and val/ subdirectories, the share of
  /// files (after a seeded shuffle) assigned to the val split.
  double val_fraction = 0.1;
};

struct Dataset {
  std::vector<Image> images;
  std::vector<std::string> names;
  std::vector<std::string> warnings;

  std::size_t size() const { return images.size(); }
};

/// Decodes every readable image under the split, resizes to the target
/// size and returns them in a seeded shuffled order. Unreadable files are
/// skipped with a warning; no usable image is an error.
Dataset load_dataset(const DatasetSpec& spec);

/// i.i.d. fair bits.
BitMessage random_message(std::size_t k, Rng& rng);

}  // namespace iga
