// SPDX-License-Identifier: Apache-2.0
#include "iga/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace iga {

namespace {

Image from_mat(const cv::Mat& bgr) {
  Image img;
  img.height = static_cast<std::size_t>(bgr.rows);
  img.width = static_cast<std::size_t>(bgr.cols);
  img.channels = 3;
  img.data.resize(3 * img.height * img.width);
  const std::size_t plane = img.height * img.width;
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x);
      for (int ch = 0; ch < 3; ++ch) {
        img.data[static_cast<std::size_t>(ch) * plane + idx] =
            static_cast<real>(row[x][2 - ch] / 255.0);
      }
    }
  }
  return img;
}

cv::Mat to_mat(const Image& image) {
  if (image.channels != 3 || image.data.size() != 3 * image.height * image.width) {
    throw IoError("image buffer does not hold 3 planes of " + std::to_string(image.height) + "x" +
                  std::to_string(image.width));
  }
  cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
  const std::size_t plane = image.height * image.width;
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * image.width + static_cast<std::size_t>(x);
      for (int ch = 0; ch < 3; ++ch) {
        const double v =
            std::clamp(static_cast<double>(image.data[static_cast<std::size_t>(ch) * plane + idx]),
                       0.0, 1.0);
        row[x][2 - ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return bgr;
}

bool is_image_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const char* known[] = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp"};
  return std::any_of(std::begin(known), std::end(known), [&](const char* k) { return ext == k; });
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_extension(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

template <class T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such image: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  return from_mat(m);
}

void write_image(const std::filesystem::path& path, const Image& image) {
  if (!is_image_extension(path)) {
    throw IoError("unsupported image format: " + path.string());
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_mat(image));
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

Image resize_image(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out;
  out.height = height;
  out.width = width;
  out.channels = image.channels;
  out.data.resize(image.channels * height * width);
  for (std::size_t ch = 0; ch < image.channels; ++ch) {
    cv::Mat src(static_cast<int>(image.height), static_cast<int>(image.width), CV_32F);
    for (std::size_t i = 0; i < image.height * image.width; ++i) {
      src.at<float>(static_cast<int>(i)) =
          static_cast<float>(image.data[ch * image.height * image.width + i]);
    }
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
               cv::INTER_LINEAR);
    for (std::size_t i = 0; i < height * width; ++i) {
      out.data[ch * height * width + i] =
          static_cast<real>(std::clamp(dst.at<float>(static_cast<int>(i)), 0.0f, 1.0f));
    }
  }
  return out;
}

Tensor stack_images(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("no images to stack");
  const auto& first = images.front();
  std::vector<real> data;
  data.reserve(images.size() * first.size());
  for (const auto& img : images) {
    if (img.height != first.height || img.width != first.width || img.channels != first.channels) {
      throw ShapeError("images of differing size in one batch");
    }
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return Tensor(Shape{images.size(), first.channels, first.height, first.width}, std::move(data));
}

Image unstack_image(const Tensor& batch, std::size_t index) {
  if (batch.rank() != 4 || index >= batch.dim(0)) {
    throw ShapeError("unstack_image: index " + std::to_string(index) + " of " +
                     to_string(batch.shape()));
  }
  Image img;
  img.channels = batch.dim(1);
  img.height = batch.dim(2);
  img.width = batch.dim(3);
  const std::size_t per = img.channels * img.height * img.width;
  const auto d = batch.data();
  img.data.assign(d.begin() + static_cast<std::ptrdiff_t>(index * per),
                  d.begin() + static_cast<std::ptrdiff_t>((index + 1) * per));
  return img;
}

Dataset load_dataset(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(spec.root)) throw IoError("dataset root not found: " + spec.root.string());

  std::vector<fs::path> files;
  const char* sub = spec.split == Split::train ? "train" : spec.split == Split::val ? "val" : nullptr;
  if (sub && fs::is_directory(spec.root / sub)) {
    files = list_images(spec.root / sub);
  } else {
    files = list_images(spec.root);
    // A single file cannot be partitioned; both splits use it.
    if (sub && files.size() > 1) {
      // Flat folder: a seeded partition shared by both splits.
      Rng part(spec.seed ^ 0x5eedULL);
      seeded_shuffle(files, part);
      auto n_val = static_cast<std::size_t>(
          std::ceil(spec.val_fraction * static_cast<double>(files.size())));
      n_val = std::clamp<std::size_t>(n_val, 1, files.size() - 1);
      if (spec.split == Split::val) {
        files.resize(std::min(n_val, files.size()));
      } else {
        files.erase(files.begin(), files.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, files.size())));
      }
      std::sort(files.begin(), files.end());
    }
  }

  Dataset ds;
  for (const auto& f : files) {
    try {
      ds.images.push_back(resize_image(read_image(f), spec.height, spec.width));
      ds.names.push_back(f.filename().string());
    } catch (const std::exception& e) {
      ds.warnings.push_back(std::string("skipping ") + f.string() + ": " + e.what());
      std::cerr << "warning: " << ds.warnings.back() << '\n';
    }
  }
  if (ds.images.empty()) throw IoError("no usable images under " + spec.root.string());

  std::vector<std::size_t> order(ds.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  seeded_shuffle(order, rng);
  if (spec.limit > 0 && order.size() > spec.limit) order.resize(spec.limit);
  Dataset out;
  out.warnings = std::move(ds.warnings);
  for (auto i : order) {
    out.images.push_back(std::move(ds.images[i]));
    out.names.push_back(std::move(ds.names[i]));
  }
  return out;
}

BitMessage random_message(std::size_t k, Rng& rng) {
  if (k == 0) throw std::invalid_argument("message length must be positive");
  std::vector<std::uint8_t> bits(k);
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next() >> 63);
  return BitMessage(std::move(bits));
}

}  // namespace iga
