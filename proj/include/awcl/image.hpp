#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "awcl/errors.hpp"

namespace awcl {

// Grayscale image, intensities in [0,1], row-major.
struct Image {
  int h = 0;
  int w = 0;
  Eigen::ArrayXd v;

  static Image zeros(int h, int w) {
    Image im;
    im.h = h;
    im.w = w;
    im.v = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(h) * w);
    return im;
  }

  double& at(int y, int x) { return v[static_cast<Eigen::Index>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<Eigen::Index>(y) * w + x]; }
  int64_t numel() const { return static_cast<int64_t>(h) * w; }
};

// Integer label mask, same layout as Image.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<int> v;

  static Mask zeros(int h, int w) {
    Mask m;
    m.h = h;
    m.w = w;
    m.v.assign(static_cast<size_t>(h) * w, 0);
    return m;
  }

  int& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

struct CropBox {
  int y = 0;
  int x = 0;
  int h = 0;
  int w = 0;
};

// Binary PGM (P5, maxval 255). Quantizes to 8 bits on write.
void write_pgm(const std::filesystem::path& path, const Image& im);
Image read_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const Mask& m);
Mask read_mask_pgm(const std::filesystem::path& path);

Image crop(const Image& im, const CropBox& box);

// Bilinear resampling with half-pixel centers and edge clamping.
Image bilinear_resize(const Image& im, int out_h, int out_w);

// Crop then resize to the standard frame geometry (224x288 by default).
Image preprocess(const Image& raw, const CropBox& box, int out_h = 224, int out_w = 288);

}  // namespace awcl
