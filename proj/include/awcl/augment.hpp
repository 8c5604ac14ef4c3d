#pragma once

#include <string>
#include <utility>
#include <vector>

#include "awcl/image.hpp"
#include "awcl/rng.hpp"

namespace awcl {

enum class AugOp {
  random_resized_crop,  // a..b = area scale range
  hflip,
  brightness_contrast,  // a = brightness delta, b = contrast delta
  gaussian_blur,        // a..b = sigma range
  rotation,             // a..b = degrees
  gamma,                // a..b = exponent range
  brightness,           // a = max abs delta
  gaussian_noise,       // a = sigma
  shear,                // a = max abs shear factor
  rescale,              // a..b = zoom factor range
  shift,                // a = max abs shift as fraction of size
};

struct AugStep {
  AugOp op;
  double p = 1.0;
  double a = 0.0;
  double b = 0.0;
};

// Immutable augmentation recipe; draws come from the caller's RNG stream so
// each worker can own an independent stream.
struct AugmentPolicy {
  std::string name;
  int h = 224;
  int w = 288;
  std::vector<AugStep> ops;
};

// Pretraining pipeline: crop/flip/intensity/blur (grayscale adaptation of the
// standard contrastive recipe).
AugmentPolicy pretrain_policy(int h = 224, int w = 288);
// Plane-detection fine-tuning: flip, rotation (10 deg), gamma and brightness.
AugmentPolicy task1_policy(int h = 224, int w = 288);
// First-trimester classification: rotation [-30,30], flip, noise, shear <= 0.2.
AugmentPolicy task2_policy(int h = 224, int w = 288);
// Segmentation: random scaling, shifting, rotation, flipping (geometry only,
// so image and mask stay aligned).
AugmentPolicy task3_policy(int h = 224, int w = 288);

Image apply(const AugmentPolicy& policy, const Image& image, Rng& rng);
std::pair<Image, Image> make_views(const AugmentPolicy& policy, const Image& image, Rng& rng);

// Applies the same geometric draws to image (bilinear) and mask (nearest).
std::pair<Image, Mask> apply_paired(const AugmentPolicy& policy, const Image& image,
                                    const Mask& mask, Rng& rng);

// Affine warp helpers (exposed for the paired-transform property tests).
// The matrix maps output pixel offsets (dy,dx from center) to input offsets.
struct Affine2 {
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
  double ty = 0, tx = 0;
  static Affine2 identity() { return {}; }
  Affine2 then(const Affine2& o) const;  // apply o after *this in sampling space
};

Affine2 rotation_affine(double degrees);
Affine2 shear_affine(double factor);
Affine2 scale_affine(double zoom);
Affine2 shift_affine(double dy, double dx);

Image warp_bilinear(const Image& im, const Affine2& a);
Image warp_nearest(const Image& im, const Affine2& a);
Mask warp_mask_nearest(const Mask& m, const Affine2& a);

}  // namespace awcl
