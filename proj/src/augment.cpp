#include "awcl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace awcl {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_shape(const AugmentPolicy& policy, const Image& im) {
  if (im.h != policy.h || im.w != policy.w)
    throw ArgumentError("augment: image is " + std::to_string(im.h) + "x" + std::to_string(im.w) +
                        ", policy expects " + std::to_string(policy.h) + "x" + std::to_string(policy.w));
}

Image hflip(const Image& im) {
  Image out = Image::zeros(im.h, im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) out.at(y, x) = im.at(y, im.w - 1 - x);
  return out;
}

Image random_resized_crop(const Image& im, double lo, double hi, Rng& rng) {
  const double area_frac = rng.uniform(lo, hi);
  const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
  const double area = area_frac * im.h * im.w;
  int ch = static_cast<int>(std::lround(std::sqrt(area / aspect)));
  int cw = static_cast<int>(std::lround(std::sqrt(area * aspect)));
  ch = std::clamp(ch, 1, im.h);
  cw = std::clamp(cw, 1, im.w);
  const int y0 = rng.below_int(im.h - ch + 1);
  const int x0 = rng.below_int(im.w - cw + 1);
  return bilinear_resize(crop(im, {y0, x0, ch, cw}), im.h, im.w);
}

Image brightness_contrast(const Image& im, double bdelta, double cdelta, Rng& rng) {
  const double b = rng.uniform(-bdelta, bdelta);
  const double c = 1.0 + rng.uniform(-cdelta, cdelta);
  const double mean = im.v.mean();
  Image out = im;
  out.v = ((im.v - mean) * c + mean + b).min(1.0).max(0.0);
  return out;
}

Image gaussian_blur(const Image& im, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;

  // Separable pass with replicated borders.
  Image tmp = Image::zeros(im.h, im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<size_t>(i + radius)] * im.at(y, std::clamp(x + i, 0, im.w - 1));
      tmp.at(y, x) = acc;
    }
  Image out = Image::zeros(im.h, im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<size_t>(i + radius)] * tmp.at(std::clamp(y + i, 0, im.h - 1), x);
      out.at(y, x) = acc;
    }
  return out;
}

Image apply_gamma(const Image& im, double g) {
  Image out = im;
  out.v = im.v.max(0.0).pow(g);
  return out;
}

Image add_brightness(const Image& im, double delta) {
  Image out = im;
  out.v = (im.v + delta).min(1.0).max(0.0);
  return out;
}

Image add_noise(const Image& im, double sigma, Rng& rng) {
  Image out = im;
  for (int64_t i = 0; i < out.numel(); ++i)
    out.v[i] = std::clamp(out.v[i] + rng.normal(0.0, sigma), 0.0, 1.0);
  return out;
}

template <typename Sample>
void warp_generic(int h, int w, const Affine2& a, Sample&& sample) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox) {
      const double dy = oy - cy, dx = ox - cx;
      const double iy = a.m00 * dy + a.m01 * dx + a.ty + cy;
      const double ix = a.m10 * dy + a.m11 * dx + a.tx + cx;
      sample(oy, ox, iy, ix);
    }
}

}  // namespace

Affine2 Affine2::then(const Affine2& o) const {
  // Sampling-space composition: coords pass through *this first, then o.
  Affine2 r;
  r.m00 = o.m00 * m00 + o.m01 * m10;
  r.m01 = o.m00 * m01 + o.m01 * m11;
  r.m10 = o.m10 * m00 + o.m11 * m10;
  r.m11 = o.m10 * m01 + o.m11 * m11;
  r.ty = o.m00 * ty + o.m01 * tx + o.ty;
  r.tx = o.m10 * ty + o.m11 * tx + o.tx;
  return r;
}

Affine2 rotation_affine(double degrees) {
  const double rad = degrees * kPi / 180.0;
  // Inverse rotation: output grid samples the input rotated by -degrees.
  Affine2 a;
  a.m00 = std::cos(rad);
  a.m01 = std::sin(rad);
  a.m10 = -std::sin(rad);
  a.m11 = std::cos(rad);
  return a;
}

Affine2 shear_affine(double factor) {
  Affine2 a;
  a.m10 = -factor;  // inverse of x' = x + factor*y
  return a;
}

Affine2 scale_affine(double zoom) {
  if (zoom <= 0.0) throw ArgumentError("scale_affine: zoom must be positive");
  Affine2 a;
  a.m00 = 1.0 / zoom;
  a.m11 = 1.0 / zoom;
  return a;
}

Affine2 shift_affine(double dy, double dx) {
  Affine2 a;
  a.ty = -dy;
  a.tx = -dx;
  return a;
}

Image warp_bilinear(const Image& im, const Affine2& a) {
  Image out = Image::zeros(im.h, im.w);
  warp_generic(im.h, im.w, a, [&](int oy, int ox, double iy, double ix) {
    if (iy < 0 || ix < 0 || iy > im.h - 1 || ix > im.w - 1) return;  // zero fill
    const int y0 = static_cast<int>(iy), x0 = static_cast<int>(ix);
    const int y1 = std::min(y0 + 1, im.h - 1), x1 = std::min(x0 + 1, im.w - 1);
    const double ty = iy - y0, tx = ix - x0;
    out.at(oy, ox) = (1 - ty) * ((1 - tx) * im.at(y0, x0) + tx * im.at(y0, x1)) +
                     ty * ((1 - tx) * im.at(y1, x0) + tx * im.at(y1, x1));
  });
  return out;
}

Image warp_nearest(const Image& im, const Affine2& a) {
  Image out = Image::zeros(im.h, im.w);
  warp_generic(im.h, im.w, a, [&](int oy, int ox, double iy, double ix) {
    const int ny = static_cast<int>(std::lround(iy)), nx = static_cast<int>(std::lround(ix));
    if (ny < 0 || nx < 0 || ny >= im.h || nx >= im.w) return;
    out.at(oy, ox) = im.at(ny, nx);
  });
  return out;
}

Mask warp_mask_nearest(const Mask& m, const Affine2& a) {
  Mask out = Mask::zeros(m.h, m.w);
  warp_generic(m.h, m.w, a, [&](int oy, int ox, double iy, double ix) {
    const int ny = static_cast<int>(std::lround(iy)), nx = static_cast<int>(std::lround(ix));
    if (ny < 0 || nx < 0 || ny >= m.h || nx >= m.w) return;
    out.at(oy, ox) = m.at(ny, nx);
  });
  return out;
}

AugmentPolicy pretrain_policy(int h, int w) {
  AugmentPolicy p{"pretrain", h, w, {}};
  p.ops = {
      {AugOp::random_resized_crop, 1.0, 0.2, 1.0},
      {AugOp::hflip, 0.5},
      {AugOp::brightness_contrast, 0.8, 0.4, 0.4},
      {AugOp::gaussian_blur, 0.5, 0.1, 1.5},
  };
  return p;
}

AugmentPolicy task1_policy(int h, int w) {
  AugmentPolicy p{"task1", h, w, {}};
  p.ops = {
      {AugOp::hflip, 0.5},
      {AugOp::rotation, 1.0, -10.0, 10.0},
      {AugOp::gamma, 1.0, 0.7, 1.3},
      {AugOp::brightness, 1.0, 0.2},
  };
  return p;
}

AugmentPolicy task2_policy(int h, int w) {
  AugmentPolicy p{"task2", h, w, {}};
  p.ops = {
      {AugOp::rotation, 1.0, -30.0, 30.0},
      {AugOp::hflip, 0.5},
      {AugOp::gaussian_noise, 1.0, 0.03},
      {AugOp::shear, 1.0, 0.2},
  };
  return p;
}

AugmentPolicy task3_policy(int h, int w) {
  AugmentPolicy p{"task3", h, w, {}};
  p.ops = {
      {AugOp::rescale, 1.0, 0.8, 1.2},
      {AugOp::shift, 1.0, 0.1},
      {AugOp::rotation, 1.0, -15.0, 15.0},
      {AugOp::hflip, 0.5},
  };
  return p;
}

namespace {

// Geometric steps collapse into one affine warp so repeated resampling does not
// stack interpolation blur; intensity steps apply in order.
struct DrawnStep {
  const AugStep* step;
  bool active;
  double u0, u1;  // drawn parameters (op-specific)
};

std::vector<DrawnStep> draw_steps(const AugmentPolicy& policy, Rng& rng) {
  std::vector<DrawnStep> drawn;
  drawn.reserve(policy.ops.size());
  for (const auto& s : policy.ops) {
    DrawnStep d{&s, false, 0, 0};
    d.active = rng.uniform() < s.p;
    switch (s.op) {
      case AugOp::rotation: d.u0 = rng.uniform(s.a, s.b); break;
      case AugOp::gamma: d.u0 = rng.uniform(s.a, s.b); break;
      case AugOp::brightness: d.u0 = rng.uniform(-s.a, s.a); break;
      case AugOp::shear: d.u0 = rng.uniform(-s.a, s.a); break;
      case AugOp::rescale: d.u0 = rng.uniform(s.a, s.b); break;
      case AugOp::gaussian_blur: d.u0 = rng.uniform(s.a, s.b); break;
      case AugOp::shift:
        d.u0 = rng.uniform(-s.a, s.a);
        d.u1 = rng.uniform(-s.a, s.a);
        break;
      default: break;  // crop/flip/noise/bc draw inside their kernels
    }
    drawn.push_back(d);
  }
  return drawn;
}

// When defer_geometry is set, affine steps accumulate and are NOT applied here;
// the caller applies the returned geometry to image and mask alike.
Image run_steps(const AugmentPolicy& policy, const Image& image, std::vector<DrawnStep>& drawn,
                Rng& rng, bool defer_geometry, Affine2* geometry_out) {
  Image cur = image;
  Affine2 geo = Affine2::identity();
  bool has_geo = false;

  auto flush_geo = [&]() {
    if (!has_geo || defer_geometry) return;
    cur = warp_bilinear(cur, geo);
    geo = Affine2::identity();
    has_geo = false;
  };

  for (auto& d : drawn) {
    if (!d.active) continue;
    const auto& s = *d.step;
    switch (s.op) {
      case AugOp::random_resized_crop:
        flush_geo();
        cur = random_resized_crop(cur, s.a, s.b, rng);
        break;
      case AugOp::hflip:
        flush_geo();
        cur = hflip(cur);
        break;
      case AugOp::brightness_contrast:
        flush_geo();
        cur = brightness_contrast(cur, s.a, s.b, rng);
        break;
      case AugOp::gaussian_blur:
        flush_geo();
        cur = gaussian_blur(cur, d.u0);
        break;
      case AugOp::gamma:
        flush_geo();
        cur = apply_gamma(cur, d.u0);
        break;
      case AugOp::brightness:
        flush_geo();
        cur = add_brightness(cur, d.u0);
        break;
      case AugOp::gaussian_noise:
        flush_geo();
        cur = add_noise(cur, s.a, rng);
        break;
      case AugOp::rotation:
        geo = geo.then(rotation_affine(d.u0));
        has_geo = true;
        break;
      case AugOp::shear:
        geo = geo.then(shear_affine(d.u0));
        has_geo = true;
        break;
      case AugOp::rescale:
        geo = geo.then(scale_affine(d.u0));
        has_geo = true;
        break;
      case AugOp::shift:
        geo = geo.then(shift_affine(d.u0 * policy.h, d.u1 * policy.w));
        has_geo = true;
        break;
    }
  }
  if (geometry_out) *geometry_out = geo;
  flush_geo();
  return cur;
}

}  // namespace

Image apply(const AugmentPolicy& policy, const Image& image, Rng& rng) {
  check_shape(policy, image);
  auto drawn = draw_steps(policy, rng);
  Image out = run_steps(policy, image, drawn, rng, false, nullptr);
  out.v = out.v.min(1.0).max(0.0);
  return out;
}

std::pair<Image, Image> make_views(const AugmentPolicy& policy, const Image& image, Rng& rng) {
  Image a = apply(policy, image, rng);
  Image b = apply(policy, image, rng);
  return {std::move(a), std::move(b)};
}

std::pair<Image, Mask> apply_paired(const AugmentPolicy& policy, const Image& image,
                                    const Mask& mask, Rng& rng) {
  check_shape(policy, image);
  if (mask.h != image.h || mask.w != image.w)
    throw ArgumentError("augment: mask shape differs from image");

  auto drawn = draw_steps(policy, rng);
  bool flipped = false;
  for (auto& d : drawn) {
    if (d.step->op == AugOp::hflip && d.active) {
      flipped = true;
      d.active = false;  // pre-applied below to keep image and mask in lockstep
    }
  }

  Affine2 geo;
  Image img = run_steps(policy, flipped ? hflip(image) : image, drawn, rng, true, &geo);
  img = warp_bilinear(img, geo);
  img.v = img.v.min(1.0).max(0.0);

  Mask mcur = mask;
  if (flipped) {
    Mask fm = Mask::zeros(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x) fm.at(y, x) = mask.at(y, mask.w - 1 - x);
    mcur = std::move(fm);
  }
  Mask mout = warp_mask_nearest(mcur, geo);
  return {std::move(img), std::move(mout)};
}

}  // namespace awcl
