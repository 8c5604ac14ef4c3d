#include "awcl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace awcl {

namespace {

uint8_t quantize(double x) {
  const double c = std::clamp(x, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

struct PgmHeader {
  int w = 0, h = 0, maxval = 0;
};

PgmHeader read_pgm_header(std::ifstream& in, const std::filesystem::path& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw ParseError("pgm: bad magic in " + path.string());
  PgmHeader hdr;
  int fields = 0;
  while (fields < 3) {
    int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    int value;
    if (!(in >> value)) throw ParseError("pgm: truncated header in " + path.string());
    if (fields == 0) hdr.w = value;
    else if (fields == 1) hdr.h = value;
    else hdr.maxval = value;
    ++fields;
  }
  in.get();  // single whitespace before raster
  if (hdr.w <= 0 || hdr.h <= 0 || hdr.maxval != 255)
    throw ParseError("pgm: unsupported header in " + path.string());
  return hdr;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& im) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pgm: cannot open for write: " + path.string());
  out << "P5\n" << im.w << " " << im.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(im.w));
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x) row[static_cast<size_t>(x)] = quantize(im.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), im.w);
  }
  if (!out) throw IoError("pgm: write failed: " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("pgm: cannot open: " + path.string());
  const PgmHeader hdr = read_pgm_header(in, path);
  Image im = Image::zeros(hdr.h, hdr.w);
  std::vector<uint8_t> row(static_cast<size_t>(hdr.w));
  for (int y = 0; y < hdr.h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), hdr.w);
    if (!in) throw ParseError("pgm: truncated raster in " + path.string());
    for (int x = 0; x < hdr.w; ++x) im.at(y, x) = row[static_cast<size_t>(x)] / 255.0;
  }
  return im;
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pgm: cannot open for write: " + path.string());
  out << "P5\n" << m.w << " " << m.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(m.w));
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) row[static_cast<size_t>(x)] = static_cast<uint8_t>(m.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), m.w);
  }
  if (!out) throw IoError("pgm: write failed: " + path.string());
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("pgm: cannot open: " + path.string());
  const PgmHeader hdr = read_pgm_header(in, path);
  Mask m = Mask::zeros(hdr.h, hdr.w);
  std::vector<uint8_t> row(static_cast<size_t>(hdr.w));
  for (int y = 0; y < hdr.h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), hdr.w);
    if (!in) throw ParseError("pgm: truncated raster in " + path.string());
    for (int x = 0; x < hdr.w; ++x) m.at(y, x) = row[static_cast<size_t>(x)];
  }
  return m;
}

Image crop(const Image& im, const CropBox& box) {
  if (box.y < 0 || box.x < 0 || box.h <= 0 || box.w <= 0 ||
      box.y + box.h > im.h || box.x + box.w > im.w)
    throw ArgumentError("crop: box outside image bounds");
  Image out = Image::zeros(box.h, box.w);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) out.at(y, x) = im.at(box.y + y, box.x + x);
  return out;
}

Image bilinear_resize(const Image& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("bilinear_resize: bad output size");
  Image out = Image::zeros(out_h, out_w);
  const double sy = static_cast<double>(im.h) / out_h;
  const double sx = static_cast<double>(im.w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(im.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, im.h - 1);
    const double ty = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(im.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, im.w - 1);
      const double tx = fx - x0;
      out.at(oy, ox) = (1 - ty) * ((1 - tx) * im.at(y0, x0) + tx * im.at(y0, x1)) +
                       ty * ((1 - tx) * im.at(y1, x0) + tx * im.at(y1, x1));
    }
  }
  return out;
}

Image preprocess(const Image& raw, const CropBox& box, int out_h, int out_w) {
  Image c = crop(raw, box);
  Image r = bilinear_resize(c, out_h, out_w);
  r.v = r.v.min(1.0).max(0.0);
  return r;
}

}  // namespace awcl
