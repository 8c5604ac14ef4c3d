#include "awcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "awcl/rng.hpp"

namespace awcl {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string col;
  while (std::getline(ss, col, '\t')) cols.push_back(col);
  return cols;
}

// floor with protection against binary-fraction dust (0.3 * 1000 = 299.999...).
int64_t exact_floor(double x) { return static_cast<int64_t>(std::floor(x + 1e-9)); }

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open: " + path.string());

  std::string header;
  if (!std::getline(in, header) || header.rfind("#taxonomy=", 0) != 0)
    throw ParseError("manifest: missing #taxonomy= header in " + path.string());
  const std::string tax_ref = header.substr(std::string("#taxonomy=").size());

  DatasetManifest m{path.parent_path(), tax_ref, load_taxonomy(path.parent_path() / tax_ref), {}};

  std::map<std::string, int> last_index;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tabs(line);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 5) throw ParseError("manifest: expected 5 columns at " + where);

    ManifestEntry e;
    e.path = cols[0];
    e.scan_id = cols[1];
    try {
      e.frame_index = std::stoi(cols[2]);
    } catch (...) {
      throw ParseError("manifest: bad frame index at " + where);
    }
    if (e.frame_index < 0) throw ParseError("manifest: negative frame index at " + where);
    if (cols[3] != "-") {
      const auto id = m.taxonomy.fine_id(cols[3]);
      if (!id) throw TaxonomyError("manifest: unknown fine label '" + cols[3] + "' at " + where);
      e.fine_id = *id;
    }
    if (cols[4] != "-") {
      const auto id = m.taxonomy.coarse_id(cols[4]);
      if (!id) throw TaxonomyError("manifest: unknown coarse label '" + cols[4] + "' at " + where);
      e.coarse_id = *id;
    }
    const auto it = last_index.find(e.scan_id);
    if (it != last_index.end() && e.frame_index <= it->second)
      throw ParseError("manifest: frame_index not strictly increasing for scan " + e.scan_id + " at " + where);
    last_index[e.scan_id] = e.frame_index;
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("manifest: cannot open for write: " + path.string());
  out << "#taxonomy=" << m.taxonomy_ref << "\n";
  for (const auto& e : m.entries) {
    out << e.path << "\t" << e.scan_id << "\t" << e.frame_index << "\t"
        << (e.fine_id == kUnlabeled ? "-" : m.taxonomy.fine_name(e.fine_id)) << "\t"
        << (e.coarse_id == kUnlabeled ? "-" : m.taxonomy.coarse_name(e.coarse_id)) << "\n";
  }
  if (!out) throw IoError("manifest: write failed: " + path.string());
}

void SyntheticSpec::validate() const {
  if (n_scans <= 0 || frames_per_scan <= 0 || n_fine_classes <= 0 || fine_per_coarse <= 0)
    throw ArgumentError("synthetic spec: all counts must be positive");
  if (label_fraction < 0.0 || label_fraction > 1.0)
    throw ArgumentError("synthetic spec: label_fraction must be in [0,1]");
  if (image_h <= 0 || image_w <= 0) throw ArgumentError("synthetic spec: bad image size");
  if (n_fine_classes % fine_per_coarse != 0)
    throw ArgumentError("synthetic spec: n_fine_classes must be divisible by fine_per_coarse");
}

namespace {

Taxonomy synthetic_taxonomy(int n_fine, int fine_per_coarse) {
  const int n_coarse = n_fine / fine_per_coarse;
  std::vector<AnatomyLabel> coarse, fine;
  std::vector<int> mapping;
  for (int c = 0; c < n_coarse; ++c)
    coarse.push_back({c, "organ" + std::to_string(c), Granularity::coarse});
  for (int f = 0; f < n_fine; ++f) {
    const int c = f / fine_per_coarse;
    fine.push_back({f, "organ" + std::to_string(c) + "_view" + std::to_string(f % fine_per_coarse),
                    Granularity::fine});
    mapping.push_back(c);
  }
  return Taxonomy(std::move(fine), std::move(coarse), std::move(mapping));
}

struct FrameGeometry {
  double cy, cx;        // ellipse center
  double ry, rx;        // ellipse semi-axes (pixels)
  double blob_y, blob_x, blob_r;
  double base, amplitude;  // per-frame gain/brightness nuisance
};

// Oriented grating inside an ellipse over a dark background; a small bright
// blob provides the third segmentation class. Orientation separates coarse
// groups, spatial frequency separates fine sub-classes; phase, gain and
// brightness vary per frame so that frames of one class differ in appearance.
void render_frame(Image& im, Mask& mask, int fine_id, int fine_per_coarse, int n_coarse,
                  const FrameGeometry& geo, double phase, double theta_jitter, Rng& noise_rng) {
  const int coarse_id = fine_id / fine_per_coarse;
  const int sub = fine_id % fine_per_coarse;
  const double theta = 3.14159265358979323846 * coarse_id / n_coarse + theta_jitter;
  const double freq = 0.10 + 0.05 * sub;
  const double ct = std::cos(theta), st = std::sin(theta);

  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x) {
      const double ey = (y - geo.cy) / geo.ry;
      const double ex = (x - geo.cx) / geo.rx;
      const bool inside = ey * ey + ex * ex <= 1.0;
      double val = 0.08;
      int label = 0;
      if (inside) {
        val = geo.base +
              geo.amplitude * std::sin(6.28318530717958647692 * freq * (x * ct + y * st) + phase);
        label = 1;
        const double by = y - geo.blob_y, bx = x - geo.blob_x;
        if (by * by + bx * bx <= geo.blob_r * geo.blob_r) {
          val = std::min(1.0, val + 0.30);
          label = 2;
        }
      }
      val += noise_rng.normal(0.0, 0.05);
      im.at(y, x) = std::clamp(val, 0.0, 1.0);
      mask.at(y, x) = label;
    }
  }
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  const int n_coarse = spec.n_fine_classes / spec.fine_per_coarse;

  std::filesystem::create_directories(out_dir / "images");
  Taxonomy tax = synthetic_taxonomy(spec.n_fine_classes, spec.fine_per_coarse);
  write_taxonomy(out_dir / "taxonomy.tsv", tax);

  DatasetManifest m{out_dir, "taxonomy.tsv", tax, {}};

  // Label budget: floor(total * fraction), floored per scan, remainder to the
  // earliest scans.
  const int64_t total = static_cast<int64_t>(spec.n_scans) * spec.frames_per_scan;
  const int64_t target = exact_floor(spec.label_fraction * static_cast<double>(total));
  const int64_t base = exact_floor(spec.label_fraction * static_cast<double>(spec.frames_per_scan));
  int64_t remainder = target - base * spec.n_scans;

  for (int scan = 0; scan < spec.n_scans; ++scan) {
    Rng scan_rng(derive_seed(spec.seed, "scan", static_cast<uint64_t>(scan)));

    // Segment the scan into runs of one fine class each.
    std::vector<int> frame_class(static_cast<size_t>(spec.frames_per_scan));
    int pos = 0;
    while (pos < spec.frames_per_scan) {
      const int cls = scan_rng.below_int(spec.n_fine_classes);
      const int len = std::min(4 + scan_rng.below_int(5), spec.frames_per_scan - pos);
      for (int i = 0; i < len; ++i) frame_class[static_cast<size_t>(pos + i)] = cls;
      pos += len;
    }

    int64_t n_label = base + (remainder > 0 ? 1 : 0);
    if (remainder > 0) --remainder;
    std::vector<int> order(static_cast<size_t>(spec.frames_per_scan));
    for (int i = 0; i < spec.frames_per_scan; ++i) order[static_cast<size_t>(i)] = i;
    Rng label_rng(derive_seed(spec.seed, "labels", static_cast<uint64_t>(scan)));
    label_rng.shuffle(order);
    std::vector<bool> labeled(static_cast<size_t>(spec.frames_per_scan), false);
    for (int64_t i = 0; i < n_label; ++i) labeled[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

    char scan_name[32];
    std::snprintf(scan_name, sizeof scan_name, "scan%03d", scan);

    for (int f = 0; f < spec.frames_per_scan; ++f) {
      Rng frame_rng(derive_seed(spec.seed, "frame", static_cast<uint64_t>(scan), static_cast<uint64_t>(f)));
      FrameGeometry geo;
      geo.cy = spec.image_h * (0.5 + 0.06 * (frame_rng.uniform() - 0.5));
      geo.cx = spec.image_w * (0.5 + 0.06 * (frame_rng.uniform() - 0.5));
      geo.ry = spec.image_h * frame_rng.uniform(0.36, 0.44);
      geo.rx = spec.image_w * frame_rng.uniform(0.36, 0.44);
      const double ang = frame_rng.uniform(0.0, 6.28318530717958647692);
      geo.blob_y = geo.cy + 0.5 * geo.ry * std::sin(ang);
      geo.blob_x = geo.cx + 0.5 * geo.rx * std::cos(ang);
      geo.blob_r = 0.14 * std::min(spec.image_h, spec.image_w);
      geo.base = frame_rng.uniform(0.38, 0.62);
      geo.amplitude = frame_rng.uniform(0.12, 0.33);
      const double phase = frame_rng.uniform(0.0, 6.28318530717958647692);
      const double jitter = frame_rng.normal(0.0, 0.06);

      Image im = Image::zeros(spec.image_h, spec.image_w);
      Mask mask = Mask::zeros(spec.image_h, spec.image_w);
      const int cls = frame_class[static_cast<size_t>(f)];
      render_frame(im, mask, cls, spec.fine_per_coarse, n_coarse, geo, phase, jitter, frame_rng);

      char img_name[64];
      std::snprintf(img_name, sizeof img_name, "images/s%03d_f%04d.pgm", scan, f);
      write_pgm(out_dir / img_name, im);
      if (spec.with_masks) {
        char mask_name[64];
        std::snprintf(mask_name, sizeof mask_name, "images/s%03d_f%04d_mask.pgm", scan, f);
        write_mask_pgm(out_dir / mask_name, mask);
      }

      ManifestEntry e;
      e.path = img_name;
      e.scan_id = scan_name;
      e.frame_index = f;
      if (labeled[static_cast<size_t>(f)]) {
        e.fine_id = cls;
        e.coarse_id = tax.coarsen(cls);
      }
      m.entries.push_back(std::move(e));
    }
  }

  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace awcl
