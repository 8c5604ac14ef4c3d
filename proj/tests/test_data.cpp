#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "awcl/data.hpp"
#include "awcl/rng.hpp"
#include "awcl/tensor.hpp"
#include "oracles.hpp"

using namespace awcl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("awcl_data_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_bytes(bytes.data(), bytes.size());
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("subsample keeps every stride-th frame") {
  std::vector<int> frames(24);
  for (int i = 0; i < 24; ++i) frames[static_cast<size_t>(i)] = i;
  CHECK(subsample_video(frames, 8) == std::vector<int>{0, 8, 16});
  CHECK(subsample_video(frames, 1) == frames);
  std::vector<int> seven(7);
  for (int i = 0; i < 7; ++i) seven[static_cast<size_t>(i)] = i;
  CHECK(subsample_video(seven, 8) == std::vector<int>{0});
  CHECK_THROWS_AS(subsample_video(frames, 0), ArgumentError);
}

TEST_CASE("preprocess crops and resizes to the frame geometry") {
  Image raw = Image::zeros(448, 576);
  for (int y = 0; y < raw.h; ++y)
    for (int x = 0; x < raw.w; ++x) raw.at(y, x) = ((y / 4 + x / 4) % 2) ? 1.0 : 0.0;

  SUBCASE("exact 2x downscale") {
    const Image out = preprocess(raw, {0, 0, 448, 576});
    CHECK(out.h == 224);
    CHECK(out.w == 288);
  }
  SUBCASE("constant input stays constant") {
    Image flat = Image::zeros(300, 400);
    flat.v.setConstant(0.37);
    const Image out = preprocess(flat, {10, 20, 250, 350});
    CHECK(out.h == 224);
    CHECK(out.w == 288);
    CHECK(std::abs(out.v.minCoeff() - 0.37) < 1e-12);
    CHECK(std::abs(out.v.maxCoeff() - 0.37) < 1e-12);
  }
  SUBCASE("checkerboard mean matches the scalar resampler oracle") {
    const Image out = preprocess(raw, {0, 0, 448, 576});
    std::vector<double> flat(static_cast<size_t>(raw.numel()));
    for (int64_t i = 0; i < raw.numel(); ++i) flat[static_cast<size_t>(i)] = raw.v[i];
    const auto ref = oracle::resample(flat, 448, 576, 224, 288);
    double ref_mean = 0;
    for (const double v : ref) ref_mean += v;
    ref_mean /= static_cast<double>(ref.size());
    CHECK(std::abs(out.v.mean() - ref_mean) < 1e-6);
  }
  SUBCASE("crop outside bounds is rejected") {
    CHECK_THROWS_AS(preprocess(raw, {400, 0, 100, 100}), ArgumentError);
    CHECK_THROWS_AS(preprocess(raw, {-1, 0, 10, 10}), ArgumentError);
  }
}

TEST_CASE("manifest load resolves labels against the taxonomy") {
  const auto dir = temp_dir("manifest");
  write_taxonomy(dir / "tax.tsv", default_taxonomy());
  {
    Image im = Image::zeros(8, 8);
    write_pgm(dir / "a.pgm", im);
    write_pgm(dir / "b.pgm", im);
    write_pgm(dir / "c.pgm", im);
  }
  std::ofstream(dir / "m.tsv") << "#taxonomy=tax.tsv\n"
                               << "a.pgm\tscan0\t0\t3VT\t-\n"
                               << "b.pgm\tscan0\t8\t-\t-\n"
                               << "c.pgm\tscan1\t0\tfemur\tfemur\n";
  const DatasetManifest m = load_manifest(dir / "m.tsv");
  REQUIRE(m.entries.size() == 3);
  const Taxonomy& t = m.taxonomy;
  CHECK(m.entries[0].fine_id == *t.fine_id("3VT"));
  CHECK(m.label_at(0, Granularity::coarse) == *t.coarse_id("heart"));  // derived on access
  CHECK(m.entries[1].fine_id == kUnlabeled);
  CHECK(m.label_at(1, Granularity::coarse) == kUnlabeled);

  SUBCASE("unknown label is a taxonomy error") {
    std::ofstream(dir / "bad.tsv") << "#taxonomy=tax.tsv\n"
                                   << "a.pgm\tscan0\t0\tfemur2\t-\n";
    CHECK_THROWS_AS(load_manifest(dir / "bad.tsv"), TaxonomyError);
  }
  SUBCASE("missing file is an io error") {
    CHECK_THROWS_AS(load_manifest(dir / "nope.tsv"), IoError);
  }
  SUBCASE("malformed line is a parse error") {
    std::ofstream(dir / "bad2.tsv") << "#taxonomy=tax.tsv\n"
                                    << "a.pgm\tscan0\n";
    CHECK_THROWS_AS(load_manifest(dir / "bad2.tsv"), ParseError);
  }
  SUBCASE("non-increasing frame index is a parse error") {
    std::ofstream(dir / "bad3.tsv") << "#taxonomy=tax.tsv\n"
                                    << "a.pgm\tscan0\t5\t-\t-\n"
                                    << "b.pgm\tscan0\t5\t-\t-\n";
    CHECK_THROWS_AS(load_manifest(dir / "bad3.tsv"), ParseError);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest round-trips through write and load") {
  const auto dir = temp_dir("roundtrip");
  SyntheticSpec spec;
  spec.n_scans = 4;
  spec.frames_per_scan = 12;
  spec.n_fine_classes = 4;
  spec.fine_per_coarse = 2;
  spec.label_fraction = 0.5;
  spec.image_h = 12;
  spec.image_w = 12;
  spec.seed = 3;
  const DatasetManifest m = generate_synthetic(spec, dir);
  write_manifest(dir / "copy.tsv", m);
  const DatasetManifest m2 = load_manifest(dir / "copy.tsv");
  REQUIRE(m2.entries.size() == m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(m2.entries[i].path == m.entries[i].path);
    CHECK(m2.entries[i].scan_id == m.entries[i].scan_id);
    CHECK(m2.entries[i].frame_index == m.entries[i].frame_index);
    CHECK(m2.entries[i].fine_id == m.entries[i].fine_id);
    CHECK(m2.entries[i].coarse_id == m.entries[i].coarse_id);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation is byte-deterministic in the seed") {
  SyntheticSpec spec;
  spec.n_scans = 3;
  spec.frames_per_scan = 10;
  spec.n_fine_classes = 4;
  spec.fine_per_coarse = 2;
  spec.label_fraction = 0.4;
  spec.image_h = 16;
  spec.image_w = 16;
  spec.seed = 7;
  spec.with_masks = true;

  const auto d1 = temp_dir("det1");
  const auto d2 = temp_dir("det2");
  generate_synthetic(spec, d1);
  generate_synthetic(spec, d2);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), d1);
    CHECK(file_hash(entry.path()) == file_hash(d2 / rel));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("synthetic label accounting is exact") {
  SUBCASE("label_fraction zero means no labels") {
    const auto dir = temp_dir("nolabels");
    SyntheticSpec spec;
    spec.n_scans = 3;
    spec.frames_per_scan = 10;
    spec.n_fine_classes = 4;
    spec.fine_per_coarse = 2;
    spec.label_fraction = 0.0;
    spec.image_h = 8;
    spec.image_w = 8;
    const DatasetManifest m = generate_synthetic(spec, dir);
    for (const auto& e : m.entries) {
      CHECK(e.fine_id == kUnlabeled);
      CHECK(e.coarse_id == kUnlabeled);
    }
    fs::remove_all(dir);
  }
  SUBCASE("10 scans x 50 frames at 0.3 label exactly 150") {
    const auto dir = temp_dir("frac");
    SyntheticSpec spec;
    spec.n_scans = 10;
    spec.frames_per_scan = 50;
    spec.n_fine_classes = 4;
    spec.fine_per_coarse = 2;
    spec.label_fraction = 0.3;
    spec.image_h = 8;
    spec.image_w = 8;
    spec.seed = 5;
    const DatasetManifest m = generate_synthetic(spec, dir);
    size_t labeled = 0;
    for (const auto& e : m.entries)
      if (e.fine_id != kUnlabeled) ++labeled;
    CHECK(labeled == 150);
    CHECK(m.entries.size() == 500);
    fs::remove_all(dir);
  }
  SUBCASE("indivisible class split is rejected") {
    SyntheticSpec spec;
    spec.n_fine_classes = 7;
    spec.fine_per_coarse = 2;
    CHECK_THROWS_AS(spec.validate(), ArgumentError);
  }
}

TEST_CASE("labeled entries satisfy coarsen(fine) == coarse") {
  const auto dir = temp_dir("coherent");
  SyntheticSpec spec;
  spec.n_scans = 4;
  spec.frames_per_scan = 20;
  spec.n_fine_classes = 6;
  spec.fine_per_coarse = 3;
  spec.label_fraction = 0.7;
  spec.image_h = 8;
  spec.image_w = 8;
  spec.seed = 9;
  const DatasetManifest m = generate_synthetic(spec, dir);
  for (size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].fine_id == kUnlabeled) continue;
    CHECK(m.taxonomy.coarsen(m.entries[i].fine_id) == m.entries[i].coarse_id);
  }
  fs::remove_all(dir);
}

TEST_CASE("pgm round-trip preserves quantized intensities") {
  const auto dir = temp_dir("pgm");
  Image im = Image::zeros(5, 7);
  Rng rng(2);
  for (int64_t i = 0; i < im.numel(); ++i) im.v[i] = rng.uniform();
  write_pgm(dir / "x.pgm", im);
  const Image back = read_pgm(dir / "x.pgm");
  REQUIRE(back.h == im.h);
  REQUIRE(back.w == im.w);
  for (int64_t i = 0; i < im.numel(); ++i)
    CHECK(std::abs(back.v[i] - im.v[i]) <= 0.5 / 255.0 + 1e-12);
  fs::remove_all(dir);
}

}  // TEST_SUITE
