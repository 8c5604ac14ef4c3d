#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "awcl/image.hpp"
#include "awcl/taxonomy.hpp"

namespace awcl {

constexpr int kUnlabeled = -1;

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string scan_id;
  int frame_index = 0;
  int fine_id = kUnlabeled;
  int coarse_id = kUnlabeled;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::string taxonomy_ref;
  Taxonomy taxonomy;
  std::vector<ManifestEntry> entries;

  // Coarse label falls back to coarsen(fine) when only the fine label is present.
  int label_at(size_t idx, Granularity g) const {
    const auto& e = entries[idx];
    if (g == Granularity::fine) return e.fine_id;
    if (e.coarse_id != kUnlabeled) return e.coarse_id;
    if (e.fine_id != kUnlabeled) return taxonomy.coarsen(e.fine_id);
    return kUnlabeled;
  }

  std::filesystem::path image_path(size_t idx) const { return base_dir / entries[idx].path; }
  std::filesystem::path mask_path(size_t idx) const {
    std::filesystem::path p = base_dir / entries[idx].path;
    p.replace_extension();
    return std::filesystem::path(p.string() + "_mask.pgm");
  }

  size_t n_labeled(Granularity g) const {
    size_t n = 0;
    for (size_t i = 0; i < entries.size(); ++i)
      if (label_at(i, g) != kUnlabeled) ++n;
    return n;
  }
};

// Manifest file format:
//   #taxonomy=<path relative to the manifest>
//   <relative_image_path>\t<scan_id>\t<frame_index>\t<fine_name_or_->\t<coarse_name_or_->
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Keeps frames at indices 0, stride, 2*stride, ... (temporal redundancy reduction;
// the ingestion default is every 8th frame).
template <typename T>
std::vector<T> subsample_video(const std::vector<T>& frames, int stride = 8) {
  if (stride < 1) throw ArgumentError("subsample_video: stride must be >= 1");
  std::vector<T> out;
  for (size_t i = 0; i < frames.size(); i += static_cast<size_t>(stride)) out.push_back(frames[i]);
  return out;
}

struct SyntheticSpec {
  int n_scans = 10;
  int frames_per_scan = 50;
  int n_fine_classes = 8;
  int fine_per_coarse = 2;
  double label_fraction = 0.5;
  int image_h = 32;
  int image_w = 32;
  uint64_t seed = 0;
  bool with_masks = false;  // also emit 3-class masks (<image>_mask.pgm)

  void validate() const;
};

// Emulated multi-anatomy scan videos: each scan is a sequence of segments, each
// segment drawn from one fine class. Classes are oriented-grating texture
// families: orientation separates coarse groups, spatial frequency separates
// fine sub-classes within a group. Deterministic in seed.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// In-memory frame image cache over a manifest.
class FrameStore {
 public:
  explicit FrameStore(const DatasetManifest& m) : manifest_(&m), cache_(m.entries.size()) {}

  const Image& image(size_t idx) {
    auto& slot = cache_[idx];
    if (!slot) slot = read_pgm(manifest_->image_path(idx));
    return *slot;
  }

 private:
  const DatasetManifest* manifest_;
  std::vector<std::optional<Image>> cache_;
};

}  // namespace awcl
