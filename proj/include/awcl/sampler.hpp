#pragma once

#include <cstdint>
#include <vector>

#include "awcl/data.hpp"
#include "awcl/loss.hpp"

namespace awcl {

enum class SampleMode { simclr, clpi, awcl };
enum class PairGranularity { none, fine, coarse };

struct SamplerConfig {
  int batch_size = 32;          // N samples -> 2N embedding rows
  double anatomy_ratio = 1.0;   // fraction of labeled frames forming anatomy positives
  PairGranularity granularity = PairGranularity::none;
  SampleMode mode = SampleMode::simclr;
  uint64_t seed = 0;

  void validate() const;
};

struct PlanEntry {
  int frame_a = -1;            // manifest index
  int frame_b = -1;            // == frame_a except in clpi mode (scan-mate frame)
  bool participating = false;  // eligible to form cross-sample anatomy positives
};

struct BatchPlan {
  std::vector<PlanEntry> entries;  // exactly N
};

// Frames participating in anatomy-positive formation for this run: a fixed,
// seed-deterministic subset of the labeled frames of total size exactly
// floor(ratio * n_labeled), apportioned per class by largest remainder.
std::vector<uint8_t> select_participating(const DatasetManifest& manifest, const SamplerConfig& config);

// One epoch of batch plans. Every frame appears exactly once across the epoch;
// a trailing partial batch is dropped. In awcl mode, participating frames of a
// class with >= 2 members are co-located so each gets an in-batch anatomy
// positive; everything else fills the remaining slots.
std::vector<BatchPlan> plan_epoch(const DatasetManifest& manifest, const SamplerConfig& config,
                                  int epoch);

// Row metadata (2 rows per entry, interleaved views) for a planned batch at the
// requested pairing granularity.
std::vector<RowMeta> plan_row_meta(const BatchPlan& plan, const DatasetManifest& manifest,
                                   PairGranularity granularity);

}  // namespace awcl
