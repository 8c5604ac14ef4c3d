#include "awcl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "awcl/rng.hpp"

namespace awcl {

namespace {

int64_t exact_floor(double x) { return static_cast<int64_t>(std::floor(x + 1e-9)); }

Granularity as_taxonomy_granularity(PairGranularity g) {
  return g == PairGranularity::coarse ? Granularity::coarse : Granularity::fine;
}

}  // namespace

void SamplerConfig::validate() const {
  if (batch_size < 2) throw ConfigError("sampler.batch_size must be >= 2");
  if (anatomy_ratio < 0.0 || anatomy_ratio > 1.0)
    throw ConfigError("sampler.anatomy_ratio must be in [0,1]");
  if (mode == SampleMode::simclr && granularity != PairGranularity::none)
    throw ConfigError("sampler.granularity must be none in simclr mode");
  if (mode == SampleMode::clpi && granularity != PairGranularity::none)
    throw ConfigError("sampler.granularity must be none in clpi mode");
  if (mode == SampleMode::awcl && granularity == PairGranularity::none)
    throw ConfigError("sampler.granularity must be fine or coarse in awcl mode");
}

std::vector<uint8_t> select_participating(const DatasetManifest& manifest, const SamplerConfig& config) {
  config.validate();
  std::vector<uint8_t> flags(manifest.entries.size(), 0);
  if (config.mode != SampleMode::awcl) return flags;

  const Granularity g = as_taxonomy_granularity(config.granularity);
  std::map<int, std::vector<int>> by_class;
  int64_t n_labeled = 0;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const int label = manifest.label_at(i, g);
    if (label == kUnlabeled) continue;
    by_class[label].push_back(static_cast<int>(i));
    ++n_labeled;
  }
  if (n_labeled == 0) throw ConfigError("awcl mode requires labeled frames at the chosen granularity");

  // Exact total floor(ratio * labeled); per-class quotas by largest remainder.
  const int64_t target = exact_floor(config.anatomy_ratio * static_cast<double>(n_labeled));
  struct ClassQuota {
    int label;
    int64_t base;
    double remainder;
  };
  std::vector<ClassQuota> quotas;
  int64_t assigned = 0;
  for (const auto& [label, members] : by_class) {
    const double q = config.anatomy_ratio * static_cast<double>(members.size());
    const int64_t base = exact_floor(q);
    quotas.push_back({label, base, q - static_cast<double>(base)});
    assigned += base;
  }
  int64_t leftover = std::max<int64_t>(0, target - assigned);
  std::stable_sort(quotas.begin(), quotas.end(),
                   [](const ClassQuota& a, const ClassQuota& b) { return a.remainder > b.remainder; });
  for (auto& q : quotas) {
    if (leftover <= 0) break;
    ++q.base;
    --leftover;
  }

  for (const auto& q : quotas) {
    auto members = by_class.at(q.label);
    Rng rng(derive_seed(config.seed, "participate", static_cast<uint64_t>(q.label)));
    rng.shuffle(members);
    const int64_t take = std::min<int64_t>(q.base, static_cast<int64_t>(members.size()));
    for (int64_t i = 0; i < take; ++i) flags[static_cast<size_t>(members[static_cast<size_t>(i)])] = 1;
  }
  return flags;
}

namespace {

// Split one class's participating frames into chunks of size [2, max_chunk+1],
// never leaving a trailing singleton.
std::vector<std::vector<int>> chunk_class(const std::vector<int>& members, int max_chunk) {
  std::vector<std::vector<int>> chunks;
  size_t pos = 0;
  while (pos < members.size()) {
    size_t take = std::min<size_t>(static_cast<size_t>(max_chunk), members.size() - pos);
    if (members.size() - pos - take == 1) {
      if (take >= 3) --take;
      else ++take;  // absorb the orphan
    }
    chunks.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(pos),
                        members.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  return chunks;
}

}  // namespace

std::vector<BatchPlan> plan_epoch(const DatasetManifest& manifest, const SamplerConfig& config,
                                  int epoch) {
  config.validate();
  const int n_frames = static_cast<int>(manifest.entries.size());
  const int N = config.batch_size;

  std::vector<int> shuffled(static_cast<size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) shuffled[static_cast<size_t>(i)] = i;
  Rng shuffle_rng(derive_seed(config.seed, "shuffle", static_cast<uint64_t>(epoch)));
  shuffle_rng.shuffle(shuffled);

  std::vector<BatchPlan> plans;

  if (config.mode == SampleMode::clpi) {
    // Positive pair = two distinct frames of the same scan; odd remainders
    // self-pair.
    std::map<std::string, std::vector<int>> by_scan;
    std::vector<std::string> scan_order;
    for (const int f : shuffled) {
      const auto& sid = manifest.entries[static_cast<size_t>(f)].scan_id;
      if (by_scan.find(sid) == by_scan.end()) scan_order.push_back(sid);
      by_scan[sid].push_back(f);
    }
    std::vector<PlanEntry> entries;
    for (const auto& sid : scan_order) {
      const auto& frames = by_scan[sid];
      size_t i = 0;
      for (; i + 1 < frames.size(); i += 2) entries.push_back({frames[i], frames[i + 1], false});
      if (i < frames.size()) entries.push_back({frames[i], frames[i], false});
    }
    for (size_t pos = 0; pos + static_cast<size_t>(N) <= entries.size(); pos += static_cast<size_t>(N))
      plans.push_back({std::vector<PlanEntry>(entries.begin() + static_cast<std::ptrdiff_t>(pos),
                                              entries.begin() + static_cast<std::ptrdiff_t>(pos + N))});
    return plans;
  }

  std::vector<uint8_t> participating(manifest.entries.size(), 0);
  if (config.mode == SampleMode::awcl) participating = select_participating(manifest, config);

  // Bucket participating frames per class in shuffled order; everything else
  // is filler. Singleton classes batch as filler (their anchors only ever get
  // their own view as positive).
  const Granularity g = as_taxonomy_granularity(config.granularity);
  std::map<int, std::vector<int>> buckets;
  std::vector<int> class_order;
  std::vector<int> filler;
  for (const int f : shuffled) {
    if (participating[static_cast<size_t>(f)]) {
      const int label = manifest.label_at(static_cast<size_t>(f), g);
      if (buckets.find(label) == buckets.end()) class_order.push_back(label);
      buckets[label].push_back(f);
    } else {
      filler.push_back(f);
    }
  }

  // Small same-class groups (pairs up to N/8) spread round-robin over the
  // epoch's batches, so anatomy positives appear in every batch alongside
  // unlabeled negatives instead of clumping into single-class batches.
  const int group_cap = std::max(2, N / 8);
  std::vector<std::vector<int>> chunks;
  for (const int label : class_order) {
    auto& members = buckets[label];
    if (members.size() < 2) {
      for (const int f : members) filler.push_back(f);
      continue;
    }
    for (auto& c : chunk_class(members, group_cap)) chunks.push_back(std::move(c));
  }

  struct Skeleton {
    std::vector<int> frames;
    std::vector<uint8_t> flags;
  };
  const size_t n_batches = static_cast<size_t>(n_frames / N);
  std::vector<Skeleton> skeletons(n_batches);
  size_t cursor = 0;
  for (auto& chunk : chunks) {
    bool placed = false;
    for (size_t tries = 0; tries < n_batches; ++tries) {
      auto& sk = skeletons[(cursor + tries) % n_batches];
      if (sk.frames.size() + chunk.size() <= static_cast<size_t>(N)) {
        for (const int f : chunk) {
          sk.frames.push_back(f);
          sk.flags.push_back(1);
        }
        cursor = (cursor + tries + 1) % n_batches;
        placed = true;
        break;
      }
    }
    if (!placed)
      for (const int f : chunk) filler.push_back(f);  // no room anywhere; tail-drop territory
  }

  // Fill gaps with filler frames; skeletons that still come up short (filler
  // exhausted) spill their content into the leftover stream.
  size_t fpos = 0;
  std::vector<int> leftover_frames;
  std::vector<uint8_t> leftover_flags;
  for (auto& sk : skeletons) {
    while (sk.frames.size() < static_cast<size_t>(N) && fpos < filler.size()) {
      sk.frames.push_back(filler[fpos++]);
      sk.flags.push_back(0);
    }
    if (sk.frames.size() == static_cast<size_t>(N)) {
      BatchPlan plan;
      for (size_t i = 0; i < sk.frames.size(); ++i)
        plan.entries.push_back({sk.frames[i], sk.frames[i], sk.flags[i] != 0});
      plans.push_back(std::move(plan));
    } else {
      for (size_t i = 0; i < sk.frames.size(); ++i) {
        leftover_frames.push_back(sk.frames[i]);
        leftover_flags.push_back(sk.flags[i]);
      }
    }
  }
  for (; fpos < filler.size(); ++fpos) {
    leftover_frames.push_back(filler[fpos]);
    leftover_flags.push_back(0);
  }
  for (size_t pos = 0; pos + static_cast<size_t>(N) <= leftover_frames.size();
       pos += static_cast<size_t>(N)) {
    BatchPlan plan;
    for (size_t i = pos; i < pos + static_cast<size_t>(N); ++i)
      plan.entries.push_back({leftover_frames[i], leftover_frames[i], leftover_flags[i] != 0});
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::vector<RowMeta> plan_row_meta(const BatchPlan& plan, const DatasetManifest& manifest,
                                   PairGranularity granularity) {
  std::vector<RowMeta> meta;
  meta.reserve(plan.entries.size() * 2);
  for (size_t k = 0; k < plan.entries.size(); ++k) {
    const auto& e = plan.entries[k];
    int anatomy = kUnlabeled;
    if (e.participating && granularity != PairGranularity::none)
      anatomy = manifest.label_at(static_cast<size_t>(e.frame_a), as_taxonomy_granularity(granularity));
    const int row_a = static_cast<int>(2 * k);
    meta.push_back({static_cast<int>(k), ViewId::a, anatomy, row_a + 1});
    meta.push_back({static_cast<int>(k), ViewId::b, anatomy, row_a});
  }
  return meta;
}

}  // namespace awcl
