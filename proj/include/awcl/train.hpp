#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "awcl/augment.hpp"
#include "awcl/config.hpp"
#include "awcl/data.hpp"
#include "awcl/nn.hpp"
#include "awcl/sampler.hpp"

namespace awcl {

struct LossLogRow {
  int epoch = 0;
  int step = 0;
  double la_fraction = 0.0;  // share of anchors on the anatomy-aware branch
  double loss = 0.0;
};

struct PretrainResult {
  std::vector<LossLogRow> log;
  std::vector<double> val_loss;  // one entry per completed epoch
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

// Scan-level split: no scan contributes frames to both sides.
std::pair<std::vector<size_t>, std::vector<size_t>> split_train_val(const DatasetManifest& m,
                                                                    double val_fraction,
                                                                    uint64_t seed);
// Scan-level k-fold assignment (fold id per scan, round-robin after shuffle).
std::vector<std::vector<size_t>> kfold_by_scan(const DatasetManifest& m, int k, uint64_t seed);

DatasetManifest subset_manifest(const DatasetManifest& m, const std::vector<size_t>& indices);

// Sample -> augment -> embed -> per-sample loss dispatch -> Adam step.
// Deterministic in config.seed; checkpoints allow bit-identical resume.
// stop_after_steps > 0 ends the run early after that many optimizer steps
// (checkpointing the cursor), simulating an interruption.
PretrainResult pretrain(const TrainConfig& config, const DatasetManifest& manifest,
                        const std::filesystem::path& out_dir, int stop_after_steps = 0);

// Continues a saved run; the loss trajectory matches an uninterrupted run.
PretrainResult pretrain_resume(const std::filesystem::path& checkpoint_path,
                               const TrainConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path& out_dir);

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log);
void append_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log);

}  // namespace awcl
