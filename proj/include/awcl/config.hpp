#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "awcl/data.hpp"
#include "awcl/nn.hpp"
#include "awcl/sampler.hpp"

namespace awcl {

// Pretraining hyperparameters. Defaults: Adam, weight decay 1e-6, lr 1e-3,
// 10 epochs, batch 32, tau 0.5, 80/20 scan-level train/validation split.
struct TrainConfig {
  uint64_t seed = 0;
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double temperature = 0.5;
  double val_fraction = 0.2;
  std::string backbone = "small_cnn";  // small_cnn | resnet18
  int projection_dim = 128;
  SampleMode mode = SampleMode::simclr;
  PairGranularity granularity = PairGranularity::none;
  double anatomy_ratio = 1.0;
  int checkpoint_every_steps = 0;  // 0 = epoch boundaries only

  SamplerConfig sampler_config() const;
  EncoderSpec encoder_spec() const;
  void validate() const;
};

struct Task1Config {
  int epochs = 70;
  double lr = 0.01;
  std::vector<int> lr_decay_epochs = {30, 55};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int folds = 3;
};

struct Task2Config {
  int epochs = 200;
  double lr = 0.1;
  int lr_decay_epoch = 150;
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 16;
  double train_fraction = 0.78;
};

struct Task3Config {
  int iterations = 50000;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int batch_size = 8;
  double train_fraction = 0.8;
};

enum class TaskId { plane_detection = 1, first_trimester = 2, crl_nt_seg = 3 };
enum class Protocol { full_finetune, partial_finetune };

struct EvalConfig {
  TaskId task = TaskId::first_trimester;
  Protocol protocol = Protocol::full_finetune;
  uint64_t seed = 0;
  Task1Config task1;
  Task2Config task2;
  Task3Config task3;

  void validate() const;
};

// Frozen-encoder linear probe (representation-quality readout).
struct ProbeConfig {
  uint64_t seed = 0;
  int epochs = 300;
  double lr = 0.05;
  double weight_decay = 0.0;
  double train_fraction = 0.8;
  PairGranularity label_granularity = PairGranularity::fine;

  void validate() const;
};

// Umbrella config file: nested sections, every field defaulted, lossless
// round-trip through JSON.
struct RunConfig {
  uint64_t seed = 0;
  SyntheticSpec synth;
  TrainConfig train;
  EvalConfig eval;
  ProbeConfig probe;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);
uint64_t config_hash(const RunConfig& c);

std::string mode_name(SampleMode m);
SampleMode mode_from_name(const std::string& s);
std::string granularity_name(PairGranularity g);
PairGranularity granularity_from_name(const std::string& s);

}  // namespace awcl
