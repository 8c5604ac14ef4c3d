#include "awcl/config.hpp"

#include <fstream>

#include "awcl/rng.hpp"

namespace awcl {

using json = nlohmann::json;

SamplerConfig TrainConfig::sampler_config() const {
  SamplerConfig s;
  s.batch_size = batch_size;
  s.anatomy_ratio = anatomy_ratio;
  s.granularity = granularity;
  s.mode = mode;
  s.seed = derive_seed(seed, "sampler");
  return s;
}

EncoderSpec TrainConfig::encoder_spec() const {
  EncoderSpec spec = (backbone == "resnet18") ? EncoderSpec::resnet18(projection_dim)
                                              : EncoderSpec::small_cnn(projection_dim);
  return spec;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(temperature > 0)) throw ConfigError("train.temperature must be positive");
  if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("train.val_fraction must be in [0,1)");
  if (backbone != "small_cnn" && backbone != "resnet18")
    throw ConfigError("train.backbone must be small_cnn or resnet18");
  if (projection_dim <= 0) throw ConfigError("train.projection_dim must be positive");
  sampler_config().validate();  // reports anatomy_ratio / granularity issues
}

void EvalConfig::validate() const {
  if (task1.epochs <= 0 || task2.epochs <= 0 || task3.iterations <= 0)
    throw ConfigError("eval schedules must be positive");
  if (task1.folds < 2) throw ConfigError("eval.task1.folds must be >= 2");
  if (task2.train_fraction <= 0 || task2.train_fraction >= 1)
    throw ConfigError("eval.task2.train_fraction must be in (0,1)");
  if (task3.train_fraction <= 0 || task3.train_fraction >= 1)
    throw ConfigError("eval.task3.train_fraction must be in (0,1)");
}

void ProbeConfig::validate() const {
  if (epochs <= 0) throw ConfigError("probe.epochs must be positive");
  if (!(lr > 0)) throw ConfigError("probe.lr must be positive");
  if (train_fraction <= 0 || train_fraction >= 1)
    throw ConfigError("probe.train_fraction must be in (0,1)");
  if (label_granularity == PairGranularity::none)
    throw ConfigError("probe.label_granularity must be fine or coarse");
}

std::string mode_name(SampleMode m) {
  switch (m) {
    case SampleMode::simclr: return "simclr";
    case SampleMode::clpi: return "clpi";
    case SampleMode::awcl: return "awcl";
  }
  return "simclr";
}

SampleMode mode_from_name(const std::string& s) {
  if (s == "simclr") return SampleMode::simclr;
  if (s == "clpi") return SampleMode::clpi;
  if (s == "awcl") return SampleMode::awcl;
  throw ConfigError("sampler.mode must be simclr, clpi or awcl (got '" + s + "')");
}

std::string granularity_name(PairGranularity g) {
  switch (g) {
    case PairGranularity::none: return "none";
    case PairGranularity::fine: return "fine";
    case PairGranularity::coarse: return "coarse";
  }
  return "none";
}

PairGranularity granularity_from_name(const std::string& s) {
  if (s == "none") return PairGranularity::none;
  if (s == "fine") return PairGranularity::fine;
  if (s == "coarse") return PairGranularity::coarse;
  throw ConfigError("granularity must be none, fine or coarse (got '" + s + "')");
}

namespace {

json synth_to_json(const SyntheticSpec& s) {
  return {{"n_scans", s.n_scans},
          {"frames_per_scan", s.frames_per_scan},
          {"n_fine_classes", s.n_fine_classes},
          {"fine_per_coarse", s.fine_per_coarse},
          {"label_fraction", s.label_fraction},
          {"image_h", s.image_h},
          {"image_w", s.image_w},
          {"seed", s.seed},
          {"with_masks", s.with_masks}};
}

json train_to_json(const TrainConfig& t) {
  return {{"seed", t.seed},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"temperature", t.temperature},
          {"val_fraction", t.val_fraction},
          {"backbone", t.backbone},
          {"projection_dim", t.projection_dim},
          {"mode", mode_name(t.mode)},
          {"granularity", granularity_name(t.granularity)},
          {"anatomy_ratio", t.anatomy_ratio},
          {"checkpoint_every_steps", t.checkpoint_every_steps}};
}

json eval_to_json(const EvalConfig& e) {
  return {{"task", static_cast<int>(e.task)},
          {"protocol", e.protocol == Protocol::full_finetune ? "full" : "partial"},
          {"seed", e.seed},
          {"task1",
           {{"epochs", e.task1.epochs},
            {"lr", e.task1.lr},
            {"lr_decay_epochs", e.task1.lr_decay_epochs},
            {"lr_decay_factor", e.task1.lr_decay_factor},
            {"momentum", e.task1.momentum},
            {"weight_decay", e.task1.weight_decay},
            {"batch_size", e.task1.batch_size},
            {"folds", e.task1.folds}}},
          {"task2",
           {{"epochs", e.task2.epochs},
            {"lr", e.task2.lr},
            {"lr_decay_epoch", e.task2.lr_decay_epoch},
            {"lr_decay_factor", e.task2.lr_decay_factor},
            {"momentum", e.task2.momentum},
            {"weight_decay", e.task2.weight_decay},
            {"batch_size", e.task2.batch_size},
            {"train_fraction", e.task2.train_fraction}}},
          {"task3",
           {{"iterations", e.task3.iterations},
            {"lr", e.task3.lr},
            {"momentum", e.task3.momentum},
            {"weight_decay", e.task3.weight_decay},
            {"batch_size", e.task3.batch_size},
            {"train_fraction", e.task3.train_fraction}}}};
}

json probe_to_json(const ProbeConfig& p) {
  return {{"seed", p.seed},
          {"epochs", p.epochs},
          {"lr", p.lr},
          {"weight_decay", p.weight_decay},
          {"train_fraction", p.train_fraction},
          {"label_granularity", granularity_name(p.label_granularity)}};
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void synth_from_json(const json& j, SyntheticSpec& s) {
  get_if(j, "n_scans", s.n_scans);
  get_if(j, "frames_per_scan", s.frames_per_scan);
  get_if(j, "n_fine_classes", s.n_fine_classes);
  get_if(j, "fine_per_coarse", s.fine_per_coarse);
  get_if(j, "label_fraction", s.label_fraction);
  get_if(j, "image_h", s.image_h);
  get_if(j, "image_w", s.image_w);
  get_if(j, "seed", s.seed);
  get_if(j, "with_masks", s.with_masks);
}

void train_from_json(const json& j, TrainConfig& t) {
  get_if(j, "seed", t.seed);
  get_if(j, "epochs", t.epochs);
  get_if(j, "batch_size", t.batch_size);
  get_if(j, "lr", t.lr);
  get_if(j, "weight_decay", t.weight_decay);
  get_if(j, "temperature", t.temperature);
  get_if(j, "val_fraction", t.val_fraction);
  get_if(j, "backbone", t.backbone);
  get_if(j, "projection_dim", t.projection_dim);
  if (j.contains("mode")) t.mode = mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("granularity"))
    t.granularity = granularity_from_name(j.at("granularity").get<std::string>());
  get_if(j, "anatomy_ratio", t.anatomy_ratio);
  get_if(j, "checkpoint_every_steps", t.checkpoint_every_steps);
}

void eval_from_json(const json& j, EvalConfig& e) {
  if (j.contains("task")) {
    const int t = j.at("task").get<int>();
    if (t < 1 || t > 3) throw ConfigError("eval.task must be 1, 2 or 3");
    e.task = static_cast<TaskId>(t);
  }
  if (j.contains("protocol")) {
    const std::string p = j.at("protocol").get<std::string>();
    if (p == "full") e.protocol = Protocol::full_finetune;
    else if (p == "partial") e.protocol = Protocol::partial_finetune;
    else throw ConfigError("eval.protocol must be full or partial (got '" + p + "')");
  }
  get_if(j, "seed", e.seed);
  if (j.contains("task1")) {
    const auto& t = j.at("task1");
    get_if(t, "epochs", e.task1.epochs);
    get_if(t, "lr", e.task1.lr);
    get_if(t, "lr_decay_epochs", e.task1.lr_decay_epochs);
    get_if(t, "lr_decay_factor", e.task1.lr_decay_factor);
    get_if(t, "momentum", e.task1.momentum);
    get_if(t, "weight_decay", e.task1.weight_decay);
    get_if(t, "batch_size", e.task1.batch_size);
    get_if(t, "folds", e.task1.folds);
  }
  if (j.contains("task2")) {
    const auto& t = j.at("task2");
    get_if(t, "epochs", e.task2.epochs);
    get_if(t, "lr", e.task2.lr);
    get_if(t, "lr_decay_epoch", e.task2.lr_decay_epoch);
    get_if(t, "lr_decay_factor", e.task2.lr_decay_factor);
    get_if(t, "momentum", e.task2.momentum);
    get_if(t, "weight_decay", e.task2.weight_decay);
    get_if(t, "batch_size", e.task2.batch_size);
    get_if(t, "train_fraction", e.task2.train_fraction);
  }
  if (j.contains("task3")) {
    const auto& t = j.at("task3");
    get_if(t, "iterations", e.task3.iterations);
    get_if(t, "lr", e.task3.lr);
    get_if(t, "momentum", e.task3.momentum);
    get_if(t, "weight_decay", e.task3.weight_decay);
    get_if(t, "batch_size", e.task3.batch_size);
    get_if(t, "train_fraction", e.task3.train_fraction);
  }
}

void probe_from_json(const json& j, ProbeConfig& p) {
  get_if(j, "seed", p.seed);
  get_if(j, "epochs", p.epochs);
  get_if(j, "lr", p.lr);
  get_if(j, "weight_decay", p.weight_decay);
  get_if(j, "train_fraction", p.train_fraction);
  if (j.contains("label_granularity"))
    p.label_granularity = granularity_from_name(j.at("label_granularity").get<std::string>());
}

}  // namespace

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"synth", synth_to_json(c.synth)},
          {"train", train_to_json(c.train)},
          {"eval", eval_to_json(c.eval)},
          {"probe", probe_to_json(c.probe)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  get_if(j, "seed", c.seed);
  if (j.contains("synth")) synth_from_json(j.at("synth"), c.synth);
  if (j.contains("train")) train_from_json(j.at("train"), c.train);
  if (j.contains("eval")) eval_from_json(j.at("eval"), c.eval);
  if (j.contains("probe")) probe_from_json(j.at("probe"), c.probe);
  // Subcommand seeds default to the top-level seed unless pinned explicitly.
  if (!j.contains("synth") || !j.at("synth").contains("seed")) c.synth.seed = c.seed;
  if (!j.contains("train") || !j.at("train").contains("seed")) c.train.seed = c.seed;
  if (!j.contains("eval") || !j.at("eval").contains("seed")) c.eval.seed = c.seed;
  if (!j.contains("probe") || !j.at("probe").contains("seed")) c.probe.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: invalid JSON in " + path.string());
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot open for write: " + path.string());
  out << to_json(c).dump(2) << "\n";
}

uint64_t config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  return fnv1a_bytes(s.data(), s.size());
}

}  // namespace awcl
