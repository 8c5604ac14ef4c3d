#include "awcl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "awcl/loss.hpp"

namespace awcl {

namespace {

int64_t exact_floor(double x) { return static_cast<int64_t>(std::floor(x + 1e-9)); }

std::vector<std::string> scan_ids_in_order(const DatasetManifest& m) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (seen.insert(e.scan_id).second) ids.push_back(e.scan_id);
  return ids;
}

}  // namespace

std::pair<std::vector<size_t>, std::vector<size_t>> split_train_val(const DatasetManifest& m,
                                                                    double val_fraction,
                                                                    uint64_t seed) {
  auto scans = scan_ids_in_order(m);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(scans);
  const int64_t n_val = std::clamp<int64_t>(exact_floor(val_fraction * static_cast<double>(scans.size())),
                                            0, static_cast<int64_t>(scans.size()) - 1);
  std::set<std::string> val_scans(scans.begin(), scans.begin() + n_val);
  std::vector<size_t> train_idx, val_idx;
  for (size_t i = 0; i < m.entries.size(); ++i) {
    if (val_scans.count(m.entries[i].scan_id)) val_idx.push_back(i);
    else train_idx.push_back(i);
  }
  return {train_idx, val_idx};
}

std::vector<std::vector<size_t>> kfold_by_scan(const DatasetManifest& m, int k, uint64_t seed) {
  if (k < 2) throw ArgumentError("kfold_by_scan: k must be >= 2");
  auto scans = scan_ids_in_order(m);
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(scans);
  std::map<std::string, int> fold_of;
  for (size_t i = 0; i < scans.size(); ++i) fold_of[scans[i]] = static_cast<int>(i % static_cast<size_t>(k));
  std::vector<std::vector<size_t>> folds(static_cast<size_t>(k));
  for (size_t i = 0; i < m.entries.size(); ++i)
    folds[static_cast<size_t>(fold_of.at(m.entries[i].scan_id))].push_back(i);
  return folds;
}

DatasetManifest subset_manifest(const DatasetManifest& m, const std::vector<size_t>& indices) {
  DatasetManifest out{m.base_dir, m.taxonomy_ref, m.taxonomy, {}};
  out.entries.reserve(indices.size());
  for (const size_t i : indices) out.entries.push_back(m.entries[i]);
  return out;
}

namespace {

struct TrainerState {
  EncoderSpec spec;
  ParamStore store;
  AdamOpt adam;
  std::vector<std::string> trainable;
  int start_epoch = 0;
  int start_step = 0;
};

void dump_nan_batch(const std::filesystem::path& out_dir, int epoch, int step,
                    const BatchPlan& plan, const DatasetManifest& manifest) {
  std::ofstream out(out_dir / "nan_dump.tsv");
  out << "#epoch=" << epoch << " step=" << step << "\n";
  for (const auto& e : plan.entries) {
    out << manifest.entries[static_cast<size_t>(e.frame_a)].path << "\t"
        << manifest.entries[static_cast<size_t>(e.frame_a)].scan_id << "\t"
        << (e.participating ? 1 : 0) << "\n";
  }
}

Checkpoint make_checkpoint(const TrainerState& ts, const TrainConfig& config,
                           const DatasetManifest& manifest, AdamOpt& adam, int epoch, int step,
                           double best_val) {
  Checkpoint ckpt;
  ckpt.spec = ts.spec;
  ckpt.seed = config.seed;
  ckpt.taxonomy_hash = manifest.taxonomy.hash();
  RunConfig rc;
  rc.train = config;
  ckpt.config_hash = config_hash(rc);
  ckpt.epoch = epoch;
  ckpt.step = step;
  // Parameter leaves are shared handles; snapshot the values instead.
  for (const auto& name : ts.store.order) ckpt.store.add_param(name, ts.store.params.at(name).val());
  for (const auto& name : ts.store.buffer_order)
    ckpt.store.add_buffer(name, ts.store.buffers.at(name));
  for (const auto& [name, t] : adam.state_m()) ckpt.opt_state.emplace("adam.m." + name, t);
  for (const auto& [name, t] : adam.state_v()) ckpt.opt_state.emplace("adam.v." + name, t);
  ckpt.meta["adam.t"] = static_cast<double>(adam.t());
  if (std::isfinite(best_val)) ckpt.meta["best_val"] = best_val;
  return ckpt;
}

double run_validation(const TrainConfig& config, const DatasetManifest& val_manifest,
                      FrameStore& frames, TrainerState& ts, const AugmentPolicy& policy, int epoch) {
  SamplerConfig scfg = config.sampler_config();
  if (scfg.mode == SampleMode::awcl) {
    const Granularity g =
        scfg.granularity == PairGranularity::coarse ? Granularity::coarse : Granularity::fine;
    if (val_manifest.n_labeled(g) == 0) {
      scfg.mode = SampleMode::simclr;  // unlabeled validation falls back to instance pairs
      scfg.granularity = PairGranularity::none;
    }
  }
  const auto plans = plan_epoch(val_manifest, scfg, epoch);
  if (plans.empty()) return std::numeric_limits<double>::quiet_NaN();

  double total = 0.0;
  for (size_t s = 0; s < plans.size(); ++s) {
    const auto& plan = plans[s];
    Rng aug_rng(derive_seed(config.seed, "augval", static_cast<uint64_t>(epoch), s));
    std::vector<Image> views;
    views.reserve(plan.entries.size() * 2);
    for (const auto& e : plan.entries) {
      views.push_back(apply(policy, frames.image(static_cast<size_t>(e.frame_a)), aug_rng));
      views.push_back(apply(policy, frames.image(static_cast<size_t>(e.frame_b)), aug_rng));
    }
    auto x = ad::Value::constant(images_to_tensor(views, ts.spec.input_channels));
    auto enc = encoder_forward(ts.spec, ts.store, x, false);
    auto z = projection_forward(ts.spec, ts.store, enc.features);
    const auto meta = plan_row_meta(plan, val_manifest, scfg.granularity);
    total += awcl_batch_loss_node(z, meta, config.temperature).item();
  }
  return total / static_cast<double>(plans.size());
}

PretrainResult pretrain_impl(const TrainConfig& config, const DatasetManifest& manifest,
                             const std::filesystem::path& out_dir, TrainerState ts,
                             std::vector<LossLogRow> carried_log, double best_val,
                             int stop_after_steps) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  auto [train_idx, val_idx] = split_train_val(manifest, config.val_fraction, config.seed);
  DatasetManifest train_m = subset_manifest(manifest, train_idx);
  DatasetManifest val_m = subset_manifest(manifest, val_idx);
  if (train_m.entries.empty()) throw ConfigError("pretrain: training split is empty");

  FrameStore train_frames(train_m);
  FrameStore val_frames(val_m);

  const Image& probe_image = train_frames.image(0);
  const AugmentPolicy policy = pretrain_policy(probe_image.h, probe_image.w);
  const SamplerConfig scfg = config.sampler_config();

  PretrainResult result;
  result.log = std::move(carried_log);
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";

  int steps_done = 0;
  for (int epoch = ts.start_epoch; epoch < config.epochs; ++epoch) {
    const auto plans = plan_epoch(train_m, scfg, epoch);
    const int first_step = (epoch == ts.start_epoch) ? ts.start_step : 0;
    for (int step = first_step; step < static_cast<int>(plans.size()); ++step) {
      const auto& plan = plans[static_cast<size_t>(step)];
      Rng aug_rng(derive_seed(config.seed, "aug", static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(step)));
      std::vector<Image> views;
      views.reserve(plan.entries.size() * 2);
      for (const auto& e : plan.entries) {
        views.push_back(apply(policy, train_frames.image(static_cast<size_t>(e.frame_a)), aug_rng));
        views.push_back(apply(policy, train_frames.image(static_cast<size_t>(e.frame_b)), aug_rng));
      }
      auto x = ad::Value::constant(images_to_tensor(views, ts.spec.input_channels));
      auto enc = encoder_forward(ts.spec, ts.store, x, true);
      auto z = projection_forward(ts.spec, ts.store, enc.features);
      const auto meta = plan_row_meta(plan, train_m, scfg.granularity);
      auto loss = awcl_batch_loss_node(z, meta, config.temperature);

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        dump_nan_batch(out_dir, epoch, step, plan, train_m);
        throw NumericalError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(step) + "; batch dumped to nan_dump.tsv");
      }

      ts.store.zero_grad();
      ad::backward(loss);
      ts.adam.step(ts.store, ts.trainable);

      const auto sets = build_positive_sets(meta);
      int la = 0;
      for (int i = 0; i < static_cast<int>(meta.size()); ++i)
        if (anatomy_branch(meta, sets, i)) ++la;
      result.log.push_back({epoch, step,
                            static_cast<double>(la) / static_cast<double>(meta.size()), loss_value});

      if (config.checkpoint_every_steps > 0 && (step + 1) % config.checkpoint_every_steps == 0) {
        save_checkpoint(result.last_checkpoint,
                        make_checkpoint(ts, config, manifest, ts.adam, epoch, step + 1, best_val));
      }
      if (stop_after_steps > 0 && ++steps_done >= stop_after_steps) {
        save_checkpoint(result.last_checkpoint,
                        make_checkpoint(ts, config, manifest, ts.adam, epoch, step + 1, best_val));
        const bool resumed = ts.start_epoch != 0 || ts.start_step != 0;
        if (resumed && std::filesystem::exists(out_dir / "loss_log.tsv"))
          append_loss_log(out_dir / "loss_log.tsv", result.log);
        else
          write_loss_log(out_dir / "loss_log.tsv", result.log);
        return result;
      }
    }

    const double vloss = run_validation(config, val_m, val_frames, ts, policy, epoch);
    result.val_loss.push_back(vloss);

    auto ckpt = make_checkpoint(ts, config, manifest, ts.adam, epoch + 1, 0, best_val);
    save_checkpoint(result.last_checkpoint, ckpt);
    if (!std::isfinite(best_val) || (std::isfinite(vloss) && vloss < best_val)) {
      best_val = std::isfinite(vloss) ? vloss : best_val;
      save_checkpoint(result.best_checkpoint, ckpt);
    }
  }

  if (!std::filesystem::exists(result.best_checkpoint) &&
      std::filesystem::exists(result.last_checkpoint))
    std::filesystem::copy_file(result.last_checkpoint, result.best_checkpoint);

  const bool resumed = ts.start_epoch != 0 || ts.start_step != 0;
  if (resumed && std::filesystem::exists(out_dir / "loss_log.tsv"))
    append_loss_log(out_dir / "loss_log.tsv", result.log);
  else
    write_loss_log(out_dir / "loss_log.tsv", result.log);
  return result;
}

}  // namespace

PretrainResult pretrain(const TrainConfig& config, const DatasetManifest& manifest,
                        const std::filesystem::path& out_dir, int stop_after_steps) {
  config.validate();
  TrainerState ts{config.encoder_spec(), ParamStore{}, AdamOpt(config.lr, config.weight_decay), {}, 0, 0};
  Rng init_rng(derive_seed(config.seed, "init"));
  init_encoder(ts.spec, ts.store, init_rng);
  init_projection_head(ts.spec, ts.store, init_rng);
  ts.trainable = ts.store.order;
  return pretrain_impl(config, manifest, out_dir, std::move(ts), {},
                       std::numeric_limits<double>::quiet_NaN(), stop_after_steps);
}

PretrainResult pretrain_resume(const std::filesystem::path& checkpoint_path,
                               const TrainConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path& out_dir) {
  config.validate();
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig rc;
  rc.train = config;
  if (ckpt.config_hash != config_hash(rc))
    throw ConfigError("pretrain_resume: config does not match the checkpoint");
  if (ckpt.taxonomy_hash != manifest.taxonomy.hash())
    throw ConfigError("pretrain_resume: taxonomy does not match the checkpoint");

  TrainerState ts{ckpt.spec, std::move(ckpt.store), AdamOpt(config.lr, config.weight_decay), {},
                  ckpt.epoch, ckpt.step};
  ts.trainable = ts.store.order;
  ts.adam.set_t(static_cast<int64_t>(ckpt.meta.at("adam.t")));
  for (const auto& name : ts.trainable) {
    const auto mit = ckpt.opt_state.find("adam.m." + name);
    const auto vit = ckpt.opt_state.find("adam.v." + name);
    if (mit != ckpt.opt_state.end()) ts.adam.state_m()[name] = mit->second;
    if (vit != ckpt.opt_state.end()) ts.adam.state_v()[name] = vit->second;
  }
  const double best_val = ckpt.meta.count("best_val") ? ckpt.meta.at("best_val")
                                                      : std::numeric_limits<double>::quiet_NaN();
  return pretrain_impl(config, manifest, out_dir, std::move(ts), {}, best_val, 0);
}

namespace {

void emit_rows(std::ofstream& out, const std::vector<LossLogRow>& log) {
  char buf[96];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.6f\t%.17g\n", row.epoch, row.step, row.la_fraction,
                  row.loss);
    out << buf;
  }
}

}  // namespace

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("loss log: cannot open for write: " + path.string());
  out << "#epoch\tstep\tla_fraction\tloss\n";
  emit_rows(out, log);
}

void append_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("loss log: cannot open for append: " + path.string());
  emit_rows(out, log);
}

}  // namespace awcl
