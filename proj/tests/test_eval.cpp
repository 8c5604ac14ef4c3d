#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "awcl/eval.hpp"
#include "awcl/train.hpp"

using namespace awcl;
namespace fs = std::filesystem;

namespace {

// One pretraining corpus and one labeled downstream set, generated once; the
// directional smokes reuse cached pretrained encoders across test cases.
struct EvalFixture {
  fs::path root;
  DatasetManifest pretrain_data;
  DatasetManifest task_data;
  std::map<std::string, Checkpoint> ckpts;

  static EvalFixture& get() {
    static EvalFixture f = [] {
      EvalFixture fx;
      fx.root = fs::temp_directory_path() / "awcl_eval_smoke";
      fs::remove_all(fx.root);
      SyntheticSpec spec;
      spec.n_scans = 12;
      spec.frames_per_scan = 60;
      spec.n_fine_classes = 4;
      spec.fine_per_coarse = 2;
      spec.label_fraction = 0.8;
      spec.image_h = 16;
      spec.image_w = 16;
      spec.seed = 654;
      fx.pretrain_data = generate_synthetic(spec, fx.root / "pretrain");

      SyntheticSpec task = spec;
      task.n_scans = 8;
      task.frames_per_scan = 30;
      task.label_fraction = 1.0;
      task.seed = 777;
      task.with_masks = true;
      fx.task_data = generate_synthetic(task, fx.root / "task");
      return fx;
    }();
    return f;
  }

  const Checkpoint& pretrained(SampleMode mode, uint64_t seed) {
    const std::string key = mode_name(mode) + std::to_string(seed);
    auto it = ckpts.find(key);
    if (it == ckpts.end()) {
      TrainConfig cfg;
      cfg.seed = seed;
      cfg.epochs = 4;
      cfg.batch_size = 16;
      cfg.mode = mode;
      if (mode == SampleMode::awcl) cfg.granularity = PairGranularity::fine;
      const auto res = pretrain(cfg, pretrain_data, root / ("run_" + key));
      it = ckpts.emplace(key, load_checkpoint(res.best_checkpoint)).first;
    }
    return it->second;
  }
};

Checkpoint random_checkpoint(uint64_t seed) {
  Checkpoint ck;
  ck.spec = EncoderSpec::small_cnn();
  Rng rng(derive_seed(seed, "init"));
  init_encoder(ck.spec, ck.store, rng);
  init_projection_head(ck.spec, ck.store, rng);
  return ck;
}

EvalConfig short_task2(uint64_t seed) {
  EvalConfig cfg;
  cfg.task = TaskId::first_trimester;
  cfg.seed = seed;
  cfg.task2.epochs = 8;
  cfg.task2.lr = 0.02;
  cfg.task2.lr_decay_epoch = 6;
  cfg.task2.batch_size = 16;
  return cfg;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("random-init fine-tuning on the recognition analog beats chance") {
  auto& fx = EvalFixture::get();
  const auto report = finetune(std::nullopt, short_task2(3), fx.task_data);
  REQUIRE(report.folds.size() == 1);
  CHECK(report.macro_f1_mean > 0.3);  // 4 classes, chance ~ 0.25
  CHECK(report.encoder_hash_before != report.encoder_hash_after);
}

TEST_CASE("plane-detection analog reports mean and std over exactly 3 folds") {
  auto& fx = EvalFixture::get();
  EvalConfig cfg;
  cfg.task = TaskId::plane_detection;
  cfg.seed = 5;
  cfg.task1.epochs = 2;
  cfg.task1.lr = 0.02;
  cfg.task1.lr_decay_epochs = {};
  const auto report = finetune(std::nullopt, cfg, fx.task_data);
  REQUIRE(report.folds.size() == 3);
  CHECK(report.macro_f1_std >= 0.0);
  CHECK(report.macro_f1_mean > 0.0);
}

TEST_CASE("partial fine-tuning freezes the encoder bit-exactly") {
  auto& fx = EvalFixture::get();
  const Checkpoint& ck = fx.pretrained(SampleMode::simclr, 1);
  const auto report = partial_finetune(ck, short_task2(7), fx.task_data);
  CHECK(report.encoder_hash_before == report.encoder_hash_after);
}

TEST_CASE("probe never mutates the encoder") {
  auto& fx = EvalFixture::get();
  Checkpoint ck = random_checkpoint(11);
  ProbeConfig pc;
  pc.seed = 11;
  const auto r1 = linear_probe(ck.spec, ck.store, fx.task_data, pc);
  CHECK(r1.encoder_hash_before == r1.encoder_hash_after);
  const auto r2 = linear_probe(ck.spec, ck.store, fx.task_data, pc);
  CHECK(r1.report.macro_f1 == r2.report.macro_f1);  // deterministic readout
}

TEST_CASE("frozen-random probe scores below full fine-tuning from random init") {
  auto& fx = EvalFixture::get();
  int full_wins = 0;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Checkpoint ck = random_checkpoint(seed);
    ProbeConfig pc;
    pc.seed = seed;
    const double probe_f1 = linear_probe(ck.spec, ck.store, fx.task_data, pc).report.macro_f1;
    const double full_f1 = finetune(std::nullopt, short_task2(seed), fx.task_data).macro_f1_mean;
    if (full_f1 > probe_f1) ++full_wins;
  }
  CHECK(full_wins >= 2);
}

TEST_CASE("anatomy-aware pretraining probes above patient-metadata pairing") {
  auto& fx = EvalFixture::get();
  int awcl_wins = 0;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Checkpoint a = fx.pretrained(SampleMode::awcl, seed);
    Checkpoint c = fx.pretrained(SampleMode::clpi, seed);
    ProbeConfig pc;
    pc.seed = 100 + seed;
    const double fa = linear_probe(a.spec, a.store, fx.task_data, pc).report.macro_f1;
    const double fc = linear_probe(c.spec, c.store, fx.task_data, pc).report.macro_f1;
    if (fa > fc) ++awcl_wins;
  }
  CHECK(awcl_wins >= 2);
}

TEST_CASE("anatomy-aware features separate classes better than patient pairing") {
  auto& fx = EvalFixture::get();
  Checkpoint a = fx.pretrained(SampleMode::awcl, 2);
  Checkpoint c = fx.pretrained(SampleMode::clpi, 2);
  const auto ta = compute_embeddings(a.spec, a.store, fx.task_data, EmbedLayer::penultimate);
  const auto tc = compute_embeddings(c.spec, c.store, fx.task_data, EmbedLayer::penultimate);
  std::vector<int> labels;
  for (size_t i = 0; i < fx.task_data.entries.size(); ++i)
    labels.push_back(fx.task_data.label_at(i, Granularity::fine));
  CHECK(silhouette_score(ta.vectors, labels) > silhouette_score(tc.vectors, labels));
}

TEST_CASE("embedding export: 100 frames, penultimate layer, 512-wide rows") {
  auto& fx = EvalFixture::get();
  Checkpoint ck;
  ck.spec = EncoderSpec::resnet18();
  Rng rng(derive_seed(31, "init"));
  init_encoder(ck.spec, ck.store, rng);
  init_projection_head(ck.spec, ck.store, rng);

  std::vector<size_t> idx(100);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const DatasetManifest subset = subset_manifest(fx.task_data, idx);
  auto table = compute_embeddings(ck.spec, ck.store, subset, EmbedLayer::penultimate);
  CHECK(table.vectors.rows() == 100);
  CHECK(table.vectors.cols() == 512);

  table.coords2d = tsne_2d(table.vectors, 10.0, 60, 9);
  const fs::path out = fx.root / "emb.tsv";
  write_embedding_table(out, table);
  std::ifstream in(out);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 100);
}

TEST_CASE("projection-layer export is 128-wide") {
  auto& fx = EvalFixture::get();
  Checkpoint ck = random_checkpoint(33);
  std::vector<size_t> idx(20);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto table =
      compute_embeddings(ck.spec, ck.store, subset_manifest(fx.task_data, idx), EmbedLayer::projection);
  CHECK(table.vectors.cols() == 128);
}

TEST_CASE("segmentation fine-tuning learns the dominant structures") {
  auto& fx = EvalFixture::get();
  EvalConfig cfg;
  cfg.task = TaskId::crl_nt_seg;
  cfg.seed = 17;
  cfg.task3.iterations = 600;
  cfg.task3.batch_size = 8;
  cfg.task3.lr = 0.005;
  const auto report = finetune(std::nullopt, cfg, fx.task_data);
  REQUIRE(report.is_segmentation);
  CHECK(report.seg.gaa > 0.6);
  CHECK(report.seg.miou > 0.25);
  CHECK(report.seg.gaa <= 1.0);
  CHECK(report.seg.ma <= 1.0);
  CHECK(report.seg.miou <= 1.0);
}

TEST_CASE("task manifests with unlabeled frames are rejected") {
  auto& fx = EvalFixture::get();
  CHECK_THROWS_AS(finetune(std::nullopt, short_task2(1), fx.pretrain_data), ConfigError);
}

}  // TEST_SUITE
