#include "awcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "awcl/augment.hpp"
#include "awcl/autodiff.hpp"
#include "awcl/train.hpp"

namespace awcl {

ClassificationReport classification_metrics(const Confusion& confusion) {
  if (confusion.rows() != confusion.cols())
    throw ArgumentError("classification_metrics: confusion matrix must be square");
  if ((confusion.array() < 0).any())
    throw ArgumentError("classification_metrics: confusion matrix must be nonnegative");
  const int k = static_cast<int>(confusion.rows());

  ClassificationReport r;
  r.confusion = confusion;
  r.precision.resize(static_cast<size_t>(k));
  r.recall.resize(static_cast<size_t>(k));
  r.f1.resize(static_cast<size_t>(k));
  r.absent.resize(static_cast<size_t>(k));

  int present = 0;
  for (int c = 0; c < k; ++c) {
    const double tp = static_cast<double>(confusion(c, c));
    const double row = static_cast<double>(confusion.row(c).sum());
    const double col = static_cast<double>(confusion.col(c).sum());
    const double p = col > 0 ? tp / col : 0.0;
    const double rec = row > 0 ? tp / row : 0.0;
    const double f1 = (p + rec) > 0 ? 2.0 * p * rec / (p + rec) : 0.0;
    r.precision[static_cast<size_t>(c)] = p;
    r.recall[static_cast<size_t>(c)] = rec;
    r.f1[static_cast<size_t>(c)] = f1;
    r.absent[static_cast<size_t>(c)] = row == 0 ? 1 : 0;
    if (row > 0) {
      ++present;
      r.macro_precision += p;
      r.macro_recall += rec;
      r.macro_f1 += f1;
    }
  }
  if (present > 0) {
    r.macro_precision /= present;
    r.macro_recall /= present;
    r.macro_f1 /= present;
  }
  return r;
}

SegmentationReport segmentation_metrics_from_confusion(const Confusion& confusion) {
  if (confusion.rows() != confusion.cols())
    throw ArgumentError("segmentation_metrics: confusion matrix must be square");
  const int k = static_cast<int>(confusion.rows());

  SegmentationReport r;
  r.confusion = confusion;
  r.per_class_acc.resize(static_cast<size_t>(k), 0.0);
  r.per_class_iou.resize(static_cast<size_t>(k), 0.0);

  const double total = static_cast<double>(confusion.sum());
  double trace = 0;
  for (int c = 0; c < k; ++c) trace += static_cast<double>(confusion(c, c));
  r.gaa = total > 0 ? trace / total : 0.0;

  int acc_classes = 0, iou_classes = 0;
  for (int c = 0; c < k; ++c) {
    const double tp = static_cast<double>(confusion(c, c));
    const double row = static_cast<double>(confusion.row(c).sum());
    const double col = static_cast<double>(confusion.col(c).sum());
    if (row > 0) {
      r.per_class_acc[static_cast<size_t>(c)] = tp / row;
      r.ma += tp / row;
      ++acc_classes;
    }
    const double uni = row + col - tp;
    if (uni > 0) {
      r.per_class_iou[static_cast<size_t>(c)] = tp / uni;
      r.miou += tp / uni;
      ++iou_classes;
    }
  }
  if (acc_classes > 0) r.ma /= acc_classes;
  if (iou_classes > 0) r.miou /= iou_classes;
  return r;
}

SegmentationReport segmentation_metrics(const std::vector<Mask>& pred, const std::vector<Mask>& truth,
                                        int n_classes) {
  if (pred.size() != truth.size()) throw ArgumentError("segmentation_metrics: count mismatch");
  if (n_classes <= 0) throw ArgumentError("segmentation_metrics: n_classes must be positive");
  Confusion confusion = Confusion::Zero(n_classes, n_classes);
  for (size_t i = 0; i < pred.size(); ++i) {
    const Mask& p = pred[i];
    const Mask& t = truth[i];
    if (p.h != t.h || p.w != t.w) throw ArgumentError("segmentation_metrics: mask shape mismatch");
    for (size_t px = 0; px < p.v.size(); ++px) {
      const int pv = p.v[px], tv = t.v[px];
      if (pv < 0 || pv >= n_classes || tv < 0 || tv >= n_classes)
        throw ArgumentError("segmentation_metrics: label out of range");
      ++confusion(tv, pv);
    }
  }
  return segmentation_metrics_from_confusion(confusion);
}

namespace {

struct Schedule {
  int epochs = 1;
  double lr = 0.01;
  std::vector<int> decay_epochs;
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 16;
};

std::vector<int> fine_labels_or_throw(const DatasetManifest& m) {
  std::vector<int> labels(m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) {
    labels[i] = m.label_at(i, Granularity::fine);
    if (labels[i] == kUnlabeled)
      throw ConfigError("finetune: task manifest has unlabeled frames (" + m.entries[i].path + ")");
  }
  return labels;
}

void init_encoder_params(const EncoderSpec& spec, ParamStore& store,
                         const std::optional<Checkpoint>& init, uint64_t seed) {
  if (init) {
    if (init->spec.feature_dim != spec.feature_dim)
      throw ConfigError("finetune: checkpoint encoder is incompatible with the task head");
    for (const auto& name : init->store.order)
      if (name.rfind("enc.", 0) == 0) store.add_param(name, init->store.params.at(name).val());
    for (const auto& name : init->store.buffer_order)
      if (name.rfind("enc.", 0) == 0) store.add_buffer(name, init->store.buffers.at(name));
  } else {
    Rng rng(derive_seed(seed, "enc_init"));
    init_encoder(spec, store, rng);
  }
}

MatX batched_features(const EncoderSpec& spec, ParamStore& store, FrameStore& frames,
                      const std::vector<size_t>& indices) {
  MatX out(static_cast<Eigen::Index>(indices.size()), spec.feature_dim);
  const size_t chunk = 128;
  for (size_t pos = 0; pos < indices.size(); pos += chunk) {
    const size_t n = std::min(chunk, indices.size() - pos);
    std::vector<Image> images;
    images.reserve(n);
    for (size_t i = 0; i < n; ++i) images.push_back(frames.image(indices[pos + i]));
    const Tensor f = feature_vectors(spec, store, images);
    for (size_t i = 0; i < n; ++i)
      out.row(static_cast<Eigen::Index>(pos + i)) =
          Eigen::Map<const Eigen::RowVectorXd>(f.v.data() + static_cast<int64_t>(i) * spec.feature_dim,
                                               spec.feature_dim);
  }
  return out;
}

// Shared classification engine for full and frozen protocols.
ClassificationReport train_eval_classifier(const EncoderSpec& spec, const std::optional<Checkpoint>& init,
                                           HeadKind head, int n_classes,
                                           const DatasetManifest& manifest,
                                           const std::vector<size_t>& train_idx,
                                           const std::vector<size_t>& test_idx,
                                           const Schedule& sched, const AugmentPolicy* policy,
                                           uint64_t seed, bool freeze_encoder,
                                           uint64_t* enc_hash_before, uint64_t* enc_hash_after) {
  const auto labels = fine_labels_or_throw(manifest);

  ParamStore store;
  init_encoder_params(spec, store, init, seed);
  Rng head_rng(derive_seed(seed, "head_init"));
  init_head(head, spec, n_classes, store, head_rng);

  if (enc_hash_before) *enc_hash_before = store.values_hash("enc.");

  std::vector<std::string> trainable =
      freeze_encoder ? store.names_with_prefix("head.") : store.order;
  SgdMomentum sgd(sched.lr, sched.momentum, sched.weight_decay);

  FrameStore frames(manifest);

  // Frozen path trains on precomputed features.
  MatX train_feats, test_feats;
  if (freeze_encoder) {
    train_feats = batched_features(spec, store, frames, train_idx);
    test_feats = batched_features(spec, store, frames, test_idx);
  }

  auto head_logits_from_features = [&](const MatX& feats, size_t row0, size_t nrows) {
    Tensor f = Tensor::zeros({static_cast<int>(nrows), spec.feature_dim});
    for (size_t i = 0; i < nrows; ++i)
      f.mat().row(static_cast<Eigen::Index>(i)) = feats.row(static_cast<Eigen::Index>(row0 + i));
    EncoderOut enc{ad::Value::constant(f), ad::Value()};
    return head_forward(head, spec, store, enc);
  };

  std::vector<size_t> order = train_idx;
  double lr = sched.lr;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    if (std::find(sched.decay_epochs.begin(), sched.decay_epochs.end(), epoch) !=
        sched.decay_epochs.end()) {
      lr *= sched.decay_factor;
      sgd.set_lr(lr);
    }
    Rng shuffle_rng(derive_seed(seed, "ft_shuffle", static_cast<uint64_t>(epoch)));
    std::vector<size_t> perm(order.size());
    for (size_t i = 0; i < order.size(); ++i) perm[i] = i;
    shuffle_rng.shuffle(perm);

    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(sched.batch_size)) {
      const size_t n = std::min(static_cast<size_t>(sched.batch_size), order.size() - pos);
      if (n < 2) continue;
      std::vector<int> batch_labels(n);
      ad::Value logits;
      if (freeze_encoder) {
        Tensor f = Tensor::zeros({static_cast<int>(n), spec.feature_dim});
        for (size_t i = 0; i < n; ++i) {
          f.mat().row(static_cast<Eigen::Index>(i)) = train_feats.row(static_cast<Eigen::Index>(perm[pos + i]));
          batch_labels[i] = labels[order[perm[pos + i]]];
        }
        EncoderOut enc{ad::Value::constant(f), ad::Value()};
        logits = head_forward(head, spec, store, enc);
      } else {
        Rng aug_rng(derive_seed(seed, "ft_aug", static_cast<uint64_t>(epoch), pos));
        std::vector<Image> images;
        images.reserve(n);
        for (size_t i = 0; i < n; ++i) {
          const size_t idx = order[perm[pos + i]];
          Image im = frames.image(idx);
          if (policy) im = apply(*policy, im, aug_rng);
          images.push_back(std::move(im));
          batch_labels[i] = labels[idx];
        }
        auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
        auto enc = encoder_forward(spec, store, x, !freeze_encoder);
        logits = head_forward(head, spec, store, enc);
      }
      auto loss = ad::softmax_cross_entropy(logits, batch_labels);
      if (!std::isfinite(loss.item()))
        throw NumericalError("finetune: non-finite loss at epoch " + std::to_string(epoch));
      store.zero_grad();
      ad::backward(loss);
      sgd.step(store, trainable);
    }
  }

  if (enc_hash_after) *enc_hash_after = store.values_hash("enc.");

  // Test pass (no augmentation).
  Confusion confusion = Confusion::Zero(n_classes, n_classes);
  const size_t chunk = 128;
  for (size_t pos = 0; pos < test_idx.size(); pos += chunk) {
    const size_t n = std::min(chunk, test_idx.size() - pos);
    ad::Value logits;
    if (freeze_encoder) {
      logits = head_logits_from_features(test_feats, pos, n);
    } else {
      std::vector<Image> images;
      for (size_t i = 0; i < n; ++i) images.push_back(frames.image(test_idx[pos + i]));
      auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
      auto enc = encoder_forward(spec, store, x, false);
      logits = head_forward(head, spec, store, enc);
    }
    ConstMatMap lm = logits.val().mat();
    for (size_t i = 0; i < n; ++i) {
      Eigen::Index pred;
      lm.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred);
      ++confusion(labels[test_idx[pos + i]], static_cast<int>(pred));
    }
  }
  return classification_metrics(confusion);
}

SegmentationReport train_eval_segmentation(const EncoderSpec& spec, const std::optional<Checkpoint>& init,
                                           const DatasetManifest& manifest,
                                           const std::vector<size_t>& train_idx,
                                           const std::vector<size_t>& test_idx,
                                           const Task3Config& cfg, uint64_t seed, bool freeze_encoder,
                                           uint64_t* enc_hash_before, uint64_t* enc_hash_after) {
  constexpr int kSegClasses = 3;  // background, mid-sagittal view, NT
  ParamStore store;
  init_encoder_params(spec, store, init, seed);
  Rng head_rng(derive_seed(seed, "head_init"));
  init_head(HeadKind::segmentation_decoder, spec, kSegClasses, store, head_rng);

  if (enc_hash_before) *enc_hash_before = store.values_hash("enc.");
  std::vector<std::string> trainable =
      freeze_encoder ? store.names_with_prefix("head.") : store.order;
  RmspropOpt opt(cfg.lr, cfg.momentum, cfg.weight_decay);

  FrameStore frames(manifest);
  std::vector<Mask> masks(manifest.entries.size());
  std::vector<uint8_t> mask_loaded(manifest.entries.size(), 0);
  auto mask_of = [&](size_t idx) -> const Mask& {
    if (!mask_loaded[idx]) {
      masks[idx] = read_mask_pgm(manifest.mask_path(idx));
      mask_loaded[idx] = 1;
    }
    return masks[idx];
  };

  const Image& probe = frames.image(train_idx.at(0));
  const AugmentPolicy policy = task3_policy(probe.h, probe.w);

  std::vector<size_t> order = train_idx;
  size_t cursor = order.size();  // force initial shuffle
  int shuffle_round = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Image> images;
    std::vector<int> pixel_labels;
    Rng aug_rng(derive_seed(seed, "seg_aug", static_cast<uint64_t>(it)));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        Rng shuffle_rng(derive_seed(seed, "seg_shuffle", static_cast<uint64_t>(shuffle_round++)));
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      auto [im, mk] = apply_paired(policy, frames.image(idx), mask_of(idx), aug_rng);
      images.push_back(std::move(im));
      for (const int v : mk.v) pixel_labels.push_back(v);
    }
    auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
    auto enc = encoder_forward(spec, store, x, !freeze_encoder);
    auto logits = head_forward(HeadKind::segmentation_decoder, spec, store, enc);
    auto loss = ad::softmax_cross_entropy_pixels(logits, pixel_labels);
    if (!std::isfinite(loss.item()))
      throw NumericalError("finetune: non-finite segmentation loss at iteration " + std::to_string(it));
    store.zero_grad();
    ad::backward(loss);
    opt.step(store, trainable);
  }

  if (enc_hash_after) *enc_hash_after = store.values_hash("enc.");

  std::vector<Mask> pred, truth;
  const size_t chunk = 32;
  for (size_t pos = 0; pos < test_idx.size(); pos += chunk) {
    const size_t n = std::min(chunk, test_idx.size() - pos);
    std::vector<Image> images;
    for (size_t i = 0; i < n; ++i) images.push_back(frames.image(test_idx[pos + i]));
    auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
    auto enc = encoder_forward(spec, store, x, false);
    auto logits = head_forward(HeadKind::segmentation_decoder, spec, store, enc);
    const Tensor& lv = logits.val();
    const int h = lv.dim(2), w = lv.dim(3);
    for (size_t i = 0; i < n; ++i) {
      Mask pm = Mask::zeros(h, w);
      for (int y = 0; y < h; ++y)
        for (int xpx = 0; xpx < w; ++xpx) {
          int best = 0;
          double bestv = lv.at({static_cast<int>(i), 0, y, xpx});
          for (int c = 1; c < kSegClasses; ++c) {
            const double v = lv.at({static_cast<int>(i), c, y, xpx});
            if (v > bestv) {
              bestv = v;
              best = c;
            }
          }
          pm.at(y, xpx) = best;
        }
      pred.push_back(std::move(pm));
      truth.push_back(mask_of(test_idx[pos + i]));
    }
  }
  return segmentation_metrics(pred, truth, kSegClasses);
}

FinetuneReport finetune_impl(const std::optional<Checkpoint>& init, const EvalConfig& config,
                             const DatasetManifest& manifest, bool freeze_encoder) {
  config.validate();
  const EncoderSpec spec = init ? init->spec : EncoderSpec::small_cnn();

  FinetuneReport report;
  uint64_t before = 0, after = 0;

  if (config.task == TaskId::crl_nt_seg) {
    report.is_segmentation = true;
    auto [train_idx, test_idx] =
        split_train_val(manifest, 1.0 - config.task3.train_fraction, config.seed);
    report.seg = train_eval_segmentation(spec, init, manifest, train_idx, test_idx, config.task3,
                                         config.seed, freeze_encoder, &before, &after);
    report.encoder_hash_before = before;
    report.encoder_hash_after = after;
    return report;
  }

  const int n_classes = manifest.taxonomy.n_fine();
  std::vector<std::vector<size_t>> fold_tests;
  if (config.task == TaskId::plane_detection) {
    fold_tests = kfold_by_scan(manifest, config.task1.folds, config.seed);
  } else {
    auto [train_idx, test_idx] =
        split_train_val(manifest, 1.0 - config.task2.train_fraction, config.seed);
    fold_tests.push_back(test_idx);
  }

  FrameStore probe_frames(manifest);
  const Image& probe = probe_frames.image(0);
  const AugmentPolicy policy = (config.task == TaskId::plane_detection)
                                   ? task1_policy(probe.h, probe.w)
                                   : task2_policy(probe.h, probe.w);

  Schedule sched;
  HeadKind head;
  if (config.task == TaskId::plane_detection) {
    sched = {config.task1.epochs, config.task1.lr, config.task1.lr_decay_epochs,
             config.task1.lr_decay_factor, config.task1.momentum, config.task1.weight_decay,
             config.task1.batch_size};
    head = HeadKind::classifier;
  } else {
    sched = {config.task2.epochs, config.task2.lr, {config.task2.lr_decay_epoch},
             config.task2.lr_decay_factor, config.task2.momentum, config.task2.weight_decay,
             config.task2.batch_size};
    head = HeadKind::nonlinear_classifier;
  }

  std::vector<uint8_t> in_test(manifest.entries.size());
  for (size_t fold = 0; fold < fold_tests.size(); ++fold) {
    std::fill(in_test.begin(), in_test.end(), 0);
    for (const size_t i : fold_tests[fold]) in_test[i] = 1;
    std::vector<size_t> train_idx, test_idx = fold_tests[fold];
    for (size_t i = 0; i < manifest.entries.size(); ++i)
      if (!in_test[i]) train_idx.push_back(i);

    auto rep = train_eval_classifier(spec, init, head, n_classes, manifest, train_idx, test_idx,
                                     sched, &policy, derive_seed(config.seed, "fold", fold),
                                     freeze_encoder, &before, &after);
    report.folds.push_back(std::move(rep));
  }
  report.encoder_hash_before = before;
  report.encoder_hash_after = after;

  auto mean_std = [&](auto getter, double& mean, double& std) {
    mean = 0;
    for (const auto& f : report.folds) mean += getter(f);
    mean /= static_cast<double>(report.folds.size());
    std = 0;
    if (report.folds.size() > 1) {
      for (const auto& f : report.folds) std += (getter(f) - mean) * (getter(f) - mean);
      std = std::sqrt(std / static_cast<double>(report.folds.size() - 1));
    }
  };
  mean_std([](const ClassificationReport& f) { return f.macro_f1; }, report.macro_f1_mean,
           report.macro_f1_std);
  mean_std([](const ClassificationReport& f) { return f.macro_precision; },
           report.macro_precision_mean, report.macro_precision_std);
  mean_std([](const ClassificationReport& f) { return f.macro_recall; }, report.macro_recall_mean,
           report.macro_recall_std);
  return report;
}

}  // namespace

FinetuneReport finetune(const std::optional<Checkpoint>& init, const EvalConfig& config,
                        const DatasetManifest& task_manifest) {
  return finetune_impl(init, config, task_manifest, config.protocol == Protocol::partial_finetune);
}

FinetuneReport partial_finetune(const std::optional<Checkpoint>& init, const EvalConfig& config,
                                const DatasetManifest& task_manifest) {
  return finetune_impl(init, config, task_manifest, true);
}

ProbeResult linear_probe(const EncoderSpec& spec, ParamStore& encoder_store,
                         const DatasetManifest& data, const ProbeConfig& config) {
  config.validate();
  const Granularity g =
      config.label_granularity == PairGranularity::coarse ? Granularity::coarse : Granularity::fine;
  const int n_classes =
      g == Granularity::coarse ? data.taxonomy.n_coarse() : data.taxonomy.n_fine();

  std::vector<size_t> labeled;
  for (size_t i = 0; i < data.entries.size(); ++i)
    if (data.label_at(i, g) != kUnlabeled) labeled.push_back(i);
  if (labeled.size() < 4) throw ConfigError("probe: not enough labeled frames");

  DatasetManifest lm = subset_manifest(data, labeled);
  auto [train_idx, test_idx] = split_train_val(lm, 1.0 - config.train_fraction, config.seed);
  if (train_idx.empty() || test_idx.empty()) throw ConfigError("probe: degenerate train/test split");

  ProbeResult result;
  result.encoder_hash_before = encoder_store.values_hash("enc.");

  FrameStore frames(lm);
  const MatX train_feats = batched_features(spec, encoder_store, frames, train_idx);
  const MatX test_feats = batched_features(spec, encoder_store, frames, test_idx);

  std::vector<int> train_labels, test_labels;
  for (const size_t i : train_idx) train_labels.push_back(lm.label_at(i, g));
  for (const size_t i : test_idx) test_labels.push_back(lm.label_at(i, g));

  // Full-batch Adam on a linear head over frozen features.
  ParamStore head;
  Rng rng(derive_seed(config.seed, "probe_head"));
  const int fd = spec.feature_dim;
  {
    Tensor w = Tensor::zeros({fd, n_classes});
    const double stddev = std::sqrt(2.0 / fd);
    for (int64_t i = 0; i < w.numel(); ++i) w.v[i] = rng.normal(0.0, stddev);
    head.add_param("head.w", w);
    head.add_param("head.b", Tensor::zeros({n_classes}));
  }
  AdamOpt adam(config.lr, config.weight_decay);
  Tensor ft = Tensor::zeros({static_cast<int>(train_idx.size()), fd});
  ft.mat() = train_feats;
  auto fx = ad::Value::constant(ft);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto logits = ad::add_rowvec(ad::matmul(fx, head.param("head.w")), head.param("head.b"));
    auto loss = ad::softmax_cross_entropy(logits, train_labels);
    if (!std::isfinite(loss.item())) throw NumericalError("probe: non-finite loss");
    head.zero_grad();
    ad::backward(loss);
    adam.step(head, head.order);
  }

  Confusion confusion = Confusion::Zero(n_classes, n_classes);
  {
    const MatX logits = (test_feats * head.param("head.w").val().mat()).rowwise() +
                        Eigen::Map<const Eigen::RowVectorXd>(head.param("head.b").val().v.data(),
                                                             n_classes);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index pred;
      logits.row(i).maxCoeff(&pred);
      ++confusion(test_labels[static_cast<size_t>(i)], static_cast<int>(pred));
    }
  }
  result.report = classification_metrics(confusion);
  result.encoder_hash_after = encoder_store.values_hash("enc.");
  return result;
}

EmbeddingTable compute_embeddings(const EncoderSpec& spec, ParamStore& store,
                                  const DatasetManifest& manifest, EmbedLayer layer) {
  EmbeddingTable table;
  const int dim = layer == EmbedLayer::penultimate ? spec.feature_dim : spec.projection_dim;
  table.vectors.resize(static_cast<Eigen::Index>(manifest.entries.size()), dim);
  FrameStore frames(manifest);
  const size_t chunk = 128;
  for (size_t pos = 0; pos < manifest.entries.size(); pos += chunk) {
    const size_t n = std::min(chunk, manifest.entries.size() - pos);
    std::vector<Image> images;
    for (size_t i = 0; i < n; ++i) images.push_back(frames.image(pos + i));
    const Tensor m = layer == EmbedLayer::penultimate ? feature_vectors(spec, store, images)
                                                      : embed_images(spec, store, images);
    for (size_t i = 0; i < n; ++i)
      table.vectors.row(static_cast<Eigen::Index>(pos + i)) =
          Eigen::Map<const Eigen::RowVectorXd>(m.v.data() + static_cast<int64_t>(i) * dim, dim);
  }
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    table.sample_ids.push_back(e.scan_id + ":" + std::to_string(e.frame_index));
    const int fine = manifest.label_at(i, Granularity::fine);
    table.labels.push_back(fine == kUnlabeled ? "-" : manifest.taxonomy.fine_name(fine));
  }
  return table;
}

void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("embeddings: cannot open for write: " + path.string());
  char buf[32];
  for (Eigen::Index i = 0; i < table.vectors.rows(); ++i) {
    out << table.sample_ids[static_cast<size_t>(i)] << "\t" << table.labels[static_cast<size_t>(i)];
    for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "\t%.9g", table.vectors(i, j));
      out << buf;
    }
    if (table.coords2d.rows() == table.vectors.rows()) {
      std::snprintf(buf, sizeof buf, "\t%.9g", table.coords2d(i, 0));
      out << buf;
      std::snprintf(buf, sizeof buf, "\t%.9g", table.coords2d(i, 1));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("embeddings: write failed: " + path.string());
}

MatX tsne_2d(const MatX& x, double perplexity, int iterations, uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (n < 4) throw ArgumentError("tsne: need at least 4 points");
  perplexity = std::min(perplexity, static_cast<double>(n - 1) / 3.0);

  // Pairwise squared distances.
  Eigen::VectorXd sq = x.rowwise().squaredNorm();
  MatX d2 = (-2.0 * x * x.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  d2.diagonal().setZero();
  d2 = d2.cwiseMax(0.0);

  // Per-point precision via bisection on perplexity.
  MatX p = MatX::Zero(n, n);
  const double log_perp = std::log(perplexity);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Eigen::ArrayXd row = d2.row(i).array();
    for (int it = 0; it < 64; ++it) {
      Eigen::ArrayXd e = (-row * beta).exp();
      e[i] = 0.0;
      const double s = e.sum();
      if (s <= 0) {
        beta /= 2;
        continue;
      }
      const double h = std::log(s) + beta * (row * e).sum() / s;  // Shannon entropy (nats)
      if (std::abs(h - log_perp) < 1e-5) break;
      if (h > log_perp) {
        lo = beta;
        beta = std::isfinite(hi) ? (beta + hi) / 2 : beta * 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    Eigen::ArrayXd e = (-row * beta).exp();
    e[i] = 0.0;
    const double s = std::max(e.sum(), 1e-300);
    p.row(i) = (e / s).matrix();
  }
  MatX pj = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  pj = pj.cwiseMax(1e-12);

  Rng rng(derive_seed(seed, "tsne"));
  MatX y(n, 2), dy = MatX::Zero(n, 2), gains = MatX::Ones(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) y(i, j) = rng.normal(0.0, 1e-4);

  const int exaggeration_until = std::min(250, iterations / 2);
  for (int it = 0; it < iterations; ++it) {
    const double exaggeration = it < exaggeration_until ? 12.0 : 1.0;
    const double momentum = it < exaggeration_until ? 0.5 : 0.8;

    Eigen::VectorXd ysq = y.rowwise().squaredNorm();
    MatX num = (-2.0 * y * y.transpose()).colwise() + ysq;
    num.rowwise() += ysq.transpose();
    num = (1.0 + num.array()).inverse().matrix();
    num.diagonal().setZero();
    const double qsum = std::max(num.sum(), 1e-12);

    MatX grad = MatX::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double mult =
            (exaggeration * pj(i, j) - num(i, j) / qsum) * num(i, j);
        grad.row(i) += 4.0 * mult * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) {
        gains(i, j) = (grad(i, j) > 0) == (dy(i, j) > 0) ? gains(i, j) * 0.8 : gains(i, j) + 0.2;
        gains(i, j) = std::max(gains(i, j), 0.01);
      }
    dy = momentum * dy - 200.0 * gains.cwiseProduct(grad);
    y += dy;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

double silhouette_score(const MatX& x, const std::vector<int>& labels) {
  const Eigen::Index n = x.rows();
  if (static_cast<size_t>(n) != labels.size()) throw ArgumentError("silhouette: label count mismatch");
  std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) throw ArgumentError("silhouette: need at least two classes");

  MatX d(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (x.row(i) - x.row(j)).norm();

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double a = 0.0;
    int a_count = 0;
    std::map<int, std::pair<double, int>> other;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        a += d(i, j);
        ++a_count;
      } else {
        auto& acc = other[labels[static_cast<size_t>(j)]];
        acc.first += d(i, j);
        ++acc.second;
      }
    }
    if (a_count == 0) continue;  // singleton cluster scores 0
    a /= a_count;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cls, acc] : other) b = std::min(b, acc.first / acc.second);
    const double s = (b - a) / std::max(a, b);
    total += s;
  }
  return total / static_cast<double>(n);
}

}  // namespace awcl
