#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "awcl/config.hpp"
#include "awcl/data.hpp"
#include "awcl/nn.hpp"

namespace awcl {

// Rows = true class, columns = predicted class.
using Confusion = Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ClassificationReport {
  Confusion confusion;
  std::vector<double> precision, recall, f1;
  std::vector<uint8_t> absent;  // no true samples in the evaluated set
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
};

// Macro averages are unweighted means over classes present in the test set;
// zero-denominator precision/F1 score 0.
ClassificationReport classification_metrics(const Confusion& confusion);

struct SegmentationReport {
  Confusion confusion;
  double gaa = 0;  // global pixel accuracy
  double ma = 0;   // mean per-class pixel accuracy
  double miou = 0;
  std::vector<double> per_class_acc, per_class_iou;
};

SegmentationReport segmentation_metrics(const std::vector<Mask>& pred, const std::vector<Mask>& truth,
                                        int n_classes);
SegmentationReport segmentation_metrics_from_confusion(const Confusion& confusion);

// ---- transfer evaluation ----

struct FinetuneReport {
  bool is_segmentation = false;
  std::vector<ClassificationReport> folds;
  double macro_f1_mean = 0, macro_f1_std = 0;
  double macro_precision_mean = 0, macro_precision_std = 0;
  double macro_recall_mean = 0, macro_recall_std = 0;
  SegmentationReport seg;
  uint64_t encoder_hash_before = 0, encoder_hash_after = 0;
};

// End-to-end fine-tuning (or head-only training when the config says partial)
// on a labeled task manifest. init == nullopt trains from random init.
FinetuneReport finetune(const std::optional<Checkpoint>& init, const EvalConfig& config,
                        const DatasetManifest& task_manifest);

// Frozen-encoder protocol: encoder parameters are bit-identical before/after.
FinetuneReport partial_finetune(const std::optional<Checkpoint>& init, const EvalConfig& config,
                                const DatasetManifest& task_manifest);

// Frozen-feature linear probe with a scan-level train/test split.
struct ProbeResult {
  ClassificationReport report;
  uint64_t encoder_hash_before = 0, encoder_hash_after = 0;
};

ProbeResult linear_probe(const EncoderSpec& spec, ParamStore& encoder_store,
                         const DatasetManifest& data, const ProbeConfig& config);

// ---- representation export ----

enum class EmbedLayer { penultimate, projection };

struct EmbeddingTable {
  std::vector<std::string> sample_ids;
  std::vector<std::string> labels;
  MatX vectors;
  MatX coords2d;  // empty unless t-SNE was requested
};

EmbeddingTable compute_embeddings(const EncoderSpec& spec, ParamStore& store,
                                  const DatasetManifest& manifest, EmbedLayer layer);
// Writes sample_id, label, vector columns (and 2-D coordinates when present).
void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& table);

// Exact t-SNE (quadratic) with fixed seed; perplexity clamps to (n-1)/3.
MatX tsne_2d(const MatX& x, double perplexity = 30.0, int iterations = 1000, uint64_t seed = 0);

// Mean silhouette over samples, euclidean distance, by integer label.
double silhouette_score(const MatX& x, const std::vector<int>& labels);

}  // namespace awcl
