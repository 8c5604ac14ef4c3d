#pragma once

#include <Eigen/Dense>
#include <vector>

#include "awcl/autodiff.hpp"
#include "awcl/tensor.hpp"

namespace awcl {

enum class ViewId { a, b };

struct RowMeta {
  int sample_id = 0;
  ViewId view = ViewId::a;
  int anatomy_id = -1;  // -1 = unlabeled
  int pair_row = -1;    // the row holding the other augmented view
};

// 2N projected vectors with per-row anchor metadata. Rows 2k, 2k+1 hold the two
// views of sample k by convention, but pairing is carried explicitly in meta.
struct EmbeddingBatch {
  Tensor z;  // [2N, D]
  std::vector<RowMeta> meta;
  double temperature = 0.5;

  int rows() const { return z.dim(0); }
  void validate() const;
};

// Positive index sets per row: the paired view plus every other row sharing the
// anchor's anatomy id. Rows dispatch to the instance-discrimination branch when
// the set is exactly the paired view.
using PositiveSets = std::vector<std::vector<int>>;

PositiveSets build_positive_sets(const std::vector<RowMeta>& meta);

// True when row i has a same-anatomy positive beyond its own augmented view,
// i.e. the anatomy-aware branch of the per-sample dispatch.
bool anatomy_branch(const std::vector<RowMeta>& meta, const PositiveSets& sets, int i);

double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

// Instance-discrimination contrastive term for one anchor (positive = paired view).
double ntxent_loss(const EmbeddingBatch& batch, int anchor);

// Anatomy-aware term: mean over the anchor's positive set, denominator over all
// other rows (positives are not excluded from it).
double anatomy_aware_loss(const EmbeddingBatch& batch, int anchor, const std::vector<int>& positives);

// Per-sample dispatch averaged over all 2N anchors: anchors with cross-sample
// anatomy positives take the anatomy-aware term, the rest the instance term.
double awcl_batch_loss(const EmbeddingBatch& batch);

// Differentiable batch loss over a z leaf; identical arithmetic to
// awcl_batch_loss (which evaluates this graph).
ad::Value awcl_batch_loss_node(const ad::Value& z, const std::vector<RowMeta>& meta, double temperature);
// Differentiable single-anchor loss with an explicit positive set.
ad::Value anchor_loss_node(const ad::Value& z, const std::vector<int>& positives, int anchor,
                           double temperature);

// ---- gradient verification ----

enum class LossKind { ntxent, anatomy_aware, awcl_batch };

struct FdReport {
  double max_rel_error = 0.0;
  bool degenerate = false;  // all-equal rows: cosine gradients are singular
};

// Central-difference check of the analytic gradient w.r.t. z. anchor is ignored
// for the batch loss; for anatomy_aware the positive set is rebuilt from meta.
FdReport finite_difference_check(LossKind kind, const EmbeddingBatch& batch, double eps,
                                 int anchor = 0);

}  // namespace awcl
