#include "awcl/loss.hpp"

#include <algorithm>
#include <cmath>

#include "awcl/errors.hpp"

namespace awcl {

void EmbeddingBatch::validate() const {
  if (z.rank() != 2) throw ArgumentError("embedding batch: z must be [2N, D]");
  const int n = z.dim(0);
  if (n < 2 || n % 2 != 0) throw ArgumentError("embedding batch: row count must be even and >= 2");
  if (static_cast<int>(meta.size()) != n) throw ArgumentError("embedding batch: meta size mismatch");
  if (!(temperature > 0.0)) throw ArgumentError("embedding batch: temperature must be positive");
  for (int i = 0; i < n; ++i) {
    const int j = meta[static_cast<size_t>(i)].pair_row;
    if (j < 0 || j >= n || j == i || meta[static_cast<size_t>(j)].pair_row != i)
      throw ArgumentError("embedding batch: pair_row must be a fixed-point-free involution");
  }
}

PositiveSets build_positive_sets(const std::vector<RowMeta>& meta) {
  const int n = static_cast<int>(meta.size());
  PositiveSets sets(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = sets[static_cast<size_t>(i)];
    s.push_back(meta[static_cast<size_t>(i)].pair_row);
    const int a = meta[static_cast<size_t>(i)].anatomy_id;
    if (a >= 0) {
      for (int k = 0; k < n; ++k) {
        if (k == i || k == meta[static_cast<size_t>(i)].pair_row) continue;
        if (meta[static_cast<size_t>(k)].anatomy_id == a) s.push_back(k);
      }
    }
    std::sort(s.begin(), s.end());
  }
  return sets;
}

bool anatomy_branch(const std::vector<RowMeta>& meta, const PositiveSets& sets, int i) {
  (void)meta;
  return sets[static_cast<size_t>(i)].size() > 1;
}

double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw NumericalError("cosine_sim: zero-norm input");
  return u.dot(v) / (nu * nv);
}

namespace {

// Row-normalized similarity matrix scaled by 1/tau, diagonal masked with a
// large negative surrogate so exp() underflows to exactly zero.
constexpr double kDiagMask = -1e9;

MatX scaled_similarities(const EmbeddingBatch& batch) {
  const int n = batch.rows();
  const int d = batch.z.dim(1);
  MatX zn(n, d);
  ConstMatMap zm = batch.z.mat();
  for (int i = 0; i < n; ++i) {
    const double r = zm.row(i).norm();
    if (r == 0.0) throw NumericalError("contrastive loss: zero-norm embedding row " + std::to_string(i));
    zn.row(i) = zm.row(i) / r;
  }
  MatX s = (zn * zn.transpose()) / batch.temperature;
  for (int i = 0; i < n; ++i) s(i, i) = kDiagMask;
  return s;
}

// -(1/|A|) * sum_{a in A} log softmax(s_i)[a], with max-subtraction.
double anchor_term(const MatX& s, int i, const std::vector<int>& positives) {
  const double mx = s.row(i).maxCoeff();
  const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
  double acc = 0.0;
  for (const int a : positives) acc += s(i, a) - lse;
  return -acc / static_cast<double>(positives.size());
}

void check_anchor(const EmbeddingBatch& batch, int anchor) {
  if (anchor < 0 || anchor >= batch.rows()) throw ArgumentError("loss: anchor out of range");
}

}  // namespace

double ntxent_loss(const EmbeddingBatch& batch, int anchor) {
  batch.validate();
  check_anchor(batch, anchor);
  const MatX s = scaled_similarities(batch);
  return anchor_term(s, anchor, {batch.meta[static_cast<size_t>(anchor)].pair_row});
}

double anatomy_aware_loss(const EmbeddingBatch& batch, int anchor, const std::vector<int>& positives) {
  batch.validate();
  check_anchor(batch, anchor);
  if (positives.empty())
    throw ArgumentError("anatomy_aware_loss: empty positive set; dispatch to ntxent_loss instead");
  for (const int a : positives)
    if (a < 0 || a >= batch.rows() || a == anchor)
      throw ArgumentError("anatomy_aware_loss: invalid positive index");
  const MatX s = scaled_similarities(batch);
  return anchor_term(s, anchor, positives);
}

double awcl_batch_loss(const EmbeddingBatch& batch) {
  batch.validate();
  auto z = ad::Value::constant(batch.z);
  return awcl_batch_loss_node(z, batch.meta, batch.temperature).item();
}

namespace {

ad::Value log_softmax_over_others(const ad::Value& z, double temperature) {
  const int n = z.val().dim(0);
  Tensor mask = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) mask.v[static_cast<int64_t>(i) * n + i] = kDiagMask;
  auto zn = ad::row_l2_normalize(z);
  auto s = ad::scale(ad::gram(zn), 1.0 / temperature);
  return ad::log_softmax_rows(ad::add_constant(s, mask));
}

}  // namespace

ad::Value awcl_batch_loss_node(const ad::Value& z, const std::vector<RowMeta>& meta, double temperature) {
  const int n = z.val().dim(0);
  if (static_cast<int>(meta.size()) != n) throw ArgumentError("awcl_batch_loss_node: meta size mismatch");
  if (n < 2) throw ArgumentError("awcl_batch_loss_node: need at least one sample pair");
  const PositiveSets sets = build_positive_sets(meta);
  std::vector<ad::GatherTerm> terms;
  for (int i = 0; i < n; ++i) {
    const auto& s = sets[static_cast<size_t>(i)];
    const double w = 1.0 / (static_cast<double>(s.size()) * n);
    for (const int a : s) terms.push_back({i, a, w});
  }
  return ad::weighted_neg_gather(log_softmax_over_others(z, temperature), std::move(terms));
}

ad::Value anchor_loss_node(const ad::Value& z, const std::vector<int>& positives, int anchor,
                           double temperature) {
  if (positives.empty()) throw ArgumentError("anchor_loss_node: empty positive set");
  std::vector<ad::GatherTerm> terms;
  const double w = 1.0 / static_cast<double>(positives.size());
  for (const int a : positives) terms.push_back({anchor, a, w});
  return ad::weighted_neg_gather(log_softmax_over_others(z, temperature), std::move(terms));
}

FdReport finite_difference_check(LossKind kind, const EmbeddingBatch& batch, double eps, int anchor) {
  if (eps < 1e-6 || eps > 1e-3) throw ArgumentError("finite_difference_check: eps must be in [1e-6, 1e-3]");
  batch.validate();

  // All-equal rows leave the cosine term directionless; flag instead of failing.
  FdReport report;
  {
    ConstMatMap zm = batch.z.mat();
    bool all_same = true;
    for (int i = 1; i < batch.rows() && all_same; ++i)
      if ((zm.row(i) - zm.row(0)).cwiseAbs().maxCoeff() > 0.0) all_same = false;
    if (all_same) {
      report.degenerate = true;
      return report;
    }
  }

  const PositiveSets sets = build_positive_sets(batch.meta);
  auto loss_of = [&](const Tensor& zt) -> double {
    auto z = ad::Value::constant(zt);
    switch (kind) {
      case LossKind::ntxent:
        return anchor_loss_node(z, {batch.meta[static_cast<size_t>(anchor)].pair_row}, anchor,
                                batch.temperature)
            .item();
      case LossKind::anatomy_aware:
        return anchor_loss_node(z, sets[static_cast<size_t>(anchor)], anchor, batch.temperature).item();
      case LossKind::awcl_batch:
        return awcl_batch_loss_node(z, batch.meta, batch.temperature).item();
    }
    throw ArgumentError("finite_difference_check: unknown loss kind");
  };

  auto zleaf = ad::Value::leaf(batch.z, true);
  ad::Value loss;
  switch (kind) {
    case LossKind::ntxent:
      loss = anchor_loss_node(zleaf, {batch.meta[static_cast<size_t>(anchor)].pair_row}, anchor,
                              batch.temperature);
      break;
    case LossKind::anatomy_aware:
      loss = anchor_loss_node(zleaf, sets[static_cast<size_t>(anchor)], anchor, batch.temperature);
      break;
    case LossKind::awcl_batch:
      loss = awcl_batch_loss_node(zleaf, batch.meta, batch.temperature);
      break;
  }
  ad::backward(loss);
  const Tensor analytic = zleaf.grad();

  for (int64_t i = 0; i < batch.z.numel(); ++i) {
    Tensor zp = batch.z, zm = batch.z;
    zp.v[i] += eps;
    zm.v[i] -= eps;
    const double fd = (loss_of(zp) - loss_of(zm)) / (2.0 * eps);
    const double rel = std::abs(fd - analytic.v[i]) / std::max(std::abs(analytic.v[i]), 1e-8);
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace awcl
