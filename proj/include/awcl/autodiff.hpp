#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "awcl/tensor.hpp"

namespace awcl::ad {

// Reverse-mode autodiff on a dynamic tape. Nodes are created per forward pass
// and freed when the last Value handle goes out of scope; parameter leaves are
// long-lived and shared across passes.
//
// Contract: after backward(root), grad is valid on every node reachable from
// root. Optimizers must only be fed parameters that participate in the graph
// of the loss they step on.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

using NodePtr = std::shared_ptr<Node>;

class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node_(std::move(n)) {}

  static Value leaf(Tensor v, bool requires_grad);
  static Value constant(Tensor v) { return leaf(std::move(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& mutable_val() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  const NodePtr& node() const { return node_; }

  double item() const { return node_->value.v[0]; }

 private:
  NodePtr node_;
};

void backward(const Value& root);

// ---- elementwise / linear algebra ----
Value add(const Value& a, const Value& b);            // same shape
Value sub(const Value& a, const Value& b);
Value add_rowvec(const Value& x, const Value& bias);  // x: [n,k], bias: [k]
Value scale(const Value& x, double c);
Value relu(const Value& x);
Value matmul(const Value& a, const Value& b);         // [m,k] x [k,n]
Value gram(const Value& x);                           // x * x^T for [m,d]
Value row_l2_normalize(const Value& x);               // rows to unit norm
Value add_constant(const Value& x, const Tensor& c);  // c not differentiated
Value mean_all(const Value& x);                       // scalar

// ---- conv stack ----
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value maxpool2d(const Value& x, int k, int stride, int pad);
Value global_avg_pool(const Value& x);                // [n,c,h,w] -> [n,c]
Value upsample2x_bilinear(const Value& x);            // [n,c,h,w] -> [n,c,2h,2w]
Value batchnorm2d(const Value& x, const Value& gamma, const Value& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// ---- losses ----
Value log_softmax_rows(const Value& x);               // stable, per row
// scalar = -sum_i w_i * p[row_i, col_i]
struct GatherTerm {
  int row;
  int col;
  double weight;
};
Value weighted_neg_gather(const Value& p, std::vector<GatherTerm> terms);
// mean cross-entropy over rows of logits [n,k] against integer labels
Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels);
// mean cross-entropy over all pixels; logits [n,k,h,w], labels [n*h*w] ints
Value softmax_cross_entropy_pixels(const Value& logits, const std::vector<int>& labels);

}  // namespace awcl::ad
