#include "awcl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "awcl/errors.hpp"

namespace awcl::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  n->requires_grad = false;
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

void check_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ArgumentError(std::string(who) + ": expected rank-2 tensor, got " + t.shape_str());
}

void check_rank4(const Tensor& t, const char* who) {
  if (t.rank() != 4) throw ArgumentError(std::string(who) + ": expected rank-4 tensor, got " + t.shape_str());
}

}  // namespace

Value Value::leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return Value(std::move(n));
}

void backward(const Value& root) {
  if (root.val().numel() != 1) throw ArgumentError("backward: root must be a scalar");

  // Iterative post-order DFS.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx].get();
      ++idx;
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : topo) n->grad = Tensor::zeros(n->value.shape);
  root.node()->grad.v[0] = 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Value add(const Value& a, const Value& b) {
  if (!a.val().same_shape(b.val())) throw ArgumentError("add: shape mismatch");
  Tensor out = a.val();
  out.v += b.val().v;
  auto an = a.node(), bn = b.node();
  return Value(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
    an->grad.v += n.grad.v;
    bn->grad.v += n.grad.v;
  }));
}

Value sub(const Value& a, const Value& b) {
  if (!a.val().same_shape(b.val())) throw ArgumentError("sub: shape mismatch");
  Tensor out = a.val();
  out.v -= b.val().v;
  auto an = a.node(), bn = b.node();
  return Value(make_node(std::move(out), {an, bn}, [an, bn](Node& n) {
    an->grad.v += n.grad.v;
    bn->grad.v -= n.grad.v;
  }));
}

Value add_rowvec(const Value& x, const Value& bias) {
  check_rank2(x.val(), "add_rowvec");
  const int n = x.val().dim(0), k = x.val().dim(1);
  if (bias.val().numel() != k) throw ArgumentError("add_rowvec: bias size mismatch");
  Tensor out = x.val();
  {
    MatMap m = out.mat();
    for (int i = 0; i < n; ++i)
      m.row(i) += Eigen::Map<const Eigen::RowVectorXd>(bias.val().v.data(), k);
  }
  auto xn = x.node(), bnn = bias.node();
  return Value(make_node(std::move(out), {xn, bnn}, [xn, bnn, n, k](Node& nd) {
    xn->grad.v += nd.grad.v;
    ConstMatMap g(nd.grad.v.data(), n, k);
    Eigen::Map<Eigen::RowVectorXd>(bnn->grad.v.data(), k) += g.colwise().sum();
  }));
}

Value scale(const Value& x, double c) {
  Tensor out = x.val();
  out.v *= c;
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, c](Node& n) {
    xn->grad.v += c * n.grad.v;
  }));
}

Value relu(const Value& x) {
  Tensor out = x.val();
  out.v = out.v.max(0.0);
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn](Node& n) {
    xn->grad.v += (xn->value.v > 0.0).cast<double>() * n.grad.v;
  }));
}

Value matmul(const Value& a, const Value& b) {
  check_rank2(a.val(), "matmul");
  check_rank2(b.val(), "matmul");
  const int m = a.val().dim(0), k = a.val().dim(1), n2 = b.val().dim(1);
  if (b.val().dim(0) != k) throw ArgumentError("matmul: inner dimension mismatch");
  Tensor out = Tensor::zeros({m, n2});
  out.mat().noalias() = a.val().mat() * b.val().mat();
  auto an = a.node(), bn = b.node();
  return Value(make_node(std::move(out), {an, bn}, [an, bn, m, k, n2](Node& nd) {
    ConstMatMap g(nd.grad.v.data(), m, n2);
    MatMap(an->grad.v.data(), m, k).noalias() += g * bn->value.mat().transpose();
    MatMap(bn->grad.v.data(), k, n2).noalias() += an->value.mat().transpose() * g;
  }));
}

Value gram(const Value& x) {
  check_rank2(x.val(), "gram");
  const int m = x.val().dim(0), d = x.val().dim(1);
  Tensor out = Tensor::zeros({m, m});
  out.mat().noalias() = x.val().mat() * x.val().mat().transpose();
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, m, d](Node& nd) {
    ConstMatMap g(nd.grad.v.data(), m, m);
    MatMap xg(xn->grad.v.data(), m, d);
    xg.noalias() += (g + g.transpose()) * xn->value.mat();
  }));
}

Value row_l2_normalize(const Value& x) {
  check_rank2(x.val(), "row_l2_normalize");
  const int m = x.val().dim(0), d = x.val().dim(1);
  Tensor out = Tensor::zeros({m, d});
  Eigen::VectorXd norms(m);
  {
    ConstMatMap xm = x.val().mat();
    MatMap om = out.mat();
    for (int i = 0; i < m; ++i) {
      const double r = xm.row(i).norm();
      if (r == 0.0) throw NumericalError("row_l2_normalize: zero-norm row " + std::to_string(i));
      norms[i] = r;
      om.row(i) = xm.row(i) / r;
    }
  }
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, norms, m, d](Node& nd) {
    ConstMatMap g(nd.grad.v.data(), m, d);
    ConstMatMap y(nd.value.v.data(), m, d);
    MatMap xg(xn->grad.v.data(), m, d);
    for (int i = 0; i < m; ++i) {
      const double dot = g.row(i).dot(y.row(i));
      xg.row(i) += (g.row(i) - dot * y.row(i)) / norms[i];
    }
  }));
}

Value add_constant(const Value& x, const Tensor& c) {
  if (!x.val().same_shape(c)) throw ArgumentError("add_constant: shape mismatch");
  Tensor out = x.val();
  out.v += c.v;
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn](Node& n) {
    xn->grad.v += n.grad.v;
  }));
}

Value mean_all(const Value& x) {
  const double inv = 1.0 / static_cast<double>(x.val().numel());
  Tensor out = Tensor::scalar(x.val().v.sum() * inv);
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, inv](Node& n) {
    xn->grad.v += inv * n.grad.v[0];
  }));
}

// ---- conv stack ----

namespace {

struct ConvDims {
  int n, ic, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
  ConvDims d;
  d.n = x.dim(0);
  d.ic = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.oc = wt.dim(0);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  if (wt.dim(1) != d.ic) throw ArgumentError("conv2d: channel mismatch");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0) throw ArgumentError("conv2d: kernel larger than padded input");
  return d;
}

void im2col(const double* x, const ConvDims& d, int stride, int pad, MatX& cols) {
  // cols: [ic*kh*kw, oh*ow]
  for (int ci = 0; ci < d.ic; ++ci) {
    const double* xc = x + static_cast<int64_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const int row = (ci * d.kh + ky) * d.kw + kx;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = cols.data() + static_cast<int64_t>(row) * d.oh * d.ow + static_cast<int64_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0);
            continue;
          }
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? xc[static_cast<int64_t>(iy) * d.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const MatX& cols, const ConvDims& d, int stride, int pad, double* gx) {
  for (int ci = 0; ci < d.ic; ++ci) {
    double* gc = gx + static_cast<int64_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const int row = (ci * d.kh + ky) * d.kw + kx;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = cols.data() + static_cast<int64_t>(row) * d.oh * d.ow + static_cast<int64_t>(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < d.w) gc[static_cast<int64_t>(iy) * d.w + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
  check_rank4(x.val(), "conv2d");
  check_rank4(w.val(), "conv2d weight");
  const ConvDims d = conv_dims(x.val(), w.val(), stride, pad);
  if (b.val().numel() != d.oc) throw ArgumentError("conv2d: bias size mismatch");

  const int krows = d.ic * d.kh * d.kw;
  auto cols_cache = std::make_shared<std::vector<MatX>>();
  cols_cache->reserve(static_cast<size_t>(d.n));

  Tensor out = Tensor::zeros({d.n, d.oc, d.oh, d.ow});
  ConstMatMap wmat(w.val().v.data(), d.oc, krows);
  for (int i = 0; i < d.n; ++i) {
    MatX cols(krows, d.oh * d.ow);
    im2col(x.val().v.data() + static_cast<int64_t>(i) * d.ic * d.h * d.w, d, stride, pad, cols);
    MatMap omap(out.v.data() + static_cast<int64_t>(i) * d.oc * d.oh * d.ow, d.oc, d.oh * d.ow);
    omap.noalias() = wmat * cols;
    for (int c = 0; c < d.oc; ++c) omap.row(c).array() += b.val().v[c];
    cols_cache->push_back(std::move(cols));
  }

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Value(make_node(std::move(out), {xn, wn, bn},
                         [xn, wn, bn, d, stride, pad, krows, cols_cache](Node& nd) {
    MatMap gw(wn->grad.v.data(), d.oc, krows);
    ConstMatMap wmat(wn->value.v.data(), d.oc, krows);
    for (int i = 0; i < d.n; ++i) {
      ConstMatMap go(nd.grad.v.data() + static_cast<int64_t>(i) * d.oc * d.oh * d.ow, d.oc, d.oh * d.ow);
      gw.noalias() += go * (*cols_cache)[static_cast<size_t>(i)].transpose();
      for (int c = 0; c < d.oc; ++c) bn->grad.v[c] += go.row(c).sum();
      MatX gcols = wmat.transpose() * go;
      col2im_add(gcols, d, stride, pad,
                 xn->grad.v.data() + static_cast<int64_t>(i) * d.ic * d.h * d.w);
    }
  }));
}

Value maxpool2d(const Value& x, int k, int stride, int pad) {
  check_rank4(x.val(), "maxpool2d");
  const int n = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ArgumentError("maxpool2d: window larger than padded input");

  Tensor out = Tensor::zeros({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const double* xv = x.val().v.data();
  int64_t oidx = 0;
  for (int i = 0; i < n; ++i) {
    for (int ci = 0; ci < c; ++ci) {
      const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oidx) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_at = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              const int64_t at = base + static_cast<int64_t>(iy) * w + ix;
              if (xv[at] > best) {
                best = xv[at];
                best_at = at;
              }
            }
          }
          out.v[oidx] = best;
          (*argmax)[static_cast<size_t>(oidx)] = best_at;
        }
      }
    }
  }
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, argmax](Node& nd) {
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      xn->grad.v[(*argmax)[static_cast<size_t>(i)]] += nd.grad.v[i];
  }));
}

Value global_avg_pool(const Value& x) {
  check_rank4(x.val(), "global_avg_pool");
  const int n = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
      out.v[static_cast<int64_t>(i) * c + ci] = x.val().v.segment(base, h * w).sum() * inv;
    }
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, n, c, h, w, inv](Node& nd) {
    for (int i = 0; i < n; ++i)
      for (int ci = 0; ci < c; ++ci) {
        const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
        xn->grad.v.segment(base, h * w) += nd.grad.v[static_cast<int64_t>(i) * c + ci] * inv;
      }
  }));
}

Value upsample2x_bilinear(const Value& x) {
  check_rank4(x.val(), "upsample2x_bilinear");
  const int n = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
  const int oh = 2 * h, ow = 2 * w;

  // Half-pixel-center sampling; weights depend only on output parity.
  auto src = [](int o, int limit) {
    const double s = (o + 0.5) * 0.5 - 0.5;
    int lo = static_cast<int>(std::floor(s));
    double t = s - lo;
    int hi = lo + 1;
    if (lo < 0) { lo = 0; hi = 0; t = 0.0; }
    if (hi > limit - 1) { hi = limit - 1; lo = limit - 1; t = 0.0; }
    return std::tuple<int, int, double>(lo, hi, t);
  };

  Tensor out = Tensor::zeros({n, c, oh, ow});
  const double* xv = x.val().v.data();
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const int64_t ibase = (static_cast<int64_t>(i) * c + ci) * h * w;
      const int64_t obase = (static_cast<int64_t>(i) * c + ci) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        auto [y0, y1, ty] = src(oy, h);
        for (int ox = 0; ox < ow; ++ox) {
          auto [x0, x1, tx] = src(ox, w);
          const double v00 = xv[ibase + static_cast<int64_t>(y0) * w + x0];
          const double v01 = xv[ibase + static_cast<int64_t>(y0) * w + x1];
          const double v10 = xv[ibase + static_cast<int64_t>(y1) * w + x0];
          const double v11 = xv[ibase + static_cast<int64_t>(y1) * w + x1];
          out.v[obase + static_cast<int64_t>(oy) * ow + ox] =
              (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        }
      }
    }
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, n, c, h, w, oh, ow, src](Node& nd) {
    for (int i = 0; i < n; ++i)
      for (int ci = 0; ci < c; ++ci) {
        const int64_t ibase = (static_cast<int64_t>(i) * c + ci) * h * w;
        const int64_t obase = (static_cast<int64_t>(i) * c + ci) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          auto [y0, y1, ty] = src(oy, h);
          for (int ox = 0; ox < ow; ++ox) {
            auto [x0, x1, tx] = src(ox, w);
            const double g = nd.grad.v[obase + static_cast<int64_t>(oy) * ow + ox];
            xn->grad.v[ibase + static_cast<int64_t>(y0) * w + x0] += (1 - ty) * (1 - tx) * g;
            xn->grad.v[ibase + static_cast<int64_t>(y0) * w + x1] += (1 - ty) * tx * g;
            xn->grad.v[ibase + static_cast<int64_t>(y1) * w + x0] += ty * (1 - tx) * g;
            xn->grad.v[ibase + static_cast<int64_t>(y1) * w + x1] += ty * tx * g;
          }
        }
      }
  }));
}

Value batchnorm2d(const Value& x, const Value& gamma, const Value& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps) {
  check_rank4(x.val(), "batchnorm2d");
  const int n = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
  const int64_t m = static_cast<int64_t>(n) * h * w;
  if (gamma.val().numel() != c || beta.val().numel() != c)
    throw ArgumentError("batchnorm2d: affine parameter size mismatch");

  Eigen::VectorXd mean(c), invstd(c);
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
        s += x.val().v.segment(base, h * w).sum();
        s2 += x.val().v.segment(base, h * w).square().sum();
      }
      const double mu = s / static_cast<double>(m);
      const double var = s2 / static_cast<double>(m) - mu * mu;
      mean[ci] = mu;
      invstd[ci] = 1.0 / std::sqrt(std::max(var, 0.0) + eps);
      const double unbiased = (m > 1) ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean.v[ci] = (1.0 - momentum) * running_mean.v[ci] + momentum * mu;
      running_var.v[ci] = (1.0 - momentum) * running_var.v[ci] + momentum * unbiased;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = running_mean.v[ci];
      invstd[ci] = 1.0 / std::sqrt(running_var.v[ci] + eps);
    }
  }

  Tensor out = Tensor::zeros({n, c, h, w});
  auto xhat = std::make_shared<Tensor>(Tensor::zeros({n, c, h, w}));
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
      xhat->v.segment(base, h * w) = (x.val().v.segment(base, h * w) - mean[ci]) * invstd[ci];
      out.v.segment(base, h * w) = xhat->v.segment(base, h * w) * gamma.val().v[ci] + beta.val().v[ci];
    }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return Value(make_node(std::move(out), {xn, gn, bn},
                         [xn, gn, bn, xhat, invstd, n, c, h, w, m, training](Node& nd) {
    for (int ci = 0; ci < c; ++ci) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < n; ++i) {
        const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
        sum_g += nd.grad.v.segment(base, h * w).sum();
        sum_gx += (nd.grad.v.segment(base, h * w) * xhat->v.segment(base, h * w)).sum();
      }
      gn->grad.v[ci] += sum_gx;
      bn->grad.v[ci] += sum_g;
      const double gamma_c = gn->value.v[ci];
      for (int i = 0; i < n; ++i) {
        const int64_t base = (static_cast<int64_t>(i) * c + ci) * h * w;
        if (training) {
          xn->grad.v.segment(base, h * w) +=
              gamma_c * invstd[ci] / static_cast<double>(m) *
              (static_cast<double>(m) * nd.grad.v.segment(base, h * w) - sum_g -
               xhat->v.segment(base, h * w) * sum_gx);
        } else {
          xn->grad.v.segment(base, h * w) += gamma_c * invstd[ci] * nd.grad.v.segment(base, h * w);
        }
      }
    }
  }));
}

Value log_softmax_rows(const Value& x) {
  check_rank2(x.val(), "log_softmax_rows");
  const int n = x.val().dim(0), k = x.val().dim(1);
  Tensor out = Tensor::zeros({n, k});
  {
    ConstMatMap xm = x.val().mat();
    MatMap om = out.mat();
    for (int i = 0; i < n; ++i) {
      const double mx = xm.row(i).maxCoeff();
      const Eigen::ArrayXd z = xm.row(i).array() - mx;
      const double lse = std::log(z.exp().sum());
      om.row(i) = (z - lse).matrix();
    }
  }
  auto xn = x.node();
  return Value(make_node(std::move(out), {xn}, [xn, n, k](Node& nd) {
    ConstMatMap g(nd.grad.v.data(), n, k);
    ConstMatMap lp(nd.value.v.data(), n, k);
    MatMap xg(xn->grad.v.data(), n, k);
    for (int i = 0; i < n; ++i) {
      const double gsum = g.row(i).sum();
      xg.row(i) += g.row(i) - gsum * lp.row(i).array().exp().matrix();
    }
  }));
}

Value weighted_neg_gather(const Value& p, std::vector<GatherTerm> terms) {
  check_rank2(p.val(), "weighted_neg_gather");
  const int cols = p.val().dim(1);
  double acc = 0.0;
  for (const auto& t : terms) acc -= t.weight * p.val().v[static_cast<int64_t>(t.row) * cols + t.col];
  auto pn = p.node();
  auto terms_ptr = std::make_shared<std::vector<GatherTerm>>(std::move(terms));
  return Value(make_node(Tensor::scalar(acc), {pn}, [pn, terms_ptr, cols](Node& nd) {
    const double g = nd.grad.v[0];
    for (const auto& t : *terms_ptr)
      pn->grad.v[static_cast<int64_t>(t.row) * cols + t.col] -= t.weight * g;
  }));
}

Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels) {
  check_rank2(logits.val(), "softmax_cross_entropy");
  const int n = logits.val().dim(0), k = logits.val().dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ArgumentError("softmax_cross_entropy: label count mismatch");
  double total = 0.0;
  auto probs = std::make_shared<Tensor>(Tensor::zeros({n, k}));
  {
    ConstMatMap lm = logits.val().mat();
    MatMap pm = probs->mat();
    for (int i = 0; i < n; ++i) {
      const int y = labels[static_cast<size_t>(i)];
      if (y < 0 || y >= k) throw ArgumentError("softmax_cross_entropy: label out of range");
      const double mx = lm.row(i).maxCoeff();
      const Eigen::ArrayXd z = lm.row(i).array() - mx;
      const Eigen::ArrayXd e = z.exp();
      const double s = e.sum();
      pm.row(i) = (e / s).matrix();
      total += std::log(s) - z[y];
    }
  }
  const double inv = 1.0 / n;
  auto ln = logits.node();
  auto labels_ptr = std::make_shared<std::vector<int>>(labels);
  return Value(make_node(Tensor::scalar(total * inv), {ln},
                         [ln, probs, labels_ptr, n, k, inv](Node& nd) {
    const double g = nd.grad.v[0] * inv;
    MatMap xg(ln->grad.v.data(), n, k);
    xg += g * probs->mat();
    for (int i = 0; i < n; ++i)
      xg(i, (*labels_ptr)[static_cast<size_t>(i)]) -= g;
  }));
}

Value softmax_cross_entropy_pixels(const Value& logits, const std::vector<int>& labels) {
  check_rank4(logits.val(), "softmax_cross_entropy_pixels");
  const int n = logits.val().dim(0), k = logits.val().dim(1), h = logits.val().dim(2), w = logits.val().dim(3);
  const int64_t npix = static_cast<int64_t>(n) * h * w;
  if (static_cast<int64_t>(labels.size()) != npix)
    throw ArgumentError("softmax_cross_entropy_pixels: label count mismatch");

  double total = 0.0;
  auto probs = std::make_shared<Tensor>(Tensor::zeros({n, k, h, w}));
  const double* lv = logits.val().v.data();
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    for (int64_t px = 0; px < plane; ++px) {
      const int y = labels[static_cast<size_t>(i * plane + px)];
      if (y < 0 || y >= k) throw ArgumentError("softmax_cross_entropy_pixels: label out of range");
      double mx = -std::numeric_limits<double>::infinity();
      for (int ci = 0; ci < k; ++ci)
        mx = std::max(mx, lv[(static_cast<int64_t>(i) * k + ci) * plane + px]);
      double s = 0.0;
      for (int ci = 0; ci < k; ++ci)
        s += std::exp(lv[(static_cast<int64_t>(i) * k + ci) * plane + px] - mx);
      for (int ci = 0; ci < k; ++ci)
        probs->v[(static_cast<int64_t>(i) * k + ci) * plane + px] =
            std::exp(lv[(static_cast<int64_t>(i) * k + ci) * plane + px] - mx) / s;
      total += std::log(s) - (lv[(static_cast<int64_t>(i) * k + y) * plane + px] - mx);
    }
  }
  const double inv = 1.0 / static_cast<double>(npix);
  auto ln = logits.node();
  auto labels_ptr = std::make_shared<std::vector<int>>(labels);
  return Value(make_node(Tensor::scalar(total * inv), {ln},
                         [ln, probs, labels_ptr, n, k, plane, inv](Node& nd) {
    const double g = nd.grad.v[0] * inv;
    ln->grad.v += g * probs->v;
    for (int i = 0; i < n; ++i)
      for (int64_t px = 0; px < plane; ++px) {
        const int y = (*labels_ptr)[static_cast<size_t>(i * plane + px)];
        ln->grad.v[(static_cast<int64_t>(i) * k + y) * plane + px] -= g;
      }
  }));
}

}  // namespace awcl::ad
