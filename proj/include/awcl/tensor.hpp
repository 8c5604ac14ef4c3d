#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "awcl/errors.hpp"

namespace awcl {

using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatX>;
using ConstMatMap = Eigen::Map<const MatX>;

// Dense row-major double tensor, rank <= 4. Double precision throughout so the
// finite-difference gradient checks have headroom.
struct Tensor {
  std::vector<int> shape;
  Eigen::ArrayXd v;

  Tensor() = default;

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.v = Eigen::ArrayXd::Zero(count(t.shape));
    return t;
  }

  static Tensor full(std::vector<int> s, double value) {
    Tensor t = zeros(std::move(s));
    t.v.setConstant(value);
    return t;
  }

  static Tensor from_vector(std::vector<int> s, const std::vector<double>& data) {
    Tensor t;
    t.shape = std::move(s);
    if (static_cast<int64_t>(data.size()) != count(t.shape))
      throw ArgumentError("tensor: data size does not match shape");
    t.v = Eigen::Map<const Eigen::ArrayXd>(data.data(), static_cast<Eigen::Index>(data.size()));
    return t;
  }

  static Tensor scalar(double value) { return full({1}, value); }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (const int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return v.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 2-D view; requires rank 2.
  MatMap mat() {
    return MatMap(v.data(), shape[0], shape[1]);
  }
  ConstMatMap mat() const {
    return ConstMatMap(v.data(), shape[0], shape[1]);
  }

  // Arbitrary (rows, cols) view over the flat buffer.
  MatMap view(int rows, int cols) { return MatMap(v.data(), rows, cols); }
  ConstMatMap view(int rows, int cols) const { return ConstMatMap(v.data(), rows, cols); }

  double& at(std::initializer_list<int> idx) { return v[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return v[offset(idx)]; }

  bool all_finite() const { return v.isFinite().all(); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

 private:
  int64_t offset(std::initializer_list<int> idx) const {
    int64_t off = 0;
    size_t i = 0;
    for (const int ix : idx) {
      off = off * shape[i] + ix;
      ++i;
    }
    return off;
  }
};

// FNV-1a over the raw bytes of a double buffer; used for parameter freeze checks
// and config fingerprints.
inline uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t tensor_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a_bytes(t.v.data(), sizeof(double) * static_cast<size_t>(t.v.size()), h);
}

}  // namespace awcl
