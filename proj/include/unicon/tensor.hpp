#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unicon/error.hpp"

namespace unicon {

using Shape = std::vector<std::size_t>;
using Vec = std::vector<double>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array of f64 with an immutable shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, Vec data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ValidationError("tensor data size " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Vec& values() { return data_; }
  const Vec& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Vec data_;
};

// Non-owning row-major matrix view.
struct ConstMatrix {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

struct MutMatrix {
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
  operator ConstMatrix() const { return {data, rows, cols}; }
};

inline ConstMatrix as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ValidationError("expected rank-2 tensor, got " + shape_str(t.shape()));
  return {t.span(), t.dim(0), t.dim(1)};
}

inline MutMatrix as_matrix(Tensor& t) {
  if (t.rank() != 2) throw ValidationError("expected rank-2 tensor, got " + shape_str(t.shape()));
  return {t.span(), t.dim(0), t.dim(1)};
}

// y += W x
inline void gemv_add(ConstMatrix w, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// x_grad += W^T g
inline void gemv_t_add(ConstMatrix w, std::span<const double> g, std::span<double> x_grad) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) x_grad[c] += wr[c] * gr;
  }
}

// W_grad += g x^T
inline void outer_add(std::span<const double> g, std::span<const double> x, MutMatrix w_grad) {
  for (std::size_t r = 0; r < w_grad.rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    double* wr = w_grad.data.data() + r * w_grad.cols;
    for (std::size_t c = 0; c < w_grad.cols; ++c) wr[c] += gr * x[c];
  }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace unicon
