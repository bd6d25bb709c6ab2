#pragma once

#include <span>

#include "unicon/tensor.hpp"

namespace unicon::aggregate {

// Default epsilon in the speech pooling denominator.
inline constexpr double kEpsilon = 1e-4;

// Per-frame concatenation r_t = r_v,t (+) r_av,t, giving [T x 2D].
inline Tensor concat_joint(ConstMatrix r_v, ConstMatrix r_av) {
  if (r_v.rows != r_av.rows || r_v.cols != r_av.cols)
    throw ValidationError("concat_joint: r_v and r_av shapes differ");
  if (r_v.cols == 0 || r_v.rows == 0) throw ValidationError("concat_joint: empty feature block");
  const std::size_t t = r_v.rows, d = r_v.cols;
  Tensor out({t, 2 * d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = r_v(i, j);
      out.at(i, d + j) = r_av(i, j);
    }
  return out;
}

// Identity-related pooling: plain mean over time.
inline Vec identity_pool(ConstMatrix r) {
  if (r.rows == 0) throw ValidationError("identity_pool: T must be >= 1");
  Vec out(r.cols, 0.0);
  for (std::size_t t = 0; t < r.rows; ++t) axpy(1.0, r.row(t), out);
  const double inv = 1.0 / static_cast<double>(r.rows);
  for (double& x : out) x *= inv;
  return out;
}

// Speech-related pooling: sum_t p_t r_t / (eps + sum_t p_t).
inline Vec speech_pool(ConstMatrix r, std::span<const double> p, double epsilon = kEpsilon) {
  if (r.rows == 0) throw ValidationError("speech_pool: T must be >= 1");
  if (p.size() != r.rows) throw ValidationError("speech_pool: score length differs from T");
  Vec out(r.cols, 0.0);
  double mass = 0.0;
  for (std::size_t t = 0; t < r.rows; ++t) {
    axpy(p[t], r.row(t), out);
    mass += p[t];
  }
  const double inv = 1.0 / (epsilon + mass);
  for (double& x : out) x *= inv;
  return out;
}

// Gradient of speech_pool with respect to p, given upstream grad on sp:
//   d sp / d p_t = (r_t - sp) / (eps + sum p)
inline Vec speech_pool_grad_p(ConstMatrix r, std::span<const double> p, std::span<const double> sp,
                              std::span<const double> grad_sp, double epsilon = kEpsilon) {
  double mass = epsilon;
  for (double x : p) mass += x;
  Vec out(r.rows, 0.0);
  for (std::size_t t = 0; t < r.rows; ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j < r.cols; ++j) acc += grad_sp[j] * (r(t, j) - sp[j]);
    out[t] = acc / mass;
  }
  return out;
}

}  // namespace unicon::aggregate
