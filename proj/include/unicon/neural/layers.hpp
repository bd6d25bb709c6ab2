#pragma once

#include <cmath>
#include <span>
#include <string>

#include "unicon/neural/params.hpp"
#include "unicon/tensor.hpp"

namespace unicon::neural {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void check_len(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n)
    throw ValidationError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                          std::to_string(v.size()));
}

// ---- fully connected -------------------------------------------------------

struct LinearView {
  ConstMatrix w;  // [O x I]
  std::span<const double> b;
};

struct LinearGrad {
  MutMatrix w;
  std::span<double> b;
};

inline LinearView linear_view(const ParamStore& s, const std::string& prefix) {
  return {as_matrix(s[prefix + ".w"]), s[prefix + ".b"].span()};
}

inline LinearGrad linear_grad(ParamStore& g, const std::string& prefix) {
  return {as_matrix(g[prefix + ".w"]), g[prefix + ".b"].span()};
}

inline void add_linear(ParamStore& s, const std::string& prefix, std::size_t out, std::size_t in) {
  s.add(prefix + ".w", {out, in});
  s.add(prefix + ".b", {out});
}

inline void linear_forward(const LinearView& p, std::span<const double> x, std::span<double> y) {
  check_len(x, p.w.cols, "linear input");
  check_len(y, p.w.rows, "linear output");
  for (std::size_t o = 0; o < p.w.rows; ++o) y[o] = p.b[o];
  gemv_add(p.w, x, y);
}

inline Vec linear_forward(const LinearView& p, std::span<const double> x) {
  Vec y(p.w.rows);
  linear_forward(p, x, y);
  return y;
}

// Accumulates dW, db and (optionally) dx for upstream gradient grad_y.
inline void linear_backward(const LinearView& p, std::span<const double> x, std::span<const double> grad_y,
                            const LinearGrad& g, std::span<double> grad_x = {}) {
  check_len(grad_y, p.w.rows, "linear grad");
  outer_add(grad_y, x, g.w);
  for (std::size_t o = 0; o < p.w.rows; ++o) g.b[o] += grad_y[o];
  if (!grad_x.empty()) gemv_t_add(p.w, grad_y, grad_x);
}

// ---- GRU cell --------------------------------------------------------------
//
//   z  = sigmoid(W_z x + U_z h + b_z)
//   r  = sigmoid(W_r x + U_r h + b_r)
//   n  = tanh(W_n x + r * (U_n h + b_n))
//   h' = (1 - z) * n + z * h

struct GruCellView {
  ConstMatrix w_z, w_r, w_n;  // [H x I]
  ConstMatrix u_z, u_r, u_n;  // [H x H]
  std::span<const double> b_z, b_r, b_n;

  std::size_t input_size() const { return w_z.cols; }
  std::size_t hidden_size() const { return w_z.rows; }
};

struct GruCellGrad {
  MutMatrix w_z, w_r, w_n, u_z, u_r, u_n;
  std::span<double> b_z, b_r, b_n;
};

inline void add_gru_cell(ParamStore& s, const std::string& prefix, std::size_t input, std::size_t hidden) {
  for (const char* g : {"w_z", "w_r", "w_n"}) s.add(prefix + "." + g, {hidden, input});
  for (const char* g : {"u_z", "u_r", "u_n"}) s.add(prefix + "." + g, {hidden, hidden});
  for (const char* g : {"b_z", "b_r", "b_n"}) s.add(prefix + "." + g, {hidden});
}

inline GruCellView gru_view(const ParamStore& s, const std::string& prefix) {
  auto m = [&](const char* g) { return as_matrix(s[prefix + "." + g]); };
  auto v = [&](const char* g) { return s[prefix + "." + g].span(); };
  GruCellView out{m("w_z"), m("w_r"), m("w_n"), m("u_z"), m("u_r"), m("u_n"), v("b_z"), v("b_r"), v("b_n")};
  const std::size_t h = out.hidden_size(), i = out.input_size();
  for (ConstMatrix w : {out.w_r, out.w_n})
    if (w.rows != h || w.cols != i) throw ValidationError(prefix + ": inconsistent input weights");
  for (ConstMatrix u : {out.u_z, out.u_r, out.u_n})
    if (u.rows != h || u.cols != h) throw ValidationError(prefix + ": inconsistent recurrent weights");
  for (auto b : {out.b_z, out.b_r, out.b_n})
    if (b.size() != h) throw ValidationError(prefix + ": inconsistent bias");
  return out;
}

inline GruCellGrad gru_grad(ParamStore& g, const std::string& prefix) {
  auto m = [&](const char* n) { return as_matrix(g[prefix + "." + n]); };
  auto v = [&](const char* n) { return g[prefix + "." + n].span(); };
  return {m("w_z"), m("w_r"), m("w_n"), m("u_z"), m("u_r"), m("u_n"), v("b_z"), v("b_r"), v("b_n")};
}

struct GruCache {
  Vec x, h, z, r, n, q;  // q = U_n h + b_n
  Vec h_new;
};

inline GruCache gru_cell_forward(const GruCellView& p, std::span<const double> x, std::span<const double> h) {
  const std::size_t hs = p.hidden_size();
  check_len(x, p.input_size(), "gru input");
  check_len(h, hs, "gru hidden");
  GruCache c;
  c.x.assign(x.begin(), x.end());
  c.h.assign(h.begin(), h.end());
  c.z.assign(p.b_z.begin(), p.b_z.end());
  c.r.assign(p.b_r.begin(), p.b_r.end());
  c.q.assign(p.b_n.begin(), p.b_n.end());
  Vec a_n(hs, 0.0);
  gemv_add(p.w_z, x, c.z);
  gemv_add(p.u_z, h, c.z);
  gemv_add(p.w_r, x, c.r);
  gemv_add(p.u_r, h, c.r);
  gemv_add(p.u_n, h, c.q);
  gemv_add(p.w_n, x, a_n);
  c.n.resize(hs);
  c.h_new.resize(hs);
  for (std::size_t k = 0; k < hs; ++k) {
    c.z[k] = sigmoid(c.z[k]);
    c.r[k] = sigmoid(c.r[k]);
    c.n[k] = std::tanh(a_n[k] + c.r[k] * c.q[k]);
    c.h_new[k] = (1.0 - c.z[k]) * c.n[k] + c.z[k] * c.h[k];
  }
  return c;
}

// Accumulates parameter gradients into g and input/hidden gradients into
// grad_x / grad_h (both added to, not overwritten).
inline void gru_cell_backward(const GruCellView& p, const GruCache& c, std::span<const double> grad_h_new,
                              const GruCellGrad& g, std::span<double> grad_x, std::span<double> grad_h) {
  const std::size_t hs = p.hidden_size();
  check_len(grad_h_new, hs, "gru grad");
  Vec da_z(hs), da_r(hs), da_n(hs), dq(hs);
  for (std::size_t k = 0; k < hs; ++k) {
    const double gk = grad_h_new[k];
    const double dn = gk * (1.0 - c.z[k]);
    const double dz = gk * (c.h[k] - c.n[k]);
    grad_h[k] += gk * c.z[k];
    da_n[k] = dn * (1.0 - c.n[k] * c.n[k]);
    const double dr = da_n[k] * c.q[k];
    dq[k] = da_n[k] * c.r[k];
    da_z[k] = dz * c.z[k] * (1.0 - c.z[k]);
    da_r[k] = dr * c.r[k] * (1.0 - c.r[k]);
  }
  outer_add(da_z, c.x, g.w_z);
  outer_add(da_r, c.x, g.w_r);
  outer_add(da_n, c.x, g.w_n);
  outer_add(da_z, c.h, g.u_z);
  outer_add(da_r, c.h, g.u_r);
  outer_add(dq, c.h, g.u_n);
  axpy(1.0, da_z, g.b_z);
  axpy(1.0, da_r, g.b_r);
  axpy(1.0, dq, g.b_n);
  gemv_t_add(p.w_z, da_z, grad_x);
  gemv_t_add(p.w_r, da_r, grad_x);
  gemv_t_add(p.w_n, da_n, grad_x);
  gemv_t_add(p.u_z, da_z, grad_h);
  gemv_t_add(p.u_r, da_r, grad_h);
  gemv_t_add(p.u_n, dq, grad_h);
}

}  // namespace unicon::neural
