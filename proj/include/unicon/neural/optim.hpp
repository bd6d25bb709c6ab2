#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "unicon/neural/layers.hpp"
#include "unicon/neural/params.hpp"

namespace unicon::neural {

struct BceResult {
  double loss = 0.0;
  Vec grad_logits;
};

// Mean binary cross-entropy on logits, log-sum-exp stable:
//   max(l, 0) - l*y + log(1 + exp(-|l|))
inline BceResult bce_mean(std::span<const double> logits, std::span<const int> labels) {
  if (logits.empty()) throw ValidationError("bce_mean: empty input");
  if (logits.size() != labels.size()) throw ValidationError("bce_mean: logits/labels length mismatch");
  const double inv_t = 1.0 / static_cast<double>(logits.size());
  BceResult out;
  out.grad_logits.resize(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const double l = logits[t];
    const double y = labels[t];
    out.loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    out.grad_logits[t] = (sigmoid(l) - y) * inv_t;
  }
  out.loss *= inv_t;
  return out;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWConfig config;
  ParamStore m;
  ParamStore v;
  long step = 0;

  AdamWState() = default;
  AdamWState(const ParamStore& params, AdamWConfig cfg)
      : config(cfg), m(params.zeros_like()), v(params.zeros_like()) {}
};

// One decoupled-weight-decay Adam step:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * theta)
inline void adamw_step(ParamStore& params, const ParamStore& grads, AdamWState& state, double lr) {
  for (const auto& [name, t] : params)
    if (!grads.contains(name)) throw ValidationError("adamw_step: missing gradient for " + name);
  if (!state.m.same_layout(params)) throw ValidationError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    const Tensor& g = grads[name];
    if (g.shape() != theta.shape()) throw ValidationError("adamw_step: gradient shape mismatch for " + name);
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * theta[i]);
    }
  }
}

struct LrSchedule {
  double max_lr = 5e-4;
  double warmup_epochs = 10;
  double total_epochs = 60;
};

// Linear warmup from 0 to max_lr, then half-cosine decay to 0.
inline double cosine_warmup_lr(const LrSchedule& s, double epoch) {
  if (!(s.warmup_epochs > 0 && s.warmup_epochs < s.total_epochs))
    throw ValidationError("lr schedule needs 0 < warmup_epochs < total_epochs");
  if (!(epoch >= 0.0 && epoch <= s.total_epochs))
    throw ValidationError("epoch " + std::to_string(epoch) + " outside schedule range");
  if (epoch <= s.warmup_epochs) return s.max_lr * epoch / s.warmup_epochs;
  const double progress = (epoch - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs);
  return s.max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace unicon::neural
