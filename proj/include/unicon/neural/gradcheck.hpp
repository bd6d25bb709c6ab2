#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "unicon/neural/params.hpp"

namespace unicon::neural {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares an analytic gradient against central differences, entry by entry:
//   |analytic - numeric| / max(1, |numeric|)
inline GradCheckReport grad_check(const std::function<double(const ParamStore&)>& f, const ParamStore& params,
                                  const ParamStore& analytic, double h = 1e-5) {
  if (!analytic.same_layout(params)) throw ValidationError("grad_check: gradient layout differs from parameters");
  GradCheckReport rep;
  ParamStore probe = params;
  for (auto& [name, t] : probe) {
    const Tensor& g = analytic[name];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f(probe);
      t[i] = orig - h;
      const double fm = f(probe);
      t[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValidationError("grad_check: non-finite function value at " + name + "[" + std::to_string(i) + "]");
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++rep.checked;
      if (rep.worst_param.empty() || err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = name;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

}  // namespace unicon::neural
