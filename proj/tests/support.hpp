#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "flexclip/matrix.hpp"
#include "flexclip/rng.hpp"
#include "flexclip/tape.hpp"

namespace flexclip::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, Real scale = 1) {
  Rng rng(seed);
  Matrix m = standard_normal(r, c, rng);
  for (Real& v : m.values()) v *= scale;
  return m;
}

inline std::string fmt_real(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", static_cast<double>(v));
  return buf;
}

struct GradCheck {
  std::string worst_parameter;
  Real max_rel_error = 0;
  /// Largest relative error before the roundoff discount.
  Real max_raw_rel_error = 0;
  Real worst_analytic = 0;
  Real worst_numeric = 0;
  std::size_t checked = 0;
};

// Builds the loss on a fresh tape; must be a pure function of the parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares tape gradients with central differences for every element of
/// every parameter. Relative error is |a - n| / max(|a|, |n|, floor), after
/// discounting the roundoff bound of the difference quotient.
inline GradCheck check_gradients(const std::vector<Parameter*>& params, const LossBuilder& build,
                                 Real h = Real(1e-6), Real floor = Real(1e-6)) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  GradCheck out;
  auto eval = [&] {
    Tape t;
    return build(t).scalar();
  };
  for (Parameter* p : params) {
    auto values = p->value.values();
    const auto grads = p->grad.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real keep = values[i];
      values[i] = keep + h;
      const Real up = eval();
      values[i] = keep - h;
      const Real down = eval();
      values[i] = keep;
      const Real numeric = (up - down) / (2 * h);
      const Real analytic = grads[i];
      const Real denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const Real noise = 16 * std::numeric_limits<Real>::epsilon() *
                         std::max({std::abs(up), std::abs(down), Real(1)}) / h;
      const Real rel = std::max(std::abs(analytic - numeric) - noise, Real(0)) / denom;
      out.max_raw_rel_error = std::max(out.max_raw_rel_error, std::abs(analytic - numeric) / denom);
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_parameter = p->name + "[" + std::to_string(i) + "] analytic " +
                              fmt_real(analytic) + " numeric " + fmt_real(numeric);
        out.worst_analytic = analytic;
        out.worst_numeric = numeric;
      }
      ++out.checked;
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return out;
}

}  // namespace flexclip::testing
