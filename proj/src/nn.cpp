#include "flexclip/nn.hpp"

#include <cmath>

#include "flexclip/errors.hpp"

namespace flexclip {

Dense::Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(in));
  weight = Parameter(name + ".weight", uniform(in, out, -bound, bound, rng));
  bias = Parameter(name + ".bias", uniform(1, out, -bound, bound, rng));
}

Var Dense::operator()(Var x) {
  Tape& t = x.tape();
  return ops::linear(x, t.parameter(weight), t.parameter(bias));
}

Var Dense::operator()(Var x) const {
  Tape& t = x.tape();
  return ops::linear(x, t.constant(weight.value), t.constant(bias.value));
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0)) throw ConfigError("Adam learning rate must be positive");
  for (Parameter* p : params) {
    if (p->grad.empty()) p->grad = Matrix(p->value.rows(), p->value.cols());
    if (p->adam_m.empty()) p->adam_m = Matrix(p->value.rows(), p->value.cols());
    if (p->adam_v.empty()) p->adam_v = Matrix(p->value.rows(), p->value.cols());
    ++p->step_count;
    const Real t = static_cast<Real>(p->step_count);
    const Real c1 = Real(1) - std::pow(cfg.beta1, t);
    const Real c2 = Real(1) - std::pow(cfg.beta2, t);
    auto w = p->value.values();
    auto g = p->grad.values();
    auto m = p->adam_m.values();
    auto v = p->adam_v.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (Real(1) - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (Real(1) - cfg.beta2) * g[i] * g[i];
      const Real mhat = m[i] / c1;
      const Real vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      g[i] = Real(0);
    }
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace flexclip
