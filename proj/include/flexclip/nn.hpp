#pragma once

#include <span>
#include <string>
#include <vector>

#include "flexclip/ops.hpp"
#include "flexclip/rng.hpp"
#include "flexclip/tape.hpp"

namespace flexclip {

/// Fully-connected layer y = x W + b.
///
/// The non-const call binds the weights as trainable parameters; the const
/// call records them as constants, which is what inference and the frozen
/// side of an adversarial step use.
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization for weight and bias.
  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  Var operator()(Var x);
  Var operator()(Var x) const;

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void collect(std::vector<const Parameter*>& out) const {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  bool operator==(const Dense&) const = default;
};

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// One bias-corrected Adam update of every parameter, then zeroes gradients.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);

void zero_grad(std::span<Parameter* const> params);

}  // namespace flexclip
