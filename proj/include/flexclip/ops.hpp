#pragma once

// Differentiable primitives recorded on a Tape. Binary operations require
// both operands on the same tape; shape mismatches throw DimensionError
// naming both shapes.

#include <cstddef>
#include <span>
#include <vector>

#include "flexclip/tape.hpp"

namespace flexclip::ops {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

/// x W + b with b broadcast over rows.
Var linear(Var x, Var weight, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (n x d) + r (1 x d) broadcast over rows.
Var add_row(Var a, Var r);
/// a (n x d) * r (1 x d) broadcast over rows.
Var mul_row(Var a, Var r);
/// a (n x d) * c (n x 1) broadcast over columns.
Var mul_col(Var a, Var c);
/// a (n x d) / c (n x 1) broadcast over columns.
Var div_col(Var a, Var c);
/// Repeats a 1 x d row n times.
Var broadcast_rows(Var r, std::size_t n);

Var scale(Var a, Real s);
Var add_scalar(Var a, Real s);
/// 1 - a
Var one_minus(Var a);

Var relu(Var a);
Var leaky_relu(Var a, Real slope = Real(0.2));
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
/// Clamps into [lo, hi]; gradient is zero where clamped.
Var clamp(Var a, Real lo, Real hi);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

/// Sum of all elements, 1 x 1.
Var sum(Var a);
/// Mean of all elements, 1 x 1.
Var mean(Var a);
/// Per-row sums, n x 1.
Var row_sum(Var a);
/// Per-row Euclidean norm, n x 1. The subgradient at a zero row is zero.
Var row_norm(Var a);
/// out[i] = a[i, index[i]], n x 1.
Var pick(Var a, std::span<const std::size_t> index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Real s, Var a) { return scale(a, s); }

}  // namespace flexclip::ops
