#include "flexclip/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flexclip/errors.hpp"
#include "flexclip/kernels.hpp"

namespace flexclip::ops {

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                       shape_string(b));
}

void require_same(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error(op, a, b);
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Var unary(Var a, F f, D deriv) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(y), t.needs_grad(a), [ia, self, deriv](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(ia);
    const Matrix& yv = tp.value(self);
    Matrix ga(xv.rows(), xv.cols());
    auto gs = g.values();
    auto out = ga.values();
    auto xs2 = xv.values();
    auto ys2 = yv.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gs[i] * deriv(xs2[i], ys2[i]);
    tp.accumulate(ia, ga);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out;
  kernels::omp::matmul(av, bv, out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    if (tp.needs_grad(ia)) {
                      Matrix ga;
                      kernels::omp::matmul_nt(g, tp.value(ib), ga);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ib)) {
                      Matrix gb;
                      kernels::omp::matmul_tn(tp.value(ia), g, gb);
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  Matrix out;
  kernels::omp::matmul_nt(av, bv, out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    if (tp.needs_grad(ia)) {
                      Matrix ga;
                      kernels::omp::matmul(g, tp.value(ib), ga);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ib)) {
                      Matrix gb;
                      kernels::omp::matmul_tn(g, tp.value(ia), gb);
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id();
  return t.record(std::move(out), t.needs_grad(a), [ia](Tape& tp, const Matrix& g) {
    Matrix ga(g.cols(), g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) = g(i, j);
    tp.accumulate(ia, ga);
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (xv.cols() != wv.rows()) shape_error("linear", xv, wv);
  if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_error("linear bias", wv, bv);
  return add_row(matmul(x, weight), bias);
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same("add", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bs = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bs[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    tp.accumulate(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same("sub", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bs = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bs[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    if (tp.needs_grad(ib)) {
                      Matrix gb = g;
                      for (Real& v : gb.values()) v = -v;
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same("mul", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bs = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bs[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    auto gs = g.values();
                    if (tp.needs_grad(ia)) {
                      Matrix ga = tp.value(ib);
                      auto v = ga.values();
                      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= gs[i];
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ib)) {
                      Matrix gb = tp.value(ia);
                      auto v = gb.values();
                      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= gs[i];
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var add_row(Var a, Var r) {
  Tape& t = same_tape(a, r);
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row", av, rv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += rv(0, j);
  }
  const std::size_t ia = a.id(), ir = r.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(r),
                  [ia, ir](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    if (tp.needs_grad(ir)) {
                      Matrix gr(1, g.cols());
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                      tp.accumulate(ir, gr);
                    }
                  });
}

Var mul_row(Var a, Var r) {
  Tape& t = same_tape(a, r);
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("mul_row", av, rv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] *= rv(0, j);
  }
  const std::size_t ia = a.id(), ir = r.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(r),
                  [ia, ir](Tape& tp, const Matrix& g) {
                    const Matrix& av2 = tp.value(ia);
                    const Matrix& rv2 = tp.value(ir);
                    if (tp.needs_grad(ia)) {
                      Matrix ga = g;
                      for (std::size_t i = 0; i < ga.rows(); ++i)
                        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= rv2(0, j);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ir)) {
                      Matrix gr(1, g.cols());
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j) * av2(i, j);
                      tp.accumulate(ir, gr);
                    }
                  });
}

Var mul_col(Var a, Var c) {
  Tape& t = same_tape(a, c);
  const Matrix& av = a.value();
  const Matrix& cv = c.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) shape_error("mul_col", av, cv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (Real& v : out.row(i)) v *= cv(i, 0);
  const std::size_t ia = a.id(), ic = c.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(c),
                  [ia, ic](Tape& tp, const Matrix& g) {
                    const Matrix& av2 = tp.value(ia);
                    const Matrix& cv2 = tp.value(ic);
                    if (tp.needs_grad(ia)) {
                      Matrix ga = g;
                      for (std::size_t i = 0; i < ga.rows(); ++i)
                        for (Real& v : ga.row(i)) v *= cv2(i, 0);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ic)) {
                      Matrix gc(g.rows(), 1);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gc(i, 0) += g(i, j) * av2(i, j);
                      tp.accumulate(ic, gc);
                    }
                  });
}

Var div_col(Var a, Var c) {
  Tape& t = same_tape(a, c);
  const Matrix& av = a.value();
  const Matrix& cv = c.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) shape_error("div_col", av, cv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (Real& v : out.row(i)) v /= cv(i, 0);
  const std::size_t ia = a.id(), ic = c.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(c),
                  [ia, ic](Tape& tp, const Matrix& g) {
                    const Matrix& av2 = tp.value(ia);
                    const Matrix& cv2 = tp.value(ic);
                    if (tp.needs_grad(ia)) {
                      Matrix ga = g;
                      for (std::size_t i = 0; i < ga.rows(); ++i)
                        for (Real& v : ga.row(i)) v /= cv2(i, 0);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.needs_grad(ic)) {
                      Matrix gc(g.rows(), 1);
                      for (std::size_t i = 0; i < g.rows(); ++i) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < g.cols(); ++j) acc += g(i, j) * av2(i, j);
                        gc(i, 0) = -acc / (cv2(i, 0) * cv2(i, 0));
                      }
                      tp.accumulate(ic, gc);
                    }
                  });
}

Var broadcast_rows(Var r, std::size_t n) {
  Tape& t = r.tape();
  const Matrix& rv = r.value();
  if (rv.rows() != 1) throw DimensionError("broadcast_rows needs a row vector, got " + shape_string(rv));
  Matrix out(n, rv.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(rv.values().begin(), rv.values().end(), out.row(i).begin());
  const std::size_t ir = r.id();
  return t.record(std::move(out), t.needs_grad(r), [ir](Tape& tp, const Matrix& g) {
    Matrix gr(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    tp.accumulate(ir, gr);
  });
}

Var scale(Var a, Real s) {
  return unary(a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Var add_scalar(Var a, Real s) {
  return unary(a, [s](Real x) { return x + s; }, [](Real, Real) { return Real(1); });
}

Var one_minus(Var a) {
  return unary(a, [](Real x) { return Real(1) - x; }, [](Real, Real) { return Real(-1); });
}

Var relu(Var a) {
  return unary(a, [](Real x) { return x > 0 ? x : Real(0); },
               [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Var leaky_relu(Var a, Real slope) {
  return unary(a, [slope](Real x) { return x > 0 ? x : slope * x; },
               [slope](Real x, Real) { return x > 0 ? Real(1) : slope; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](Real x) {
        if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Var exp(Var a) {
  return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(Var a) {
  return unary(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

Var sqrt(Var a) {
  return unary(a, [](Real x) { return std::sqrt(x); },
               [](Real, Real y) { return Real(0.5) / y; });
}

Var square(Var a) {
  return unary(a, [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

Var clamp(Var a, Real lo, Real hi) {
  return unary(a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
               [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? Real(1) : Real(0); });
}

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto x = av.row(i);
    auto y = out.row(i);
    const Real mx = *std::max_element(x.begin(), x.end());
    Real s = 0;
    for (std::size_t j = 0; j < x.size(); ++j) s += (y[j] = std::exp(x[j] - mx));
    for (Real& v : y) v /= s;
  }
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), t.needs_grad(a), [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(ia, ga);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto x = av.row(i);
    auto y = out.row(i);
    const Real mx = *std::max_element(x.begin(), x.end());
    Real s = 0;
    for (Real v : x) s += std::exp(v - mx);
    const Real lse = mx + std::log(s);
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] - lse;
  }
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), t.needs_grad(a), [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      Real gs = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
    }
    tp.accumulate(ia, ga);
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
  const std::size_t ca = av.cols(), cb = bv.cols();
  Matrix out(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
                    Matrix ga(g.rows(), ca), gb(g.rows(), cb);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      auto gr = g.row(i);
                      std::copy_n(gr.begin(), ca, ga.row(i).begin());
                      std::copy_n(gr.begin() + static_cast<std::ptrdiff_t>(ca), cb, gb.row(i).begin());
                    }
                    tp.accumulate(ia, ga);
                    tp.accumulate(ib, gb);
                  });
}

Var concat_rows(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("concat_rows", av, bv);
  const std::size_t ra = av.rows(), rb = bv.rows(), c = av.cols();
  std::vector<Real> values(av.values().begin(), av.values().end());
  values.insert(values.end(), bv.values().begin(), bv.values().end());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Matrix(ra + rb, c, std::move(values)), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib, ra, rb, c](Tape& tp, const Matrix& g) {
                    auto gs = g.values();
                    tp.accumulate(ia, Matrix(ra, c, std::vector<Real>(gs.begin(), gs.begin() + static_cast<std::ptrdiff_t>(ra * c))));
                    tp.accumulate(ib, Matrix(rb, c, std::vector<Real>(gs.begin() + static_cast<std::ptrdiff_t>(ra * c), gs.end())));
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  if (begin + count > av.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(av));
  }
  Matrix out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    std::copy_n(av.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
  const std::size_t ia = a.id(), total = av.cols();
  return t.record(std::move(out), t.needs_grad(a),
                  [ia, begin, count, total](Tape& tp, const Matrix& g) {
                    Matrix ga(g.rows(), total);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      std::copy_n(g.row(i).begin(), count, ga.row(i).begin() + static_cast<std::ptrdiff_t>(begin));
                    tp.accumulate(ia, ga);
                  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  Real s = 0;
  for (Real v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  const std::size_t r = a.rows(), c = a.cols();
  return t.record(Matrix(1, 1, s), t.needs_grad(a), [ia, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean of empty array");
  return scale(sum(a), Real(1) / static_cast<Real>(n));
}

Var row_sum(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    Real s = 0;
    for (Real v : av.row(i)) s += v;
    out(i, 0) = s;
  }
  const std::size_t ia = a.id(), c = av.cols();
  return t.record(std::move(out), t.needs_grad(a), [ia, c](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), c);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (Real& v : ga.row(i)) v = g(i, 0);
    tp.accumulate(ia, ga);
  });
}

Var row_norm(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    Real s = 0;
    for (Real v : av.row(i)) s += v * v;
    out(i, 0) = std::sqrt(s);
  }
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), t.needs_grad(a), [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    const Matrix& nrm = tp.value(self);
    Matrix ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (nrm(i, 0) == Real(0)) continue;
      const Real f = g(i, 0) / nrm(i, 0);
      for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = f * x(i, j);
    }
    tp.accumulate(ia, ga);
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  if (index.size() != av.rows()) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                         shape_string(av));
  }
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    if (index[i] >= av.cols()) throw DimensionError("pick: column index out of range");
    out(i, 0) = av(i, index[i]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id(), c = av.cols();
  return t.record(std::move(out), t.needs_grad(a),
                  [ia, c, idx = std::move(idx)](Tape& tp, const Matrix& g) {
                    Matrix ga(g.rows(), c);
                    for (std::size_t i = 0; i < g.rows(); ++i) ga(i, idx[i]) = g(i, 0);
                    tp.accumulate(ia, ga);
                  });
}

}  // namespace flexclip::ops
