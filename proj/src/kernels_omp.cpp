#include <cmath>
#include <cstdint>

#include "flexclip/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexclip::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::int64_t kParallelWork = 1 << 15;

// o[j] += sum_p coeff(p) * rows[p][j] for p = 0..k-1, added in ascending p.
// Four rows per pass keep o[j] in a register; the addition order per
// element is unchanged.
template <class Coeff, class Row>
inline void accumulate_rows(Real* __restrict o, std::size_t m, std::size_t k, Coeff coeff,
                            Row row) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const Real c0 = coeff(p), c1 = coeff(p + 1), c2 = coeff(p + 2), c3 = coeff(p + 3);
    const Real* __restrict b0 = row(p);
    const Real* __restrict b1 = row(p + 1);
    const Real* __restrict b2 = row(p + 2);
    const Real* __restrict b3 = row(p + 3);
    for (std::size_t j = 0; j < m; ++j) {
      Real acc = o[j];
      acc += c0 * b0[j];
      acc += c1 * b1[j];
      acc += c2 * b2[j];
      acc += c3 * b3[j];
      o[j] = acc;
    }
  }
  for (; p < k; ++p) {
    const Real c = coeff(p);
    const Real* __restrict b = row(p);
    for (std::size_t j = 0; j < m; ++j) o[j] += c * b[j];
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  const auto n = static_cast<std::int64_t>(a.rows());
  const std::size_t k = a.cols(), m = b.cols();
  out = Matrix(a.rows(), m);
  const bool big = n * static_cast<std::int64_t>(k * m) > kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < n; ++i) {
    Real* o = out.row(static_cast<std::size_t>(i)).data();
    const Real* ar = a.row(static_cast<std::size_t>(i)).data();
    accumulate_rows(
        o, m, k, [ar](std::size_t p) { return ar[p]; },
        [&b](std::size_t p) { return b.row(p).data(); });
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.rows(), m = b.cols();
  const auto n = static_cast<std::int64_t>(a.cols());
  out = Matrix(a.cols(), m);
  const bool big = n * static_cast<std::int64_t>(k * m) > kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < n; ++i) {
    Real* o = out.row(static_cast<std::size_t>(i)).data();
    const auto col = static_cast<std::size_t>(i);
    accumulate_rows(
        o, m, k, [&a, col](std::size_t p) { return a(p, col); },
        [&b](std::size_t p) { return b.row(p).data(); });
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  const auto n = static_cast<std::int64_t>(a.rows());
  const std::size_t k = a.cols(), m = b.rows();
  out = Matrix(a.rows(), m);
  // b^T laid out row-major so the inner loop runs contiguously; each output
  // element still sums p = 0..k-1 in order.
  Matrix bt(k, m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt(p, j) = b(j, p);
  const bool big = n * static_cast<std::int64_t>(k * m) > kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < n; ++i) {
    const Real* ar = a.row(static_cast<std::size_t>(i)).data();
    Real* o = out.row(static_cast<std::size_t>(i)).data();
    accumulate_rows(
        o, m, k, [ar](std::size_t p) { return ar[p]; },
        [&bt](std::size_t p) { return bt.row(p).data(); });
  }
}

void cosine_matrix(const Matrix& queries, const Matrix& gallery, Matrix& out) {
  const auto nq = static_cast<std::int64_t>(queries.rows());
  const auto ng = static_cast<std::int64_t>(gallery.rows());
  const std::size_t d = queries.cols();
  out = Matrix(queries.rows(), gallery.rows());
  std::vector<Real> gnorm(gallery.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < ng; ++j) {
    Real s = 0;
    for (Real v : gallery.row(static_cast<std::size_t>(j))) s += v * v;
    gnorm[static_cast<std::size_t>(j)] = std::sqrt(s);
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < nq; ++i) {
    const auto q = queries.row(static_cast<std::size_t>(i));
    Real qs = 0;
    for (Real v : q) qs += v * v;
    const Real qn = std::sqrt(qs);
    for (std::int64_t j = 0; j < ng; ++j) {
      const auto g = gallery.row(static_cast<std::size_t>(j));
      Real dot = 0;
      for (std::size_t p = 0; p < d; ++p) dot += q[p] * g[p];
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          dot / (qn * gnorm[static_cast<std::size_t>(j)]);
    }
  }
}

}  // namespace omp
}  // namespace flexclip::kernels
