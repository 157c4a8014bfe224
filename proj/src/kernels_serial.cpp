#include <cmath>

#include "flexclip/kernels.hpp"

namespace flexclip::kernels::serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a(i, p);
      const auto br = b.row(p);
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * br[j];
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const Real api = a(p, i);
      const auto br = b.row(p);
      for (std::size_t j = 0; j < m; ++j) o[j] += api * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto br = b.row(j);
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
}

void cosine_matrix(const Matrix& queries, const Matrix& gallery, Matrix& out) {
  const std::size_t nq = queries.rows(), ng = gallery.rows(), d = queries.cols();
  out = Matrix(nq, ng);
  std::vector<Real> gnorm(ng);
  for (std::size_t j = 0; j < ng; ++j) {
    Real s = 0;
    for (Real v : gallery.row(j)) s += v * v;
    gnorm[j] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < nq; ++i) {
    const auto q = queries.row(i);
    Real qs = 0;
    for (Real v : q) qs += v * v;
    const Real qn = std::sqrt(qs);
    for (std::size_t j = 0; j < ng; ++j) {
      const auto g = gallery.row(j);
      Real dot = 0;
      for (std::size_t p = 0; p < d; ++p) dot += q[p] * g[p];
      out(i, j) = dot / (qn * gnorm[j]);
    }
  }
}

}  // namespace flexclip::kernels::serial
