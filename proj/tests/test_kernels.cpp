#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flexclip/kernels.hpp"
#include "support.hpp"

using namespace flexclip;
using testing::random_matrix;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += (long double)a(i, p) * b(p, j);
      out(i, j) = Real(s);
    }
  return out;
}

Matrix transposed(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

void check_close(const Matrix& a, const Matrix& b, Real tol) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < tol);
}

}  // namespace

TEST_CASE("serial kernels agree with a long-double reference") {
  const Matrix a = random_matrix(7, 5, 1);
  const Matrix b = random_matrix(5, 9, 2);
  const Matrix c = random_matrix(9, 5, 3);
  const Matrix ref = naive_matmul(a, b);
  Matrix out;
  kernels::serial::matmul(a, b, out);
  check_close(out, ref, 1e-12);
  kernels::serial::matmul_tn(transposed(a), b, out);
  check_close(out, ref, 1e-12);
  kernels::serial::matmul_nt(a, c, out);
  check_close(out, naive_matmul(a, transposed(c)), 1e-12);
}

TEST_CASE("OpenMP kernels are bitwise equal to the serial reference") {
  // Sizes on both sides of the parallel threshold and off the 4-row block.
  for (auto [n, k, m] : {std::tuple{3, 5, 2}, std::tuple{64, 67, 33}, std::tuple{130, 129, 70}}) {
    const Matrix a = random_matrix(n, k, 10 + n);
    const Matrix b = random_matrix(k, m, 20 + m);
    const Matrix bt = transposed(b);
    const Matrix at = transposed(a);
    Matrix s, o;
    kernels::serial::matmul(a, b, s);
    kernels::omp::matmul(a, b, o);
    CHECK(s == o);
    kernels::serial::matmul_tn(at, b, s);
    kernels::omp::matmul_tn(at, b, o);
    CHECK(s == o);
    kernels::serial::matmul_nt(a, bt, s);
    kernels::omp::matmul_nt(a, bt, o);
    CHECK(s == o);
    const Matrix g = random_matrix(m + 3, k, 30 + k);
    kernels::serial::cosine_matrix(a, g, s);
    kernels::omp::cosine_matrix(a, g, o);
    CHECK(s == o);
  }
}

TEST_CASE("cosine_matrix values") {
  const Matrix q = Matrix::from_rows({{1, 0}, {1, 1}});
  const Matrix g = Matrix::from_rows({{2, 0}, {0, 3}, {-1, -1}});
  Matrix out;
  kernels::omp::cosine_matrix(q, g, out);
  CHECK(out(0, 0) == doctest::Approx(1.0));
  CHECK(out(0, 1) == doctest::Approx(0.0));
  CHECK(out(1, 2) == doctest::Approx(-1.0));
  CHECK(out(1, 0) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("max_threads is positive") { CHECK(kernels::max_threads() >= 1); }
