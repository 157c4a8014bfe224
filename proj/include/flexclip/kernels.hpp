#pragma once

// Dense kernels used by the tape. Each kernel has a serial reference and an
// OpenMP version. Both accumulate every output element in the same order, so
// their results are bitwise identical; the serial versions exist for tests and
// for the benchmark comparison.

#include <cstddef>
#include <span>

#include "flexclip/matrix.hpp"

namespace flexclip::kernels {

namespace serial {

/// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a^T * b
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a * b^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);

/// Cosine similarity of every query row against every gallery row.
/// Rows must be nonzero; callers validate.
void cosine_matrix(const Matrix& queries, const Matrix& gallery, Matrix& out);

}  // namespace serial

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
void cosine_matrix(const Matrix& queries, const Matrix& gallery, Matrix& out);

}  // namespace omp

/// Number of threads the OpenMP kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace flexclip::kernels
