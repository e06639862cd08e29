#pragma once

#include "pmlds/core.hpp"

namespace pmlds::linalg {

/// Symmetric square root via eigendecomposition. Eigenvalues in
/// [-1e-12 * trace, 0) are clipped to zero; anything more negative throws
/// NumericalError.
Matrix sym_sqrt(const Matrix& S);

/// True when S is symmetric (1e-12 relative) and every eigenvalue is > 0.
bool is_spd(const Matrix& S);

/// log|S| through a Cholesky factor; throws NumericalError if S is not PD.
double log_det_spd(const Matrix& S);

/// Block-diagonal assembly.
Matrix block_diag(const std::vector<Matrix>& blocks);

/// log N(x | mean, cov) with a Cholesky factorization of cov.
double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov);

/// log(sum(exp(v))) with max shift; -inf for empty or all -inf input.
double log_sum_exp(const std::vector<double>& v);

}  // namespace pmlds::linalg
