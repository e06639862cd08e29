#include "pmlds/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace pmlds::linalg {

Matrix sym_sqrt(const Matrix& S)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition failed");
    }
    Vector ev = es.eigenvalues();
    const double tol = 1e-12 * std::abs(S.trace());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < 0.0) {
            if (ev[i] < -tol) {
                throw NumericalError("matrix square root of an indefinite matrix");
            }
            ev[i] = 0.0;
        }
    }
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

bool is_spd(const Matrix& S)
{
    if (S.rows() != S.cols() || S.size() == 0 || !S.allFinite()) {
        return false;
    }
    const double scale = S.cwiseAbs().maxCoeff();
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        return false;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

double log_det_spd(const Matrix& S)
{
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("Cholesky factorization failed");
    }
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix block_diag(const std::vector<Matrix>& blocks)
{
    Eigen::Index n = 0;
    for (const auto& b : blocks) {
        n += b.rows();
    }
    Matrix out = Matrix::Zero(n, n);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.block(at, at, b.rows(), b.cols()) = b;
        at += b.rows();
    }
    return out;
}

double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov)
{
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance is not positive-definite");
    }
    const Vector r = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det + r.squaredNorm());
}

double log_sum_exp(const std::vector<double>& v)
{
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        mx = std::max(mx, x);
    }
    if (!std::isfinite(mx)) {
        return mx;
    }
    double s = 0.0;
    for (double x : v) {
        s += std::exp(x - mx);
    }
    return mx + std::log(s);
}

}  // namespace pmlds::linalg
