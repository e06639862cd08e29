#pragma once

// Independent oracles and fixtures shared by the test binaries. Nothing in
// here calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "pmlds/core.hpp"

namespace testing {

using pmlds::Matrix;
using pmlds::Vector;

inline Matrix random_spd(int n, std::mt19937_64& g, double jitter = 0.5)
{
    std::normal_distribution<double> nd;
    Matrix A(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            A(i, j) = nd(g);
        }
    }
    Matrix S = A * A.transpose() / n + jitter * Matrix::Identity(n, n);
    return 0.5 * (S + S.transpose());
}

inline Vector random_vector(int n, std::mt19937_64& g, double scale = 1.0)
{
    std::normal_distribution<double> nd(0.0, scale);
    Vector v(n);
    for (int i = 0; i < n; ++i) {
        v[i] = nd(g);
    }
    return v;
}

inline Matrix random_matrix(int r, int c, std::mt19937_64& g, double scale = 1.0)
{
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            m(i, j) = nd(g);
        }
    }
    return m;
}

/// Composite trapezoid rule on [a, b] with n intervals.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = 0.5 * (f(a) + f(b));
    for (int i = 1; i < n; ++i) {
        s += f(a + i * h);
    }
    return s * h;
}

/// Scalar normal log-density.
inline double normal_log_pdf(double x, double mean, double var)
{
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

/// Nelder-Mead simplex minimizer (Lagarias et al. coefficients).
inline Vector nelder_mead(const std::function<double(const Vector&)>& f, Vector x0, double step, double ftol,
                          int max_iter)
{
    const auto n = x0.size();
    std::vector<Vector> pts{x0};
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector p = x0;
        p[i] += step;
        pts.push_back(p);
    }
    std::vector<double> vals;
    for (const auto& p : pts) {
        vals.push_back(f(p));
    }
    for (int it = 0; it < max_iter; ++it) {
        std::vector<std::size_t> idx(pts.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
        std::vector<Vector> sp;
        std::vector<double> sv;
        for (auto i : idx) {
            sp.push_back(pts[i]);
            sv.push_back(vals[i]);
        }
        pts = sp;
        vals = sv;
        double spread = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i) {
            spread = std::max(spread, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
        }
        if (std::abs(vals.back() - vals.front()) <= ftol * (std::abs(vals.front()) + 1e-300) && spread < 1e-10) {
            break;
        }
        Vector centroid = Vector::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            centroid += pts[static_cast<std::size_t>(i)];
        }
        centroid /= static_cast<double>(n);
        const Vector& worst = pts.back();
        const Vector xr = centroid + (centroid - worst);
        const double fr = f(xr);
        if (fr < vals.front()) {
            const Vector xe = centroid + 2.0 * (centroid - worst);
            const double fe = f(xe);
            if (fe < fr) {
                pts.back() = xe;
                vals.back() = fe;
            } else {
                pts.back() = xr;
                vals.back() = fr;
            }
        } else if (fr < vals[vals.size() - 2]) {
            pts.back() = xr;
            vals.back() = fr;
        } else {
            const bool outside = fr < vals.back();
            const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                                      : Vector(centroid + 0.5 * (worst - centroid));
            const double fc = f(xc);
            if (fc < (outside ? fr : vals.back())) {
                pts.back() = xc;
                vals.back() = fc;
            } else {
                for (std::size_t i = 1; i < pts.size(); ++i) {
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
                    vals[i] = f(pts[i]);
                }
            }
        }
    }
    return pts[static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin())];
}

/// Asymptotic Kolmogorov-Smirnov p-value for the statistic D over n samples.
inline double ks_pvalue(double D, std::size_t n)
{
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * D;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    }
    return std::clamp(p, 0.0, 1.0);
}

/// KS statistic of samples against N(mean, var).
inline double ks_normal(std::vector<double> xs, double mean, double var)
{
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double D = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double F = 0.5 * std::erfc(-(xs[i] - mean) / std::sqrt(2.0 * var));
        D = std::max({D, F - i / n, (i + 1) / n - F});
    }
    return D;
}

/// Linear-Gaussian state-space model
///   x_1 ~ N(m0, P0),  x_t = F x_{t-1} + u + w,  w ~ N(0, Q),
///   y_t = H x_t + v,   v ~ N(0, R).
struct LinearGaussian {
    Matrix F;
    Vector u;
    Matrix Q;
    Matrix H;
    Matrix R;
    Vector m0;
    Matrix P0;
};

struct KalmanResult {
    std::vector<Vector> mean;       // filtered
    std::vector<Matrix> cov;
    std::vector<Vector> pred_mean;  // one-step predicted (before y_t)
    std::vector<Matrix> pred_cov;
    std::vector<double> log_evidence;  // log p(y_t | y_{1:t-1})
};

inline KalmanResult kalman_filter(const LinearGaussian& m, const Matrix& ys)
{
    KalmanResult r;
    Vector mp = m.m0;
    Matrix Pp = m.P0;
    for (Eigen::Index t = 0; t < ys.rows(); ++t) {
        if (t > 0) {
            mp = m.F * r.mean.back() + m.u;
            Pp = m.F * r.cov.back() * m.F.transpose() + m.Q;
        }
        r.pred_mean.push_back(mp);
        r.pred_cov.push_back(Pp);
        const Vector y = ys.row(t).transpose();
        const Matrix Sy = m.H * Pp * m.H.transpose() + m.R;
        const Vector innov = y - m.H * mp;
        Eigen::LLT<Matrix> llt(Sy);
        const Matrix Kg = Pp * m.H.transpose() * llt.solve(Matrix::Identity(Sy.rows(), Sy.cols()));
        r.mean.push_back(mp + Kg * innov);
        Matrix P = (Matrix::Identity(Pp.rows(), Pp.cols()) - Kg * m.H) * Pp;
        r.cov.push_back(0.5 * (P + P.transpose()));
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        r.log_evidence.push_back(-0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) + logdet +
                                         innov.dot(llt.solve(innov))));
    }
    return r;
}

struct SmootherResult {
    std::vector<Vector> mean;
    std::vector<Matrix> cov;
};

inline SmootherResult rts_smoother(const LinearGaussian& m, const KalmanResult& kf)
{
    const auto T = kf.mean.size();
    SmootherResult s;
    s.mean.resize(T);
    s.cov.resize(T);
    s.mean[T - 1] = kf.mean[T - 1];
    s.cov[T - 1] = kf.cov[T - 1];
    for (std::size_t k = T - 1; k-- > 0;) {
        const Matrix& Pn = kf.pred_cov[k + 1];
        const Matrix G = kf.cov[k] * m.F.transpose() * Pn.inverse();
        s.mean[k] = kf.mean[k] + G * (s.mean[k + 1] - kf.pred_mean[k + 1]);
        s.cov[k] = kf.cov[k] + G * (s.cov[k + 1] - Pn) * G.transpose();
    }
    return s;
}

}  // namespace testing
