#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace pmlds {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejected input: bad dimensions, invalid parameters, malformed config.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent data (ragged CSV, non-finite values, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// A factorization, fixed point or filter broke down.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Every particle weight underflowed to zero.
class DegenerateCloud : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Run configuration shared by filtering, learning and prediction.
struct ModelConfig {
    int M = 1;            // latent experts
    int K = 1;            // latent dimension per expert
    int d = 1;            // observable dimension
    double dt = 1.0;      // observation time step
    int L = 2;            // EM block length
    int N = 2;            // particles
    double gamma_exponent = 0.51;
    double ess_min_fraction = 0.5;
    std::uint64_t seed = 0;

    /// Throws InvalidArgument when any invariant is violated.
    void validate() const;

    [[nodiscard]] int latent_dim() const { return M * K; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig load_config(const std::string& path);
void save_config(const std::string& path, const ModelConfig& c);

/// Parameters (b, q, S) of an Ornstein-Uhlenbeck process
///   dx = -b (x - q) dt + S^{1/2} dW.
/// Construction validates b > 0 and S symmetric positive-definite.
class OuParams {
public:
    OuParams(double b, Vector q, Matrix S);

    [[nodiscard]] double b() const { return b_; }
    [[nodiscard]] const Vector& q() const { return q_; }
    [[nodiscard]] const Matrix& S() const { return S_; }
    [[nodiscard]] int dim() const { return static_cast<int>(q_.size()); }

    /// Isotropic convenience constructor: q = q0 * ones, S = s * I.
    static OuParams isotropic(int n, double b, double q0, double s);

private:
    double b_;
    Vector q_;
    Matrix S_;
};

void to_json(nlohmann::json& j, const OuParams& p);
OuParams ou_params_from_json(const nlohmann::json& j);

/// Static (time-invariant) model parameters.
struct StaticParams {
    std::vector<OuParams> ou_x;  // M experts, each of dimension K
    OuParams ou_z;               // membership driver, dimension M
    std::vector<Matrix> P;       // M projections, each d x K
    Vector sigma2;               // d diagonal emission variances

    [[nodiscard]] int M() const { return static_cast<int>(ou_x.size()); }
    [[nodiscard]] int K() const { return ou_x.empty() ? 0 : ou_x.front().dim(); }
    [[nodiscard]] int d() const { return static_cast<int>(sigma2.size()); }

    void validate() const;
    /// Also checks (M, K, d) against a config; the message names both sides.
    void validate_against(const ModelConfig& c) const;
};

void to_json(nlohmann::json& j, const StaticParams& s);
StaticParams static_params_from_json(const nlohmann::json& j);

/// Dynamic state at one time step: stacked experts X (length M*K) and the
/// membership driver zhat (length M).
struct LatentState {
    Vector X;
    Vector zhat;

    [[nodiscard]] bool finite() const { return X.allFinite() && zhat.allFinite(); }
    /// Expert m as a K-vector view.
    [[nodiscard]] auto expert(int m, int K) const { return X.segment(m * K, K); }
};

struct Gaussian {
    Vector mean;
    Matrix cov;

    /// Symmetric within 1e-12 relative; eigenvalues >= -1e-12 * trace.
    [[nodiscard]] bool valid() const;
};

// JSON helpers for Eigen objects (row-major nested arrays).
nlohmann::json to_json_vector(const Vector& v);
nlohmann::json to_json_matrix(const Matrix& m);
Vector vector_from_json(const nlohmann::json& j);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace pmlds
