#include "pmlds/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pmlds/linalg.hpp"

namespace pmlds {

void ModelConfig::validate() const
{
    if (M < 1 || K < 1 || d < 1) {
        throw InvalidArgument(fmt::format("config: M, K, d must be >= 1 (got M={}, K={}, d={})", M, K, d));
    }
    if (L < 2) {
        throw InvalidArgument(fmt::format("config: L must be >= 2 (got {})", L));
    }
    if (N < 2) {
        throw InvalidArgument(fmt::format("config: N must be >= 2 (got {})", N));
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw InvalidArgument(fmt::format("config: dt must be positive (got {})", dt));
    }
    if (!(gamma_exponent > 0.5 && gamma_exponent <= 1.0)) {
        throw InvalidArgument(fmt::format("config: gamma_exponent must lie in (0.5, 1] (got {})", gamma_exponent));
    }
    if (!(ess_min_fraction > 0.0 && ess_min_fraction <= 1.0)) {
        throw InvalidArgument(fmt::format("config: ess_min_fraction must lie in (0, 1] (got {})", ess_min_fraction));
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = nlohmann::json{{"M", c.M},
                       {"K", c.K},
                       {"d", c.d},
                       {"dt", c.dt},
                       {"L", c.L},
                       {"N", c.N},
                       {"gamma_exponent", c.gamma_exponent},
                       {"ess_min_fraction", c.ess_min_fraction},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c)
{
    ModelConfig out;
    static const char* known[] = {"M", "K", "d", "dt", "L", "N", "gamma_exponent", "ess_min_fraction", "seed"};
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            ok = ok || key == k;
        }
        if (!ok) {
            throw InvalidArgument(fmt::format("config: unknown field '{}'", key));
        }
    }
    try {
        out.M = j.value("M", out.M);
        out.K = j.value("K", out.K);
        out.d = j.value("d", out.d);
        out.dt = j.value("dt", out.dt);
        out.L = j.value("L", out.L);
        out.N = j.value("N", out.N);
        out.gamma_exponent = j.value("gamma_exponent", out.gamma_exponent);
        out.ess_min_fraction = j.value("ess_min_fraction", out.ess_min_fraction);
        out.seed = j.value("seed", out.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(fmt::format("config: {}", e.what()));
    }
    c = out;
}

ModelConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgument(fmt::format("cannot open config '{}'", path));
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(fmt::format("config '{}': {}", path, e.what()));
    }
    auto c = j.get<ModelConfig>();
    c.validate();
    return c;
}

void save_config(const std::string& path, const ModelConfig& c)
{
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write '{}'", path));
    }
    out << nlohmann::json(c).dump(2) << '\n';
}

OuParams::OuParams(double b, Vector q, Matrix S) : b_(b), q_(std::move(q)), S_(std::move(S))
{
    if (!(b_ > 0.0) || !std::isfinite(b_)) {
        throw InvalidArgument(fmt::format("OU parameters: b must be positive and finite (got {})", b_));
    }
    if (q_.size() == 0 || S_.rows() != q_.size() || S_.cols() != q_.size()) {
        throw InvalidArgument(fmt::format("OU parameters: q has {} entries but S is {}x{}", q_.size(), S_.rows(),
                                          S_.cols()));
    }
    if (!q_.allFinite()) {
        throw InvalidArgument("OU parameters: q must be finite");
    }
    if (!linalg::is_spd(S_)) {
        throw InvalidArgument("OU parameters: S must be symmetric positive-definite");
    }
}

OuParams OuParams::isotropic(int n, double b, double q0, double s)
{
    return {b, Vector::Constant(n, q0), s * Matrix::Identity(n, n)};
}

nlohmann::json to_json_vector(const Vector& v)
{
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

nlohmann::json to_json_matrix(const Matrix& m)
{
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Vector r = m.row(i).transpose();
        rows.push_back(to_json_vector(r));
    }
    return rows;
}

Vector vector_from_json(const nlohmann::json& j)
{
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) {
        return Matrix(0, 0);
    }
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) {
            throw DataError("ragged matrix in JSON");
        }
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
    }
    return m;
}

void to_json(nlohmann::json& j, const OuParams& p)
{
    j = nlohmann::json{{"b", p.b()}, {"q", to_json_vector(p.q())}, {"S", to_json_matrix(p.S())}};
}

OuParams ou_params_from_json(const nlohmann::json& j)
{
    return {j.at("b").get<double>(), vector_from_json(j.at("q")), matrix_from_json(j.at("S"))};
}

void StaticParams::validate() const
{
    const int m = M();
    if (m < 1) {
        throw InvalidArgument("statics: at least one expert required");
    }
    if (static_cast<int>(P.size()) != m) {
        throw InvalidArgument(fmt::format("statics: {} projections for {} experts", P.size(), m));
    }
    if (ou_z.dim() != m) {
        throw InvalidArgument(fmt::format("statics: membership driver has dimension {} for {} experts", ou_z.dim(), m));
    }
    const int k = K();
    for (int i = 0; i < m; ++i) {
        if (ou_x[i].dim() != k) {
            throw InvalidArgument("statics: experts must share one latent dimension");
        }
        if (P[i].rows() != d() || P[i].cols() != k) {
            throw InvalidArgument(fmt::format("statics: projection {} is {}x{}, expected {}x{}", i, P[i].rows(),
                                              P[i].cols(), d(), k));
        }
        if (!P[i].allFinite()) {
            throw InvalidArgument("statics: projections must be finite");
        }
    }
    if (!(sigma2.array() > 0.0).all() || !sigma2.allFinite()) {
        throw InvalidArgument("statics: emission variances must be positive and finite");
    }
}

void StaticParams::validate_against(const ModelConfig& c) const
{
    validate();
    if (M() != c.M || K() != c.K || d() != c.d) {
        throw InvalidArgument(fmt::format("dimension mismatch: parameters have (M={}, K={}, d={}), config has "
                                          "(M={}, K={}, d={})",
                                          M(), K(), d(), c.M, c.K, c.d));
    }
}

void to_json(nlohmann::json& j, const StaticParams& s)
{
    auto experts = nlohmann::json::array();
    for (const auto& p : s.ou_x) {
        experts.push_back(p);
    }
    auto proj = nlohmann::json::array();
    for (const auto& p : s.P) {
        proj.push_back(to_json_matrix(p));
    }
    j = nlohmann::json{{"ou_x", experts}, {"ou_z", s.ou_z}, {"P", proj}, {"sigma2", to_json_vector(s.sigma2)}};
}

StaticParams static_params_from_json(const nlohmann::json& j)
{
    std::vector<OuParams> experts;
    for (const auto& e : j.at("ou_x")) {
        experts.push_back(ou_params_from_json(e));
    }
    std::vector<Matrix> proj;
    for (const auto& p : j.at("P")) {
        proj.push_back(matrix_from_json(p));
    }
    StaticParams s{std::move(experts), ou_params_from_json(j.at("ou_z")), std::move(proj),
                   vector_from_json(j.at("sigma2"))};
    s.validate();
    return s;
}

bool Gaussian::valid() const
{
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
        return false;
    }
    const double scale = std::max(cov.cwiseAbs().maxCoeff(), 1e-300);
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        return false;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -1e-12 * std::abs(cov.trace());
}

}  // namespace pmlds
