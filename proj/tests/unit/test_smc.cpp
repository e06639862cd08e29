#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pmlds/emission.hpp"
#include "pmlds/finescale.hpp"
#include "pmlds/parallel.hpp"
#include "pmlds/smc.hpp"
#include "support.hpp"

using namespace pmlds;

namespace {

/// Single expert, single latent dimension: the model is linear-Gaussian.
StaticParams scalar_statics(int d, std::mt19937_64& g)
{
    std::uniform_real_distribution<> u(0.0, 1.0);
    return {{OuParams::isotropic(1, 0.2 + u(g), 2.0 * u(g) - 1.0, 0.5 + u(g))},
            OuParams::isotropic(1, 1.0, 0.0, 1.0),
            {testing::random_matrix(d, 1, g)},
            (0.2 + Eigen::ArrayXd::Random(d).abs()).matrix()};
}

testing::LinearGaussian as_linear_gaussian(const StaticParams& s, double dt)
{
    const auto& p = s.ou_x.front();
    const double a = std::exp(-p.b() * dt);
    testing::LinearGaussian m;
    m.F = Matrix::Constant(1, 1, a);
    m.u = (1.0 - a) * p.q();
    m.Q = p.S() * (1.0 - a * a) / (2.0 * p.b());
    m.H = s.P.front();
    m.R = s.sigma2.asDiagonal();
    m.m0 = p.q();
    m.P0 = p.S() / (2.0 * p.b());
    return m;
}

ModelConfig config_for(const StaticParams& s, int N, int L)
{
    ModelConfig c;
    c.M = s.M();
    c.K = s.K();
    c.d = s.d();
    c.N = N;
    c.L = L;
    return c;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments weighted_moments(const smc::ParticleCloud& c)
{
    Moments m;
    for (const auto& p : c.particles) {
        m.mean += std::exp(p.log_weight) * p.state.X[0];
    }
    for (const auto& p : c.particles) {
        const double r = p.state.X[0] - m.mean;
        m.var += std::exp(p.log_weight) * r * r;
    }
    return m;
}

}  // namespace

TEST_CASE("scalar optimal proposal is the Bayes posterior")
{
    const auto g = smc::optimal_proposal(Vector::Zero(1), Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                                         Vector::Constant(1, 2.0), Vector::Ones(1));
    CHECK(g.mean[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("optimal proposal equals the Gaussian conditional")
{
    std::mt19937_64 g(12);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 1 + rep % 4;
        const int d = 1 + rep % 5;
        const Vector mu = testing::random_vector(n, g);
        const Matrix S = testing::random_spd(n, g);
        const Matrix W = testing::random_matrix(d, n, g);
        const Vector s2 = (0.1 + Eigen::ArrayXd::Random(d).abs()).matrix();
        const Vector y = testing::random_vector(d, g);
        // Joint (x, y) Gaussian conditioning, written in covariance form.
        const Matrix Syy = W * S * W.transpose() + Matrix(s2.asDiagonal());
        const Matrix gain = S * W.transpose() * Syy.inverse();
        const Vector m_ref = mu + gain * (y - W * mu);
        const Matrix c_ref = S - gain * W * S;
        const auto prop = smc::optimal_proposal(mu, S, W, y, s2);
        CHECK((prop.mean - m_ref).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((prop.cov - c_ref).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("incremental weight plus constant is the predictive log-density")
{
    std::mt19937_64 g(13);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 1 + rep % 3;
        const int d = 1 + rep % 4;
        const Vector mu = testing::random_vector(n, g);
        const Matrix S = testing::random_spd(n, g);
        const Matrix W = testing::random_matrix(d, n, g);
        const Vector s2 = (0.1 + Eigen::ArrayXd::Random(d).abs()).matrix();
        const Vector y = testing::random_vector(d, g);
        const auto prop = smc::optimal_proposal(mu, S, W, y, s2);
        const double lu = smc::incremental_weight(mu, prop.mean, S, prop.cov) + smc::evidence_constant(S, y, s2);

        const Matrix Syy = W * S * W.transpose() + Matrix(s2.asDiagonal());
        const Vector r = y - W * mu;
        const double direct = -0.5 * (d * std::log(2.0 * std::numbers::pi) + std::log(Syy.determinant()) +
                                      r.dot(Syy.inverse() * r));
        CHECK(lu == doctest::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("incremental weight ratios match quadrature")
{
    std::mt19937_64 g(14);
    std::uniform_real_distribution<> u(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const double b = 0.1 + 2.0 * u(g);
        const double q = 4.0 * u(g) - 2.0;
        const double s = 0.2 + 2.0 * u(g);
        const double x_prev = 4.0 * u(g) - 2.0;
        const double w = 0.5 + 2.0 * u(g);
        const double s2 = 0.1 + u(g);
        const double y1 = 4.0 * u(g) - 2.0;
        const double y2 = 4.0 * u(g) - 2.0;
        const double dt = 0.5 + u(g);
        const auto tr = ou::transition(OuParams::isotropic(1, b, q, s), Vector::Constant(1, x_prev), dt);
        const Matrix W = Matrix::Constant(1, 1, w);
        auto log_u = [&](double y) {
            const auto prop = smc::optimal_proposal(tr.mean, tr.cov, W, Vector::Constant(1, y), Vector::Constant(1, s2));
            return smc::incremental_weight(tr.mean, prop.mean, tr.cov, prop.cov) -
                   0.5 * y * y / s2;  // y-dependent part of the dropped constant
        };
        auto integral = [&](double y) {
            const double sd = std::sqrt(tr.cov(0, 0));
            return testing::trapezoid(
                [&](double x) {
                    return std::exp(testing::normal_log_pdf(x, tr.mean[0], tr.cov(0, 0)) +
                                    testing::normal_log_pdf(y, w * x, s2));
                },
                tr.mean[0] - 14 * sd, tr.mean[0] + 14 * sd, 6000);
        };
        const double ratio = std::exp(log_u(y1) - log_u(y2));
        const double quad = integral(y1) / integral(y2);
        CHECK(std::abs(ratio / quad - 1.0) < 1e-6);
    }
}

TEST_CASE("first step evidence is exact for a linear-Gaussian model")
{
    std::mt19937_64 g(15);
    const auto s = scalar_statics(2, g);
    const auto lg = as_linear_gaussian(s, 1.0);
    const Matrix ys = testing::random_matrix(1, 2, g);
    const auto kf = testing::kalman_filter(lg, ys);
    const auto r = smc::init_cloud(s, ys.row(0).transpose(), config_for(s, 64, 2), StreamKey{1, 2});
    CHECK(r.log_evidence_increment == doctest::Approx(kf.log_evidence[0]).epsilon(1e-10));
    // Every particle has the same weight, so the cloud is not resampled.
    CHECK(r.ess == doctest::Approx(64.0).epsilon(1e-10));
    CHECK_FALSE(r.resampled);
}

TEST_CASE("uninformative observations leave the prior untouched")
{
    StaticParams s{{OuParams::isotropic(1, 0.5, 1.0, 2.0)},
                   OuParams::isotropic(1, 1.0, 0.0, 1.0),
                   {Matrix::Ones(1, 1)},
                   Vector::Constant(1, 1e12)};
    const auto c = config_for(s, 4000, 2);
    const auto init = smc::init_cloud(s, Vector::Zero(1), c, StreamKey{7, 1});
    std::vector<double> xs;
    for (const auto& p : init.weighted.particles) {
        xs.push_back(p.state.X[0]);
    }
    CHECK(init.ess > 0.999 * 4000);
    CHECK(testing::ks_pvalue(testing::ks_normal(xs, 1.0, 2.0), xs.size()) > 0.01);

    const auto next = smc::filter_step(init.next, Vector::Zero(1), s, c, StreamKey{7, 2});
    CHECK(next.ess > 0.999 * 4000);
}

TEST_CASE("weighted moments track the Kalman filter and the RTS smoother")
{
    std::mt19937_64 g(16);
    const auto s = scalar_statics(2, g);
    const int T = 15;
    const int N = 3000;
    const auto data = finescale::simulate(s, 1.0, T, StreamKey{3, 3});
    const auto lg = as_linear_gaussian(s, 1.0);
    const auto kf = testing::kalman_filter(lg, data.ys);
    const auto rts = testing::rts_smoother(lg, kf);

    const auto c = config_for(s, N, T);
    const auto trace = smc::run_filter(data.ys, s, c, StreamKey{3, 4});
    double evidence = 0.0;
    for (int t = 0; t < T; ++t) {
        const auto m = weighted_moments(trace.clouds[static_cast<std::size_t>(t)]);
        const double v = kf.cov[static_cast<std::size_t>(t)](0, 0);
        const double ess = trace.ess[static_cast<std::size_t>(t)];
        CHECK(std::abs(m.mean - kf.mean[static_cast<std::size_t>(t)][0]) < 4.0 * std::sqrt(v / ess));
        CHECK(std::abs(m.var - v) < 4.0 * v * std::sqrt(2.0 / ess));
        evidence += kf.log_evidence[static_cast<std::size_t>(t)];
    }
    CHECK(std::abs(trace.total_log_evidence() - evidence) < 0.1);

    const int draws = 600;
    const auto paths = smc::backward_smooth(trace.clouds, s, c, StreamKey{3, 5}, Exec::parallel, draws);
    REQUIRE(paths.size() == draws);
    for (int t = 0; t < T; ++t) {
        double mean = 0.0;
        for (const auto& p : paths) {
            mean += p[static_cast<std::size_t>(t)].X[0] / draws;
        }
        const double v = rts.cov[static_cast<std::size_t>(t)](0, 0);
        CHECK(std::abs(mean - rts.mean[static_cast<std::size_t>(t)][0]) < 4.0 * std::sqrt(v / draws));
    }
}

TEST_CASE("weights stay normalized and every step is finite")
{
    std::mt19937_64 g(17);
    const auto cfg = finescale::SyntheticConfig::defaults();
    const auto data = finescale::generate_synthetic(cfg, 30, StreamKey{5, 0});
    ModelConfig c;
    c.M = 2;
    c.K = 1;
    c.d = 10;
    c.N = 200;
    c.L = 30;
    const auto trace = smc::run_filter(data.ys, data.truth, c, StreamKey{5, 1});
    for (const auto& cloud : trace.clouds) {
        double sum = 0.0;
        for (const auto& p : cloud.particles) {
            sum += std::exp(p.log_weight);
            REQUIRE(p.state.finite());
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    for (std::size_t t = 0; t < trace.ess.size(); ++t) {
        CHECK(trace.ess[t] >= 1.0 - 1e-9);
        CHECK(trace.ess[t] <= c.N + 1e-9);
        CHECK(std::isfinite(trace.log_evidence[t]));
    }
}

TEST_CASE("serial reference and parallel kernels agree")
{
    const auto data = finescale::generate_synthetic(finescale::SyntheticConfig::defaults(), 25, StreamKey{6, 0});
    ModelConfig c;
    c.M = 2;
    c.K = 1;
    c.d = 10;
    c.N = 100;
    c.L = 25;
    const auto a = smc::run_filter(data.ys, data.truth, c, StreamKey{6, 1}, Exec::serial);
    const auto b = smc::run_filter(data.ys, data.truth, c, StreamKey{6, 1}, Exec::parallel);
    REQUIRE(a.clouds.size() == b.clouds.size());
    double worst = 0.0;
    for (std::size_t t = 0; t < a.clouds.size(); ++t) {
        CHECK(a.resampled[t] == b.resampled[t]);
        for (std::size_t i = 0; i < a.clouds[t].size(); ++i) {
            const auto& pa = a.clouds[t].particles[i];
            const auto& pb = b.clouds[t].particles[i];
            worst = std::max({worst, (pa.state.X - pb.state.X).cwiseAbs().maxCoeff(),
                              (pa.state.zhat - pb.state.zhat).cwiseAbs().maxCoeff(),
                              std::abs(pa.log_weight - pb.log_weight)});
        }
        // With sigma2 = 0.01 and d = 10 the unnormalized log u is around 1e6,
        // so a few ulps there are a few 1e-10 here.
        CHECK(std::abs(a.log_evidence[t] - b.log_evidence[t]) < 1e-8);
    }
    CHECK(worst < 1e-7);

    const auto sa = smc::backward_smooth(a.clouds, data.truth, c, StreamKey{6, 2}, Exec::serial);
    const auto sb = smc::backward_smooth(a.clouds, data.truth, c, StreamKey{6, 2}, Exec::parallel);
    int same = 0;
    for (std::size_t j = 0; j < sa.size(); ++j) {
        bool eq = true;
        for (std::size_t t = 0; t < sa[j].size(); ++t) {
            eq = eq && sa[j][t].X == sb[j][t].X;
        }
        same += eq ? 1 : 0;
    }
    CHECK(same == static_cast<int>(sa.size()));
}

TEST_CASE("results do not depend on the thread count")
{
    const auto data = finescale::generate_synthetic(finescale::SyntheticConfig::defaults(), 20, StreamKey{8, 0});
    ModelConfig c;
    c.M = 2;
    c.K = 1;
    c.d = 10;
    c.N = 128;
    c.L = 20;
    set_threads(1);
    const auto a = smc::run_filter(data.ys, data.truth, c, StreamKey{8, 1});
    const auto sa = smc::backward_smooth(a.clouds, data.truth, c, StreamKey{8, 2});
    set_threads(4);
    const auto b = smc::run_filter(data.ys, data.truth, c, StreamKey{8, 1});
    const auto sb = smc::backward_smooth(b.clouds, data.truth, c, StreamKey{8, 2});
    set_threads(0);
    for (std::size_t t = 0; t < a.clouds.size(); ++t) {
        for (std::size_t i = 0; i < a.clouds[t].size(); ++i) {
            CHECK(a.clouds[t].particles[i].state.X == b.clouds[t].particles[i].state.X);
            CHECK(a.clouds[t].particles[i].log_weight == b.clouds[t].particles[i].log_weight);
        }
    }
    for (std::size_t j = 0; j < sa.size(); ++j) {
        CHECK(sa[j].front().X == sb[j].front().X);
    }
}

TEST_CASE("single-step block smoother returns the final cloud")
{
    std::mt19937_64 g(18);
    const auto s = scalar_statics(2, g);
    const auto c = config_for(s, 50, 1);
    const auto trace = smc::run_filter(testing::random_matrix(1, 2, g), s, c, StreamKey{9, 1});
    const auto paths = smc::backward_smooth(trace.clouds, s, c, StreamKey{9, 2});
    REQUIRE(paths.size() == 50);
    for (const auto& p : paths) {
        REQUIRE(p.size() == 1);
        const bool found = std::any_of(trace.clouds[0].particles.begin(), trace.clouds[0].particles.end(),
                                       [&](const smc::Particle& q) { return q.state.X == p[0].X; });
        CHECK(found);
    }
}

TEST_CASE("smoothed paths with nearly deterministic dynamics are continuous")
{
    // With tiny transition noise the backward kernel only accepts ancestors
    // whose predicted mean lands on the chosen successor.
    StaticParams s{{OuParams::isotropic(1, 0.3, 0.0, 1e-6)},
                   OuParams::isotropic(1, 1.0, 0.0, 1e-6),
                   {Matrix::Constant(2, 1, 1.0)},
                   Vector::Constant(2, 0.5)};
    s.ou_x[0] = OuParams(0.3, Vector::Zero(1), Matrix::Constant(1, 1, 1e-6));
    const auto c = config_for(s, 200, 6);
    const auto data = finescale::simulate(s, 1.0, 6, StreamKey{10, 0});
    const auto trace = smc::run_filter(data.ys, s, c, StreamKey{10, 1});
    const auto paths = smc::backward_smooth(trace.clouds, s, c, StreamKey{10, 2}, Exec::parallel, 50);
    const double a = std::exp(-0.3);
    const double sd = std::sqrt(1e-6 * (1 - a * a) / 0.6);
    for (const auto& p : paths) {
        for (std::size_t t = 1; t < p.size(); ++t) {
            CHECK(std::abs(p[t].X[0] - a * p[t - 1].X[0]) < 8.0 * sd);
        }
    }
}

TEST_CASE("multinomial resampling frequencies follow the weights")
{
    const std::vector<double> lw{std::log(0.1), std::log(0.2), std::log(0.7)};
    auto rng = seeded_stream(4, 4);
    const int n = 100000;
    const auto idx = smc::multinomial_resample(lw, n, rng);
    std::vector<int> count(3, 0);
    for (int i : idx) {
        ++count[static_cast<std::size_t>(i)];
    }
    const double expect[] = {0.1, 0.2, 0.7};
    for (int k = 0; k < 3; ++k) {
        const double p = expect[k];
        CHECK(std::abs(count[static_cast<std::size_t>(k)] / double(n) - p) < 4.0 * std::sqrt(p * (1 - p) / n));
    }
}

TEST_CASE("zero total weight raises DegenerateCloud")
{
    const double ninf = -std::numeric_limits<double>::infinity();
    smc::ParticleCloud c;
    c.particles = {{{Vector::Zero(1), Vector::Zero(1)}, ninf}, {{Vector::Zero(1), Vector::Zero(1)}, ninf}};
    CHECK_THROWS_AS(c.normalize(), DegenerateCloud);
    auto rng = seeded_stream(1, 1);
    CHECK_THROWS_AS(smc::multinomial_resample({ninf, ninf}, 2, rng), DegenerateCloud);
}

TEST_CASE("bad observations are rejected")
{
    std::mt19937_64 g(19);
    const auto s = scalar_statics(2, g);
    const auto c = config_for(s, 10, 2);
    CHECK_THROWS_AS(smc::init_cloud(s, Vector::Zero(3), c, StreamKey{}), InvalidArgument);
    CHECK_THROWS_AS(smc::init_cloud(s, Vector::Constant(2, std::nan("")), c, StreamKey{}), DataError);
    CHECK_THROWS_AS(smc::run_filter(Matrix(0, 2), s, c, StreamKey{}), InvalidArgument);
}
