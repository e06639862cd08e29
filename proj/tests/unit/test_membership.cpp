#include <doctest.h>

#include <cmath>
#include <random>

#include "pmlds/membership.hpp"

using namespace pmlds;

TEST_CASE("zero driver gives equal memberships")
{
    const auto w = to_simplex(Vector::Zero(2));
    CHECK(w.z[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w.z[1] == doctest::Approx(0.5).epsilon(1e-15));
    for (int M = 1; M <= 7; ++M) {
        const auto v = to_simplex(Vector::Zero(M));
        for (int m = 0; m < M; ++m) {
            CHECK(v.z[m] == doctest::Approx(1.0 / M).epsilon(1e-14));
        }
    }
}

TEST_CASE("matches the formula evaluated in extended precision")
{
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(-40.0, 40.0);
    for (int rep = 0; rep < 200; ++rep) {
        const int M = 1 + rep % 5;
        Vector zh(M);
        for (int m = 0; m < M; ++m) {
            zh[m] = u(g);
        }
        long double den = 1.0L;
        for (int m = 0; m < M; ++m) {
            den += std::exp(static_cast<long double>(zh[m]));
        }
        const auto w = to_simplex(zh);
        for (int m = 0; m < M; ++m) {
            const long double ref = (std::exp(static_cast<long double>(zh[m])) + 1.0L / M) / den;
            CHECK(std::abs(static_cast<long double>(w.z[m]) - ref) <= 1e-14L * ref + 1e-300L);
        }
    }
    const auto w = to_simplex(Vector{{30.0, -30.0}});
    CHECK(std::abs(w.z[0] - 1.0) < 1e-9);
    CHECK(w.z[1] > 0.0);
}

TEST_CASE("exact normalization and positivity over extreme drivers")
{
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u(-700.0, 700.0);
    double worst_sum = 0.0;
    double min_z = 1.0;
    for (int rep = 0; rep < 100000; ++rep) {
        const int M = 2 + rep % 4;
        Vector zh(M);
        for (int m = 0; m < M; ++m) {
            zh[m] = u(g);
        }
        const auto w = to_simplex(zh);
        worst_sum = std::max(worst_sum, std::abs(w.z.sum() - 1.0));
        min_z = std::min(min_z, w.z.minCoeff());
        REQUIRE(w.z.allFinite());
    }
    CHECK(worst_sum <= 1e-12);
    CHECK(min_z > 0.0);
}

TEST_CASE("permutation equivariance")
{
    std::mt19937_64 g(3);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int rep = 0; rep < 100; ++rep) {
        Vector zh(4);
        for (int m = 0; m < 4; ++m) {
            zh[m] = nd(g);
        }
        Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
        perm.setIdentity();
        std::shuffle(perm.indices().data(), perm.indices().data() + 4, g);
        const Vector a = perm * to_simplex(zh).z;
        const Vector b = to_simplex(perm * zh).z;
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("rejects non-finite and empty drivers")
{
    CHECK_THROWS_AS(to_simplex(Vector(0)), InvalidArgument);
    CHECK_THROWS_AS(to_simplex(Vector{{0.0, std::nan("")}}), InvalidArgument);
}
