#include "uq/distributions.hpp"
#include "uq/numerics.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numbers>
#include <vector>

using namespace uq;

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Composite Simpson on [a, b] with n (even) panels.
template <class F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}
} // namespace

TEST_CASE("gaussian nll values") {
    CHECK(gauss_nll({0.0, 1.0}, 0.0) == doctest::Approx(0.9189385).epsilon(1e-7));
    CHECK(gauss_nll({0.0, 1.0}, 1.0) == doctest::Approx(1.4189385).epsilon(1e-7));
    CHECK_THROWS_AS(gauss_nll({0.0, 0.0}, 1.0), DomainError);
    CHECK_THROWS_AS(gauss_nll({0.0, -1.0}, 1.0), DomainError);
}

TEST_CASE("gaussian nll is minimized at sigma2 = r^2") {
    for (double r : {0.3, 1.0, 2.5}) {
        const double best = 0.5 * (1.0 + std::log(r * r)) + kHalfLog2Pi;
        CHECK(gauss_nll({0.0, r * r}, r) == doctest::Approx(best).epsilon(1e-12));
        for (double f : {0.5, 0.9, 1.1, 2.0}) CHECK(gauss_nll({0.0, f * r * r}, r) > best);
    }
}

TEST_CASE("gaussian cdf") {
    CHECK(gauss_cdf({3.0, 2.0}, 3.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gauss_cdf({0.0, 1.0}, 1.96) == doctest::Approx(0.9750).epsilon(1e-4));
    const boost::math::normal_distribution<double> n(1.0, 1.5);
    for (double a : {0.1, 0.7, 2.0, 5.0}) {
        CHECK(gauss_cdf({1.0, 2.25}, 1.0 + a) + gauss_cdf({1.0, 2.25}, 1.0 - a) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(std::fabs(gauss_cdf({1.0, 2.25}, 1.0 + a) - boost::math::cdf(n, 1.0 + a)) <= 1e-12);
    }
    CHECK(gauss_pdf({1.0, 2.25}, 0.3) == doctest::Approx(boost::math::pdf(n, 0.3)).epsilon(1e-12));
    CHECK_THROWS_AS(gauss_cdf({0.0, 0.0}, 1.0), DomainError);
}

TEST_CASE("generalized gaussian reduces to the gaussian at beta 2") {
    CHECK(gengauss_nll({0.0, std::sqrt(2.0), 2.0}, 0.0) == doctest::Approx(0.9189385).epsilon(1e-7));
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const double mu = rng.normal(0.0, 2.0);
        const double sigma = std::exp(rng.uniform(-2.0, 2.0));
        const double y = mu + rng.normal(0.0, 3.0 * sigma);
        const GenGaussianPrediction gg{mu, sigma * std::sqrt(2.0), 2.0};
        const GaussianPrediction g{mu, sigma * sigma};
        CHECK(std::fabs(gengauss_nll(gg, y) - gauss_nll(g, y)) <= 1e-8);
        CHECK(std::fabs(gengauss_cdf(gg, y) - gauss_cdf(g, y)) <= 1e-8);
        CHECK(gengauss_variance(gg) == doctest::Approx(sigma * sigma).epsilon(1e-10));
    }
}

TEST_CASE("laplace special case") {
    for (double a : {0.5, 1.0, 3.0}) {
        CHECK(gengauss_nll({1.0, a, 1.0}, 1.0) == doctest::Approx(std::log(2.0 * a)).epsilon(1e-12));
        CHECK(gengauss_cdf({1.0, a, 1.0}, 1.0 + a) == doctest::Approx(1.0 - 0.5 * std::exp(-1.0)).epsilon(1e-10));
    }
}

TEST_CASE("generalized gaussian density integrates to one") {
    Rng rng(5);
    for (int i = 0; i < 12; ++i) {
        const GenGaussianPrediction p{rng.normal(), std::exp(rng.uniform(-1.0, 1.0)), rng.uniform(0.8, 8.0)};
        CAPTURE(p.alpha);
        CAPTURE(p.beta);
        // (t/alpha)^beta = 60 bounds the truncated tail mass far below 1e-6.
        const double half = p.alpha * std::pow(60.0, 1.0 / p.beta);
        const auto f = [&](double y) { return gengauss_pdf(p, y); };
        const double mass = simpson(f, p.mu - half, p.mu, 20000) + simpson(f, p.mu, p.mu + half, 20000);
        CHECK(std::fabs(mass - 1.0) <= 1e-6);
        CHECK(std::fabs(gengauss_pdf(p, p.mu + 0.3) - std::exp(-gengauss_nll(p, p.mu + 0.3))) <= 1e-12);
        // variance by quadrature against the closed form
        const double var = 2.0 * simpson([&](double y) { return (y - p.mu) * (y - p.mu) * f(y); }, p.mu, p.mu + half, 20000);
        CHECK(var == doctest::Approx(gengauss_variance(p)).epsilon(1e-5));
    }
}

TEST_CASE("generalized gaussian cdf agrees with its density and Boost") {
    const GenGaussianPrediction p{0.5, 1.3, 1.7};
    double prev = 0.0;
    for (double y = -6.0; y <= 7.0; y += 0.25) {
        const double c = gengauss_cdf(p, y);
        CHECK(c >= prev);
        prev = c;
        const double z = std::pow(std::fabs(y - p.mu) / p.alpha, p.beta);
        const double oracle = 0.5 + (y >= p.mu ? 0.5 : -0.5) * boost::math::gamma_p(1.0 / p.beta, z);
        CHECK(std::fabs(c - oracle) <= 1e-10);
    }
    CHECK(gengauss_cdf(p, p.mu) == doctest::Approx(0.5));
    const double numeric = simpson([&](double y) { return gengauss_pdf(p, y); }, p.mu, p.mu + 1.1, 2000);
    CHECK(gengauss_cdf(p, p.mu + 1.1) - 0.5 == doctest::Approx(numeric).epsilon(1e-8));
}

TEST_CASE("cdf limits at forty scale units") {
    for (double beta : {1.0, 2.0, 5.0}) {
        const GenGaussianPrediction p{1.0, 0.7, beta};
        CHECK(gengauss_cdf(p, 1.0 + 40.0 * 0.7) == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(gengauss_cdf(p, 1.0 - 40.0 * 0.7) == doctest::Approx(0.0).epsilon(1e-8));
    }
    CHECK(gauss_cdf({1.0, 4.0}, 81.0) == 1.0);
    CHECK(gauss_cdf({1.0, 4.0}, -79.0) <= 1e-300);
}

TEST_CASE("generalized gaussian domain checks") {
    CHECK_THROWS_AS(gengauss_nll({0.0, 0.0, 2.0}, 0.0), DomainError);
    CHECK_THROWS_AS(gengauss_nll({0.0, 1.0, -1.0}, 0.0), DomainError);
    CHECK_THROWS_AS(gengauss_cdf({0.0, -1.0, 2.0}, 0.0), DomainError);
}

TEST_CASE("ensemble mixture moments") {
    const std::vector<GaussianPrediction> same(4, GaussianPrediction{1.5, 0.7});
    CHECK(ensemble_mixture_moments(same).mu == doctest::Approx(1.5));
    CHECK(ensemble_mixture_moments(same).sigma2 == doctest::Approx(0.7));
    CHECK(ensemble_epistemic_variance(same) == 0.0);

    const std::vector<GaussianPrediction> two{{0.0, 1.0}, {2.0, 1.0}};
    CHECK(ensemble_mixture_moments(two).mu == doctest::Approx(1.0));
    CHECK(ensemble_mixture_moments(two).sigma2 == doctest::Approx(3.0));

    // means a + k d, k = 0..M-1: unbiased variance is d^2 M (M + 1) / 12
    for (std::size_t m : {2u, 3u, 7u, 10u}) {
        std::vector<GaussianPrediction> ap;
        for (std::size_t k = 0; k < m; ++k) ap.push_back({-1.0 + 0.4 * k, 0.2 + 0.1 * k});
        const double d2 = 0.16;
        CHECK(ensemble_epistemic_variance(ap) == doctest::Approx(d2 * m * (m + 1) / 12.0).epsilon(1e-12));
        double aleatoric = 0.0;
        for (const auto& p : ap) aleatoric += p.sigma2 / m;
        CHECK(ensemble_mixture_moments(ap).sigma2 == doctest::Approx(aleatoric + d2 * m * (m + 1) / 12.0).epsilon(1e-12));
    }
    CHECK_THROWS(ensemble_mixture_moments(std::vector<GaussianPrediction>{{0.0, 1.0}}));
}

TEST_CASE("gaussian nll is a proper score on a large sample") {
    Rng rng(17);
    const std::size_t n = 100000;
    std::vector<double> y(n);
    for (auto& v : y) v = rng.normal(1.3, 0.8);
    double mean = 0.0;
    for (double v : y) mean += v / n;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean) / n;

    const auto avg_nll = [&](double mu, double s2) {
        double s = 0.0;
        for (double v : y) s += gauss_nll({mu, s2}, v);
        return s / n;
    };
    // Ternary search, first over mu at unit variance, then over sigma2.
    const auto argmin = [](auto f, double lo, double hi) {
        for (int i = 0; i < 80; ++i) {
            const double a = lo + (hi - lo) / 3.0, b = hi - (hi - lo) / 3.0;
            if (f(a) < f(b)) hi = b;
            else lo = a;
        }
        return 0.5 * (lo + hi);
    };
    const double best_mu = argmin([&](double mu) { return avg_nll(mu, 1.0); }, -5.0, 5.0);
    const double best_s2 = argmin([&](double s2) { return avg_nll(best_mu, s2); }, 0.01, 10.0);
    CHECK(best_mu == doctest::Approx(mean).epsilon(0.02));
    CHECK(best_s2 == doctest::Approx(var).epsilon(0.02));
    CHECK(mean == doctest::Approx(1.3).epsilon(0.02));
    CHECK(var == doctest::Approx(0.64).epsilon(0.02));
}
