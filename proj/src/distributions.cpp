#include "uq/distributions.hpp"

#include "uq/numerics.hpp"

#include <cmath>
#include <numbers>

namespace uq {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check(const GaussianPrediction& p) {
    if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2) || !std::isfinite(p.mu))
        throw DomainError("gaussian: sigma2 must be positive and finite");
}

void check(const GenGaussianPrediction& p) {
    if (!(p.alpha > 0.0) || !(p.beta > 0.0) || !std::isfinite(p.alpha) || !std::isfinite(p.beta) ||
        !std::isfinite(p.mu))
        throw DomainError("generalized gaussian: alpha and beta must be positive and finite");
}

} // namespace

double gauss_nll(const GaussianPrediction& pred, double y) {
    check(pred);
    const double r = y - pred.mu;
    return 0.5 * (r * r / pred.sigma2 + std::log(pred.sigma2)) + kHalfLog2Pi;
}

double gauss_cdf(const GaussianPrediction& pred, double y) {
    check(pred);
    return std_normal_cdf((y - pred.mu) / std::sqrt(pred.sigma2));
}

double gauss_pdf(const GaussianPrediction& pred, double y) {
    check(pred);
    const double r = y - pred.mu;
    return std::exp(-0.5 * r * r / pred.sigma2) / std::sqrt(2.0 * std::numbers::pi * pred.sigma2);
}

double gengauss_nll(const GenGaussianPrediction& pred, double y) {
    check(pred);
    const double z = std::fabs(y - pred.mu) / pred.alpha;
    return -std::log(pred.beta) + std::log(2.0 * pred.alpha) + ln_gamma(1.0 / pred.beta) + std::pow(z, pred.beta);
}

double gengauss_cdf(const GenGaussianPrediction& pred, double y) {
    check(pred);
    const double d = y - pred.mu;
    if (d == 0.0) return 0.5;
    const double tail = 0.5 * reg_lower_incomplete_gamma(1.0 / pred.beta, std::pow(std::fabs(d) / pred.alpha, pred.beta));
    return d > 0.0 ? 0.5 + tail : 0.5 - tail;
}

double gengauss_pdf(const GenGaussianPrediction& pred, double y) { return std::exp(-gengauss_nll(pred, y)); }

double gengauss_variance(const GenGaussianPrediction& pred) {
    check(pred);
    return pred.alpha * pred.alpha * std::exp(ln_gamma(3.0 / pred.beta) - ln_gamma(1.0 / pred.beta));
}

double ensemble_epistemic_variance(std::span<const GaussianPrediction> members) {
    if (members.size() < 2) throw DomainError("ensemble moments need at least 2 members");
    // Deviations are taken from the first member so identical means give exactly zero.
    const double shift = members.front().mu;
    double mean = 0.0;
    for (const auto& m : members) mean += m.mu - shift;
    mean /= static_cast<double>(members.size());
    double ss = 0.0;
    for (const auto& m : members) ss += (m.mu - shift - mean) * (m.mu - shift - mean);
    return ss / static_cast<double>(members.size() - 1);
}

GaussianPrediction ensemble_mixture_moments(std::span<const GaussianPrediction> members) {
    if (members.size() < 2) throw DomainError("ensemble moments need at least 2 members");
    double mean = 0.0;
    double aleatoric = 0.0;
    for (const auto& m : members) {
        check(m);
        mean += m.mu;
        aleatoric += m.sigma2;
    }
    const double n = static_cast<double>(members.size());
    return {mean / n, aleatoric / n + ensemble_epistemic_variance(members)};
}

} // namespace uq
