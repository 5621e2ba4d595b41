#pragma once

#include <span>
#include <vector>

namespace uq {

struct GaussianPrediction {
    double mu = 0.0;
    double sigma2 = 1.0;
};

// p(y) = beta / (2 alpha Gamma(1/beta)) * exp(-(|y - mu| / alpha)^beta)
struct GenGaussianPrediction {
    double mu = 0.0;
    double alpha = 1.0;
    double beta = 2.0;
};

inline constexpr double kShapeMin = 0.2;
inline constexpr double kShapeMax = 10.0;

// Includes the 0.5 ln(2 pi) constant.
double gauss_nll(const GaussianPrediction& pred, double y);
double gauss_cdf(const GaussianPrediction& pred, double y);
double gauss_pdf(const GaussianPrediction& pred, double y);

double gengauss_nll(const GenGaussianPrediction& pred, double y);
double gengauss_cdf(const GenGaussianPrediction& pred, double y);
double gengauss_pdf(const GenGaussianPrediction& pred, double y);
double gengauss_variance(const GenGaussianPrediction& pred);

// Mean of member means; variance = mean member variance + unbiased variance of
// the member means.
GaussianPrediction ensemble_mixture_moments(std::span<const GaussianPrediction> members);

// The unbiased spread of member means alone.
double ensemble_epistemic_variance(std::span<const GaussianPrediction> members);

} // namespace uq
