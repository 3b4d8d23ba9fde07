#pragma once

#include "mhcg/rng.hpp"

namespace mhcg::gg {

// Density  beta / (2 alpha Gamma(1/beta)) * exp(-(|x - mu| / alpha)^beta).
// Gaussian at beta = 2 (alpha = sqrt(2) sigma), Laplace at beta = 1.

double log_normalizer(double alpha, double beta);
double logpdf(double x, double mu, double alpha, double beta);
double variance(double alpha, double beta);

/// |x - mu| / alpha = G^(1/beta) with G ~ Gamma(1/beta), random sign.
double sample(double mu, double alpha, double beta, Rng& rng);

double digamma(double x);

}  // namespace mhcg::gg
