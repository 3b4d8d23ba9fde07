#include "mhcg/generalized_gaussian.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>

namespace mhcg::gg {

double log_normalizer(double alpha, double beta) {
  return std::log(beta) - std::log(2.0 * alpha) - std::lgamma(1.0 / beta);
}

double logpdf(double x, double mu, double alpha, double beta) {
  return log_normalizer(alpha, beta) - std::pow(std::abs(x - mu) / alpha, beta);
}

double variance(double alpha, double beta) {
  return alpha * alpha * std::exp(std::lgamma(3.0 / beta) - std::lgamma(1.0 / beta));
}

double sample(double mu, double alpha, double beta, Rng& rng) {
  const double g = rng.gamma(1.0 / beta);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return mu + sign * alpha * std::pow(g, 1.0 / beta);
}

double digamma(double x) { return boost::math::digamma(x); }

}  // namespace mhcg::gg
