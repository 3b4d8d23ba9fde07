#pragma once

// Shared oracles for the unit and acceptance suites: random small instances
// of every loss, a central finite-difference gradient, and goodness-of-fit
// statistics.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/baselines.hpp"
#include "mhcg/learning.hpp"
#include "mhcg/oracle.hpp"
#include "mhcg/rng.hpp"

namespace mhcg::testing {

inline Vector random_vector(int n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline Caption random_caption(int vocab, int length, Rng& rng) {
  std::vector<int> t(static_cast<std::size_t>(length));
  for (auto& x : t) x = static_cast<int>(rng.index(static_cast<std::size_t>(vocab)));
  return Caption(std::move(t));
}

inline Vector jitter(Vector v, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += scale * rng.normal();
  return v;
}

/// ||g - fd|| / max(||fd||, 1e-8), fd from central differences of `f` in
/// packed coordinates with step `h`.
inline double fd_relative_error(const Vector& x0, const std::function<double(const Vector&)>& f, const Vector& g,
                                double h = 1e-5) {
  Vector fd(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Vector xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return (g - fd).norm() / std::max(fd.norm(), 1e-8);
}

/// One random loss instance: dims, agent, batch, a buffer whose stored outputs
/// are perturbed copies of the current ones (so the matching term is nonzero),
/// and the replay weights.
struct GradientInstance {
  ModelDims dims;
  AgentParams agent;
  std::vector<TextExample> text;
  std::vector<ImageExample> image;
  std::vector<KdExample> kd;
  ReplayBuffer xi_buffer{6}, phi_buffer{6}, psi_buffer{6}, theta_buffer{6};
  double alpha = 0.0;
  double beta = 0.0;
};

inline GradientInstance make_gradient_instance(Rng& rng) {
  GradientInstance in;
  const int hidden_choices[] = {0, 3, 5};
  in.dims = {2 + static_cast<int>(rng.index(4)), 1 + static_cast<int>(rng.index(3)), 1 + static_cast<int>(rng.index(3)),
             1 + static_cast<int>(rng.index(3)), hidden_choices[rng.index(3)]};
  const ModelDims& d = in.dims;
  in.agent = make_random_agent(d, AgentId::A, rng, 0.6);
  in.agent.phi.shape = 1.5 + rng.uniform();
  in.alpha = 0.05 + rng.uniform();
  in.beta = 0.05 + rng.uniform();
  const int n = 2 + static_cast<int>(rng.index(4));
  for (int i = 0; i < n; ++i) {
    const Latent z = random_vector(d.latent, rng);
    const Observation o = random_vector(d.obs, rng);
    in.text.push_back({z, random_caption(d.vocab, d.length, rng)});
    in.image.push_back({o, z});
    Matrix t = Matrix::Random(d.length, d.vocab) * 2.0;
    in.kd.push_back({z, log_softmax_rows(t).array().exp()});
  }
  for (int i = 0; i < 4; ++i) {
    const Latent z = random_vector(d.latent, rng);
    const Observation o = random_vector(d.obs, rng);
    const Caption c = random_caption(d.vocab, d.length, rng);
    in.xi_buffer.push({o, z, c, jitter(decoder_outputs(in.agent.xi, z), rng, 0.3)});
    in.phi_buffer.push({o, z, c, jitter(text_encoder_outputs(in.agent.phi, c), rng, 0.3)});
    in.psi_buffer.push({o, z, c, jitter(image_encoder_outputs(in.agent.psi, o), rng, 0.3)});
    in.theta_buffer.push({o, z, c, jitter(image_decoder_outputs(in.agent.theta, z), rng, 0.3)});
  }
  return in;
}

/// Relative FD error of loss_and_gradient for one head on the full-buffer objective.
template <class Params, class Example>
double head_gradient_error(const Params& params, const std::vector<Example>& data, const ReplayBuffer& buffer,
                           double alpha, double beta) {
  const std::span<const Example> batch(data);
  const ReplayDraw draw = ReplayDraw::whole(buffer);
  Vector g;
  loss_and_gradient(params, batch, draw, alpha, beta, &g);
  const Vector x0 = pack(params);
  auto f = [&](const Vector& x) {
    Params p = params;
    unpack(x, p);
    return loss_and_gradient(p, batch, draw, alpha, beta, nullptr).total;
  };
  return fd_relative_error(x0, f, g);
}

struct InstanceErrors {
  double xi = 0.0, phi = 0.0, psi = 0.0, theta = 0.0, kd = 0.0;
};

inline InstanceErrors gradient_errors(const GradientInstance& in) {
  return {head_gradient_error(in.agent.xi, in.text, in.xi_buffer, in.alpha, in.beta),
          head_gradient_error(in.agent.phi, in.text, in.phi_buffer, in.alpha, in.beta),
          head_gradient_error(in.agent.psi, in.image, in.psi_buffer, in.alpha, in.beta),
          head_gradient_error(in.agent.theta, in.image, in.theta_buffer, in.alpha, in.beta),
          head_gradient_error(in.agent.xi, in.kd, in.xi_buffer, in.alpha, in.beta)};
}

/// Upper-tail p-value of Pearson's statistic for observed counts vs expected probabilities.
inline double chi_square_p(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  double stat = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    if (e <= 0.0) continue;
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
    ++cells;
  }
  boost::math::chi_squared dist(cells - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// Kolmogorov-Smirnov statistic sqrt(n) * sup |F_n - F|.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return std::sqrt(n) * d;
}

/// Asymptotic 1% critical value of the Kolmogorov distribution.
inline constexpr double kKsCritical01 = 1.6276;

/// Simpson's rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// Speaker whose text-encoder posterior at z_sp is an exact product over
/// positions: Laplace shape and z_sp above every embedding coordinate, so
/// |z_k - mu_k(c)| = z_k - mu_k(c) is linear in the tokens. The linear
/// decoder can then represent it exactly.
struct AuditSpeaker {
  AgentParams agent;
  Latent z;
};

inline AuditSpeaker make_audit_speaker(const ModelDims& dims, Rng& rng, double weight_scale = 1.0) {
  ModelDims d = dims;
  d.hidden = 0;
  AuditSpeaker s{make_random_agent(d, AgentId::A, rng, weight_scale), Latent(d.latent)};
  s.agent.phi.shape = 1.0;
  for (int k = 0; k < d.latent; ++k) s.z[k] = s.agent.phi.embedding.col(k).maxCoeff() + 0.2 + rng.uniform();
  return s;
}

inline DecoderFit fit_audit_speaker(AuditSpeaker& s, double tolerance) {
  const PosteriorTable post = text_encoder_posterior(s.agent.phi, s.z, s.agent.dims.vocab, s.agent.dims.length);
  return fit_decoder_to_table(s.agent.xi, s.z, post, tolerance, 200000);
}

}  // namespace mhcg::testing
