#pragma once

// Brute-force checks over the finite caption space V^L: exact target
// distributions, chain diagnostics, and the exact Metropolis-Hastings ratio
// that the listener-only acceptance rule approximates.
//
// The caption prior is uniform here and nowhere else in the library.

#include <cstddef>
#include <span>
#include <vector>

#include "mhcg/agent.hpp"

namespace mhcg {

inline constexpr std::size_t kMaxEnumeration = 4096;

enum class Target {
  mh_target,        // q(c | z_sp; xi_sp) * p(z_li | c; phi_li)
  joint_posterior,  // p(z_a | c; phi_a) * p(z_b | c; phi_b), uniform prior
  custom,
};
const char* to_string(Target target);

/// Normalized distribution over all captions, indexed by caption_index.
struct PosteriorTable {
  int vocab = 0;
  int length = 0;
  Target target = Target::custom;
  std::vector<double> log_prob;
  std::vector<double> prob;

  std::size_t size() const { return prob.size(); }
  double probability(const Caption& c) const;
  double log_probability(const Caption& c) const;
  /// Per-position marginal distributions (L x V).
  Matrix marginals() const;
};

/// Normalizes unnormalized log weights with log-sum-exp.
PosteriorTable table_from_log_weights(std::vector<double> log_weights, int vocab, int length, Target target);

/// q(c | z; xi) for every caption.
PosteriorTable decoder_table(const TextDecoderParams& xi, const Latent& z, int vocab, int length);

/// p(c | z; phi) proportional to p(z | c; phi) under the uniform prior.
PosteriorTable text_encoder_posterior(const TextEncoderParams& phi, const Latent& z, int vocab, int length);

/// `z_a`/`z_b` are the latents of agent_a/agent_b. For the MH target agent_a
/// is the speaker and agent_b the listener.
PosteriorTable enumerate_posterior(const AgentParams& agent_a, const AgentParams& agent_b, const Latent& z_a,
                                   const Latent& z_b, Target target);

double tv_distance(std::span<const double> p, std::span<const double> q);

/// TV between the empirical distribution of chain[burn_in:] and `table`.
double chain_tv_distance(std::span<const Caption> chain, const PosteriorTable& table, std::size_t burn_in);
/// Burn-in of 10% of the chain.
double chain_tv_distance(std::span<const Caption> chain, const PosteriorTable& table);

/// Log of the untruncated ratio with the speaker-side posterior
/// p(c | z_sp; phi_sp) taken from `speaker_posterior`:
///   p(c*|z_sp) p(z_li|c*) q(c_li|z_sp) / [p(c_li|z_sp) p(z_li|c_li) q(c*|z_sp)]
double exact_log_ratio(const TextDecoderParams& speaker_xi, const PosteriorTable& speaker_posterior,
                       const TextEncoderParams& listener_phi, const Latent& z_sp, const Latent& z_li,
                       const Caption& c_star, const Caption& c_li);

struct AcceptanceAudit {
  double r_exact = 0.0;
  double r_approx = 0.0;
  double abs_diff = 0.0;
};

AcceptanceAudit exact_vs_approx_acceptance(const AgentParams& speaker, const AgentParams& listener,
                                           const Latent& z_sp, const Latent& z_li, const Caption& c_star,
                                           const Caption& c_li);

/// Probability that one proposal+judgment step moves the listener from
/// `from` to `to` (from != to): q(to | z_sp) * min(1, p(z_li|to) / p(z_li|from)).
double transition_probability(const TextDecoderParams& speaker_xi, const TextEncoderParams& listener_phi,
                              const Latent& z_sp, const Latent& z_li, const Caption& from, const Caption& to);

struct BalanceCheck {
  double max_violation = 0.0;
  std::size_t pairs = 0;
};

/// For every unordered caption pair, restricts target and proposal to the
/// pair and measures |pi(c1) P(c1->c2) - pi(c2) P(c2->c1)|.
BalanceCheck detailed_balance(const AgentParams& speaker, const AgentParams& listener, const Latent& z_sp,
                                const Latent& z_li);

struct DecoderFit {
  int iterations = 0;
  double tv = 0.0;
};

/// Gradient descent on KL(table || q(.|z; xi)) over xi until the TV distance
/// falls below `tolerance`. Only product-form tables can be reached exactly.
DecoderFit fit_decoder_to_table(TextDecoderParams& xi, const Latent& z, const PosteriorTable& table,
                                double tolerance, int max_iterations);

}  // namespace mhcg
