#include "mhcg/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mhcg/errors.hpp"

namespace mhcg {

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

template <class F>
PosteriorTable enumerate(int vocab, int length, Target target, F&& log_weight) {
  const std::size_t n = caption_space_size(vocab, length, kMaxEnumeration);
  std::vector<double> lw(n);
  for (std::size_t i = 0; i < n; ++i) lw[i] = log_weight(caption_from_index(i, vocab, length));
  return table_from_log_weights(std::move(lw), vocab, length, target);
}

}  // namespace

const char* to_string(Target target) {
  switch (target) {
    case Target::mh_target: return "mh-target";
    case Target::joint_posterior: return "joint-posterior";
    case Target::custom: break;
  }
  return "custom";
}

double PosteriorTable::probability(const Caption& c) const { return prob[caption_index(c, vocab)]; }
double PosteriorTable::log_probability(const Caption& c) const { return log_prob[caption_index(c, vocab)]; }

Matrix PosteriorTable::marginals() const {
  Matrix m = Matrix::Zero(length, vocab);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const Caption c = caption_from_index(i, vocab, length);
    for (int pos = 0; pos < length; ++pos) m(pos, c[static_cast<std::size_t>(pos)]) += prob[i];
  }
  return m;
}

PosteriorTable table_from_log_weights(std::vector<double> log_weights, int vocab, int length, Target target) {
  if (log_weights.size() != caption_space_size(vocab, length, kMaxEnumeration))
    throw InputError("posterior table: one weight per caption required");
  const double z = log_sum_exp(log_weights);
  if (!std::isfinite(z)) throw InvariantError("posterior table: no caption has finite weight");
  PosteriorTable t;
  t.vocab = vocab;
  t.length = length;
  t.target = target;
  t.log_prob = std::move(log_weights);
  t.prob.resize(t.log_prob.size());
  for (std::size_t i = 0; i < t.log_prob.size(); ++i) {
    t.log_prob[i] -= z;
    t.prob[i] = std::exp(t.log_prob[i]);
  }
  return t;
}

PosteriorTable decoder_table(const TextDecoderParams& xi, const Latent& z, int vocab, int length) {
  const Matrix lp = log_softmax_rows(text_decoder_logits(xi, z));
  return enumerate(vocab, length, Target::custom, [&](const Caption& c) {
    double s = 0.0;
    for (int pos = 0; pos < length; ++pos) s += lp(pos, c[static_cast<std::size_t>(pos)]);
    return s;
  });
}

PosteriorTable text_encoder_posterior(const TextEncoderParams& phi, const Latent& z, int vocab, int length) {
  return enumerate(vocab, length, Target::custom, [&](const Caption& c) { return text_encoder_logpdf(phi, z, c); });
}

PosteriorTable enumerate_posterior(const AgentParams& agent_a, const AgentParams& agent_b, const Latent& z_a,
                                   const Latent& z_b, Target target) {
  if (!(agent_a.dims == agent_b.dims)) throw ConfigError("enumerate_posterior: agents differ in dimensions");
  const int V = agent_a.dims.vocab, L = agent_a.dims.length;
  switch (target) {
    case Target::mh_target: {
      const Matrix lp = log_softmax_rows(text_decoder_logits(agent_a.xi, z_a));
      return enumerate(V, L, target, [&](const Caption& c) {
        double s = text_encoder_logpdf(agent_b.phi, z_b, c);
        for (int pos = 0; pos < L; ++pos) s += lp(pos, c[static_cast<std::size_t>(pos)]);
        return s;
      });
    }
    case Target::joint_posterior:
      return enumerate(V, L, target, [&](const Caption& c) {
        return text_encoder_logpdf(agent_a.phi, z_a, c) + text_encoder_logpdf(agent_b.phi, z_b, c);
      });
    case Target::custom: break;
  }
  throw ConfigError("enumerate_posterior: unsupported target");
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("tv_distance: distributions over different spaces");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double chain_tv_distance(std::span<const Caption> chain, const PosteriorTable& table, std::size_t burn_in) {
  if (chain.size() <= burn_in) throw InputError("chain_tv_distance: nothing left after burn-in");
  std::vector<double> freq(table.size(), 0.0);
  const double w = 1.0 / static_cast<double>(chain.size() - burn_in);
  for (std::size_t i = burn_in; i < chain.size(); ++i) {
    validate_caption(chain[i], table.vocab, table.length);
    freq[caption_index(chain[i], table.vocab)] += w;
  }
  return tv_distance(freq, table.prob);
}

double chain_tv_distance(std::span<const Caption> chain, const PosteriorTable& table) {
  return chain_tv_distance(chain, table, chain.size() / 10);
}

double exact_log_ratio(const TextDecoderParams& speaker_xi, const PosteriorTable& speaker_posterior,
                       const TextEncoderParams& listener_phi, const Latent& z_sp, const Latent& z_li,
                       const Caption& c_star, const Caption& c_li) {
  return speaker_posterior.log_probability(c_star) + text_encoder_logpdf(listener_phi, z_li, c_star) +
         text_decoder_logprob(speaker_xi, c_li, z_sp) - speaker_posterior.log_probability(c_li) -
         text_encoder_logpdf(listener_phi, z_li, c_li) - text_decoder_logprob(speaker_xi, c_star, z_sp);
}

AcceptanceAudit exact_vs_approx_acceptance(const AgentParams& speaker, const AgentParams& listener,
                                           const Latent& z_sp, const Latent& z_li, const Caption& c_star,
                                           const Caption& c_li) {
  const PosteriorTable post = text_encoder_posterior(speaker.phi, z_sp, speaker.dims.vocab, speaker.dims.length);
  AcceptanceAudit a;
  a.r_exact = std::min(1.0, std::exp(exact_log_ratio(speaker.xi, post, listener.phi, z_sp, z_li, c_star, c_li)));
  a.r_approx = std::min(
      1.0, std::exp(text_encoder_logpdf(listener.phi, z_li, c_star) - text_encoder_logpdf(listener.phi, z_li, c_li)));
  a.abs_diff = std::abs(a.r_exact - a.r_approx);
  return a;
}

double transition_probability(const TextDecoderParams& speaker_xi, const TextEncoderParams& listener_phi,
                              const Latent& z_sp, const Latent& z_li, const Caption& from, const Caption& to) {
  const double accept =
      std::min(1.0, std::exp(text_encoder_logpdf(listener_phi, z_li, to) - text_encoder_logpdf(listener_phi, z_li, from)));
  return std::exp(text_decoder_logprob(speaker_xi, to, z_sp)) * accept;
}

BalanceCheck detailed_balance(const AgentParams& speaker, const AgentParams& listener, const Latent& z_sp,
                                const Latent& z_li) {
  const PosteriorTable pi = enumerate_posterior(speaker, listener, z_sp, z_li, Target::mh_target);
  const int V = speaker.dims.vocab, L = speaker.dims.length;
  BalanceCheck report;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const Caption c1 = caption_from_index(i, V, L);
    const double q1 = std::exp(text_decoder_logprob(speaker.xi, c1, z_sp));
    for (std::size_t j = i + 1; j < pi.size(); ++j) {
      const Caption c2 = caption_from_index(j, V, L);
      const double q2 = std::exp(text_decoder_logprob(speaker.xi, c2, z_sp));
      const double pi_pair = pi.prob[i] + pi.prob[j];
      const double q_pair = q1 + q2;
      // Within the pair the proposal is renormalized; the acceptance step is unchanged.
      const double p12 = transition_probability(speaker.xi, listener.phi, z_sp, z_li, c1, c2) / q_pair;
      const double p21 = transition_probability(speaker.xi, listener.phi, z_sp, z_li, c2, c1) / q_pair;
      const double flow = std::abs(pi.prob[i] / pi_pair * p12 - pi.prob[j] / pi_pair * p21);
      report.max_violation = std::max(report.max_violation, flow);
      ++report.pairs;
    }
  }
  return report;
}

DecoderFit fit_decoder_to_table(TextDecoderParams& xi, const Latent& z, const PosteriorTable& table,
                                double tolerance, int max_iterations) {
  const Matrix target = table.marginals();
  const int V = table.vocab, L = table.length;
  const Vector h = decoder_features(xi, z);
  const double lr = 1.0 / (1.0 + h.squaredNorm());
  DecoderFit fit;
  for (;;) {
    fit.tv = tv_distance(decoder_table(xi, z, V, L).prob, table.prob);
    if (fit.tv < tolerance || fit.iterations >= max_iterations) break;
    // For a product-form decoder the KL gradient is (q_pos - marginal_pos) per position.
    const Matrix q = log_softmax_rows(text_decoder_logits(xi, z)).array().exp();
    for (int pos = 0; pos < L; ++pos) {
      const Vector g = (q.row(pos) - target.row(pos)).transpose();
      xi.weight[static_cast<std::size_t>(pos)].noalias() -= lr * g * h.transpose();
      xi.bias[static_cast<std::size_t>(pos)] -= lr * g;
    }
    ++fit.iterations;
  }
  return fit;
}

}  // namespace mhcg
