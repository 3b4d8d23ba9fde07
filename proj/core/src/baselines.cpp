#include "mhcg/baselines.hpp"

#include <cmath>
#include <optional>

#include "mhcg/errors.hpp"

namespace mhcg {

namespace {

void check_simplex(std::array<double, 2> w) {
  if (w[0] < 0.0 || w[1] < 0.0 || std::abs(w[0] + w[1] - 1.0) > 1e-12)
    throw InputError("fusion weights must be non-negative and sum to 1");
}

void check_pair(const AgentParams& a, const AgentParams& b) {
  if (!(a.dims == b.dims)) throw ConfigError("agents differ: " + a.dims.to_string() + " vs " + b.dims.to_string());
}

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  return logits.array() - (m + std::log((logits.array() - m).exp().sum()));
}

int argmax(const Vector& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

double kd_terms(const TextDecoderParams& xi, std::span<const KdExample> batch, TextDecoderParams* grad) {
  if (batch.empty()) return 0.0;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double w = 1.0 / static_cast<double>(n);
  Matrix z(batch.front().z.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) z.col(i) = batch[static_cast<std::size_t>(i)].z;
  const DecoderForward f = decoder_forward(xi, std::move(z));
  double sum = 0.0;
  std::vector<Matrix> dlogits;
  for (std::size_t pos = 0; pos < f.logits.size(); ++pos) {
    const Matrix lq = log_softmax_cols(f.logits[pos]);
    Matrix p(lq.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i)
      p.col(i) = batch[static_cast<std::size_t>(i)].teacher_prob.row(static_cast<Eigen::Index>(pos)).transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index v = 0; v < lq.rows(); ++v)
        if (p(v, i) > 0.0) sum += p(v, i) * (std::log(p(v, i)) - lq(v, i));
    if (grad) dlogits.push_back(w * (lq.array().exp() - p.array()).matrix());
  }
  if (grad) add_decoder_gradient(xi, f, dlogits, *grad);
  return batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
}

}  // namespace

RoundReport finetune_round(GameState& state) {
  const AcceptanceMode saved = state.config.acceptance;
  state.config.acceptance = AcceptanceMode::always_accept;
  try {
    RoundReport r = play_round(state);
    state.config.acceptance = saved;
    return r;
  } catch (...) {
    state.config.acceptance = saved;
    throw;
  }
}

Vector position_logits(const TextDecoderParams& xi, const Latent& z, int pos, DecodeCounter* counter) {
  const auto p = static_cast<std::size_t>(pos);
  if (counter) ++counter->logit_evaluations;
  return xi.weight[p] * decoder_features(xi, z) + xi.bias[p];
}

Matrix ensemble_logits(const AgentParams& a, const AgentParams& b, const Latent& z_a, const Latent& z_b,
                       std::array<double, 2> weights, DecodeCounter* counter) {
  check_pair(a, b);
  check_simplex(weights);
  Matrix out(a.dims.length, a.dims.vocab);
  for (int pos = 0; pos < a.dims.length; ++pos) {
    out.row(pos) = (weights[0] * position_logits(a.xi, z_a, pos, counter) +
                    weights[1] * position_logits(b.xi, z_b, pos, counter))
                       .transpose();
    if (counter) ++counter->positions;
  }
  return out;
}

Caption ensemble_decode(const AgentParams& a, const AgentParams& b, const Latent& z_a, const Latent& z_b,
                        std::array<double, 2> weights, Rng& rng, DecodeCounter* counter) {
  return sample_from_logits(ensemble_logits(a, b, z_a, z_b, weights, counter), rng);
}

std::array<double, 2> packllm_weights_from_logprob(std::array<double, 2> prefix_logprob, std::size_t prefix_length,
                                                   double lambda) {
  if (lambda < 0.0) throw ConfigError("packllm: lambda must be non-negative");
  if (prefix_length == 0) return {0.5, 0.5};
  const auto n = static_cast<double>(prefix_length);
  const double s0 = -lambda * std::exp(-prefix_logprob[0] / n);
  const double s1 = -lambda * std::exp(-prefix_logprob[1] / n);
  const double m = std::max(s0, s1);
  const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

std::array<double, 2> packllm_weights(const AgentParams& a, const AgentParams& b, const Latent& z_a,
                                      const Latent& z_b, std::span<const int> prefix, double lambda) {
  check_pair(a, b);
  if (static_cast<int>(prefix.size()) > a.dims.length) throw InputError("packllm: prefix longer than a caption");
  std::array<double, 2> lp{0.0, 0.0};
  for (std::size_t pos = 0; pos < prefix.size(); ++pos) {
    const int tok = prefix[pos];
    if (tok < 0 || tok >= a.dims.vocab) throw InputError("packllm: token out of range");
    lp[0] += log_softmax(position_logits(a.xi, z_a, static_cast<int>(pos), nullptr))[tok];
    lp[1] += log_softmax(position_logits(b.xi, z_b, static_cast<int>(pos), nullptr))[tok];
  }
  return packllm_weights_from_logprob(lp, prefix.size(), lambda);
}

AgentParams weight_average(const AgentParams& a, const AgentParams& b) {
  check_pair(a, b);
  AgentParams out = a;
  unpack(Vector(0.5 * (pack(a.xi) + pack(b.xi))), out.xi);
  unpack(Vector(0.5 * (pack(a.phi) + pack(b.phi))), out.phi);
  unpack(Vector(0.5 * (pack(a.psi) + pack(b.psi))), out.psi);
  unpack(Vector(0.5 * (pack(a.theta) + pack(b.theta))), out.theta);
  return out;
}

LossTerms loss_and_gradient(const TextDecoderParams& xi, std::span<const KdExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad) {
  std::optional<TextDecoderParams> g;
  if (grad) g = zeros_like(xi);
  const double kl = kd_terms(xi, batch, g ? &*g : nullptr);
  const LossTerms r = decoder_replay_terms(xi, draw, alpha, beta, g ? &*g : nullptr);
  if (grad) *grad = pack(*g);
  return {kl, r.matching, r.replay, kl + alpha * r.matching + beta * r.replay};
}

TrainResult kd_round(AgentParams& student, const AgentParams& teacher, std::span<const Observation> observations,
                     const ReplayBuffer& buffer, const LearnConfig& config, double lr, Rng& rng) {
  check_pair(student, teacher);
  std::vector<KdExample> data;
  data.reserve(observations.size());
  for (const auto& o : observations) {
    const Matrix tp = log_softmax_rows(text_decoder_logits(teacher.xi, encode_image(teacher.psi, o, rng))).array().exp();
    data.push_back({encode_image(student.psi, o, rng), tp});
  }
  const TrainOptions opt{lr, config.epochs, config.batch_size, config.alpha, config.beta};
  return update_block(student.xi, std::span<const KdExample>(data), buffer, opt, rng);
}

Caption SingleAgentCaptioner::caption(const Observation& o, DecodeCounter& counter) const {
  const Latent z = image_encoder_mean(agent_.psi, o);
  std::vector<int> tokens;
  for (int pos = 0; pos < agent_.dims.length; ++pos) {
    tokens.push_back(argmax(position_logits(agent_.xi, z, pos, &counter)));
    ++counter.positions;
  }
  return Caption(std::move(tokens));
}

EnsembleCaptioner::EnsembleCaptioner(AgentParams a, AgentParams b, std::array<double, 2> weights)
    : a_(std::move(a)), b_(std::move(b)), weights_(weights) {
  check_pair(a_, b_);
  check_simplex(weights_);
}

Caption EnsembleCaptioner::caption(const Observation& o, DecodeCounter& counter) const {
  return greedy_from_logits(
      ensemble_logits(a_, b_, image_encoder_mean(a_.psi, o), image_encoder_mean(b_.psi, o), weights_, &counter));
}

PackLlmCaptioner::PackLlmCaptioner(AgentParams a, AgentParams b, double lambda)
    : a_(std::move(a)), b_(std::move(b)), lambda_(lambda) {
  check_pair(a_, b_);
  if (lambda_ < 0.0) throw ConfigError("packllm: lambda must be non-negative");
}

Caption PackLlmCaptioner::caption(const Observation& o, DecodeCounter& counter) const {
  const Latent z_a = image_encoder_mean(a_.psi, o);
  const Latent z_b = image_encoder_mean(b_.psi, o);
  std::array<double, 2> prefix_lp{0.0, 0.0};
  std::vector<int> tokens;
  for (int pos = 0; pos < a_.dims.length; ++pos) {
    const Vector la = log_softmax(position_logits(a_.xi, z_a, pos, &counter));
    const Vector lb = log_softmax(position_logits(b_.xi, z_b, pos, &counter));
    const auto w = packllm_weights_from_logprob(prefix_lp, tokens.size(), lambda_);
    const int tok = argmax(Vector(w[0] * la + w[1] * lb));
    prefix_lp[0] += la[tok];
    prefix_lp[1] += lb[tok];
    tokens.push_back(tok);
    ++counter.positions;
  }
  return Caption(std::move(tokens));
}

}  // namespace mhcg
