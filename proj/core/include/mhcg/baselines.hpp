#pragma once

// Comparison methods sharing the agent model family: fine-tuning without
// rejection, logit ensembles, perplexity-weighted fusion, parameter
// averaging and distillation; plus captioners that count how many member
// logit evaluations each generated position costs.

#include <array>
#include <memory>
#include <span>
#include <string>

#include "mhcg/agent.hpp"
#include "mhcg/game.hpp"
#include "mhcg/learning.hpp"

namespace mhcg {

/// play_round with acceptance forced to 1.
RoundReport finetune_round(GameState& state);

struct DecodeCounter {
  std::size_t logit_evaluations = 0;  // member-agent logit rows computed
  std::size_t positions = 0;          // caption positions generated

  double per_position() const {
    return positions == 0 ? 0.0 : static_cast<double>(logit_evaluations) / static_cast<double>(positions);
  }
};

/// Logits of one caption position (one member evaluation).
Vector position_logits(const TextDecoderParams& xi, const Latent& z, int pos, DecodeCounter* counter);

/// Weighted mean of both agents' logits, each from its own latent. Weights must lie on the simplex.
Matrix ensemble_logits(const AgentParams& a, const AgentParams& b, const Latent& z_a, const Latent& z_b,
                       std::array<double, 2> weights, DecodeCounter* counter = nullptr);
Caption ensemble_decode(const AgentParams& a, const AgentParams& b, const Latent& z_a, const Latent& z_b,
                        std::array<double, 2> weights, Rng& rng, DecodeCounter* counter = nullptr);

/// w_i proportional to exp(-lambda * perplexity_i) of `prefix` under agent i;
/// an empty prefix gives equal weights.
std::array<double, 2> packllm_weights(const AgentParams& a, const AgentParams& b, const Latent& z_a,
                                      const Latent& z_b, std::span<const int> prefix, double lambda = 1.0);

/// Same weights from accumulated prefix log-probabilities.
std::array<double, 2> packllm_weights_from_logprob(std::array<double, 2> prefix_logprob, std::size_t prefix_length,
                                                   double lambda);

/// Elementwise mean in the unconstrained coordinates of `pack`.
AgentParams weight_average(const AgentParams& a, const AgentParams& b);

// --- distillation ------------------------------------------------------------

struct KdExample {
  Latent z;             // student's latent for the image
  Matrix teacher_prob;  // L x V teacher softmax for the same image
};

/// Mean over examples of sum_pos KL(teacher || student), plus the decoder replay terms.
LossTerms loss_and_gradient(const TextDecoderParams& xi, std::span<const KdExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad);

/// Distils teacher -> student decoder on `observations` (teacher-domain images):
/// each side perceives the image with its own encoder, sampled as in a game round.
TrainResult kd_round(AgentParams& student, const AgentParams& teacher, std::span<const Observation> observations,
                     const ReplayBuffer& buffer, const LearnConfig& config, double lr, Rng& rng);

// --- captioners ----------------------------------------------------------------

/// Greedy captioning of an observation; every member logit row is counted.
class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual Caption caption(const Observation& o, DecodeCounter& counter) const = 0;
};

class SingleAgentCaptioner : public Captioner {
 public:
  explicit SingleAgentCaptioner(AgentParams agent) : agent_(std::move(agent)) {}
  Caption caption(const Observation& o, DecodeCounter& counter) const override;

 private:
  AgentParams agent_;
};

class EnsembleCaptioner : public Captioner {
 public:
  EnsembleCaptioner(AgentParams a, AgentParams b, std::array<double, 2> weights = {0.5, 0.5});
  Caption caption(const Observation& o, DecodeCounter& counter) const override;

 private:
  AgentParams a_, b_;
  std::array<double, 2> weights_;
};

/// Position by position; weights re-derived from the perplexity of the prefix generated so far.
class PackLlmCaptioner : public Captioner {
 public:
  PackLlmCaptioner(AgentParams a, AgentParams b, double lambda = 1.0);
  Caption caption(const Observation& o, DecodeCounter& counter) const override;

 private:
  AgentParams a_, b_;
  double lambda_;
};

}  // namespace mhcg
