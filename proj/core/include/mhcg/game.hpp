#pragma once

// The captioning game: per round each agent perceives every datum, the
// speaker proposes a caption, the listener accepts it with the
// Metropolis-Hastings probability, roles swap, and both agents learn from
// the captions they now hold.
//
// RNG consumption per round, all from GameState::rng in this order:
//   perception A (d ascending), perception B (d ascending);
//   speaker A: for each d, proposal then u; speaker B likewise;
//   when learning is enabled: learning of A (xi, phi), then B (xi, phi);
//   latent resampling for A then B; learning of A (psi, theta), then
//   B (psi, theta) unless the image heads are frozen.
// u is drawn even when acceptance is forced, so an always-accept run consumes
// the same stream as an MH run.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/learning.hpp"
#include "mhcg/oracle.hpp"

namespace mhcg {

enum class AcceptanceMode {
  approximate,    // listener-likelihood ratio
  exact_oracle,   // untruncated ratio with the enumerated speaker posterior
  always_accept,  // r = 1: the fine-tune baseline
};
const char* to_string(AcceptanceMode mode);
AcceptanceMode acceptance_mode_from_string(const std::string& s);

struct GameConfig {
  int rounds = 30;
  AcceptanceMode acceptance = AcceptanceMode::approximate;
  bool freeze_image_heads = false;
  bool learning = true;
  std::uint64_t seed = 0;
  LearnConfig learn;
  std::size_t buffer_capacity = 200;

  bool operator==(const GameConfig&) const = default;
};

void validate(const GameConfig& config);

/// One pre-training pair used to fill the replay buffers.
struct PretrainSample {
  Observation o;
  Caption c;
};

struct AgentSetup {
  AgentParams params;
  std::vector<Observation> observations;  // the agent's view of each game datum
  std::vector<PretrainSample> pretrain;
};

struct AgentState {
  AgentParams params;
  std::vector<Observation> observations;
  std::vector<Latent> latents;
  std::vector<Caption> captions;
  AgentBuffers buffers;
};

struct HeadTrace {
  AgentId agent = AgentId::A;
  Head head = Head::text_decoder;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

struct RoundReport {
  int round = 0;                             // 1-based
  std::array<double, 2> acceptance_rate{};   // as listener, indexed by AgentId
  std::array<double, 2> joint_loglik{};      // mean over data of the agent's caption under both encoders
  double wallclock_ms = 0.0;
  std::vector<HeadTrace> learning;
  std::vector<std::string> warnings;
};

/// {round, acceptance_rate_A, acceptance_rate_B, joint_loglik_A, joint_loglik_B, wallclock_ms, learning}
std::string round_report_to_json(const RoundReport& report);

struct GameState {
  GameConfig config;
  std::array<AgentState, 2> agents;
  Rng rng;
  int round = 0;
  std::vector<RoundReport> reports;

  std::size_t data_size() const { return agents[0].observations.size(); }
  AgentState& agent(AgentId id) { return agents[static_cast<std::size_t>(index_of(id))]; }
  const AgentState& agent(AgentId id) const { return agents[static_cast<std::size_t>(index_of(id))]; }
};

/// min(1, exp(log p(z_li | c*) - log p(z_li | c_li))).
double acceptance_ratio(const TextEncoderParams& listener_phi, const Latent& z_li, const Caption& c_star,
                        const Caption& c_li);

struct Judgment {
  bool accepted = false;
  double ratio = 0.0;
  double u = 0.0;
};

/// Draws u ~ U[0,1) and accepts iff u <= r.
Judgment judge_ratio(double r, Rng& rng);

/// Judgment of datum d by `listener` against the current speaker's proposal;
/// replaces the listener's caption on acceptance.
Judgment judge(GameState& state, AgentId listener, std::size_t d, const Caption& c_star, Rng& rng);

Caption propose(const AgentParams& speaker, const Latent& z_sp, Rng& rng);

/// Samples z_d ~ q(z | o_d; psi) for both agents.
void perceive(GameState& state);

/// Fills replay buffers from the pre-training samples and draws the initial
/// captions from each agent's own decoder. Throws on D = 0 or mismatched agents.
GameState init_game(const GameConfig& config, AgentSetup a, AgentSetup b);

/// Replay buffers for one agent: min(capacity, |pretrain|) samples, outputs
/// recorded with the agent's current parameters.
AgentBuffers make_buffers(const AgentParams& params, const std::vector<PretrainSample>& pretrain,
                          std::size_t capacity, Rng& rng);

RoundReport play_round(GameState& state);

/// Mean joint caption log-likelihood of each agent's held captions.
std::array<double, 2> mean_joint_loglik(const GameState& state);

/// Listener caption chain with frozen parameters and fixed latents: `steps`
/// proposal+judgment steps, returning the listener caption after each.
std::vector<Caption> run_frozen_chain(const AgentParams& speaker, const AgentParams& listener, const Latent& z_sp,
                                      const Latent& z_li, Caption start, std::size_t steps, AcceptanceMode mode,
                                      Rng& rng);

}  // namespace mhcg
