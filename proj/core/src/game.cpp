#include "mhcg/game.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "mhcg/errors.hpp"
#include "mhcg/metrics.hpp"

namespace mhcg {

const char* to_string(AcceptanceMode mode) {
  switch (mode) {
    case AcceptanceMode::approximate: return "approximate";
    case AcceptanceMode::exact_oracle: return "exact-oracle";
    case AcceptanceMode::always_accept: return "always-accept";
  }
  return "?";
}

AcceptanceMode acceptance_mode_from_string(const std::string& s) {
  if (s == "approximate") return AcceptanceMode::approximate;
  if (s == "exact-oracle") return AcceptanceMode::exact_oracle;
  if (s == "always-accept") return AcceptanceMode::always_accept;
  throw ConfigError("unknown acceptance mode '" + s + "' (approximate, exact-oracle, always-accept)");
}

void validate(const GameConfig& config) {
  if (config.rounds < 1) throw ConfigError("game: rounds must be >= 1");
  validate(config.learn);
}

std::string round_report_to_json(const RoundReport& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["acceptance_rate_A"] = r.acceptance_rate[0];
  j["acceptance_rate_B"] = r.acceptance_rate[1];
  j["joint_loglik_A"] = r.joint_loglik[0];
  j["joint_loglik_B"] = r.joint_loglik[1];
  j["wallclock_ms"] = r.wallclock_ms;
  j["learning"] = nlohmann::json::array();
  for (const auto& h : r.learning)
    j["learning"].push_back({{"agent", to_string(h.agent)},
                             {"head", to_string(h.head)},
                             {"initial_loss", h.initial_loss},
                             {"final_loss", h.final_loss},
                             {"epoch_loss", h.epoch_loss}});
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j.dump();
}

double acceptance_ratio(const TextEncoderParams& listener_phi, const Latent& z_li, const Caption& c_star,
                        const Caption& c_li) {
  const double log_r = text_encoder_logpdf(listener_phi, z_li, c_star) - text_encoder_logpdf(listener_phi, z_li, c_li);
  return log_r >= 0.0 ? 1.0 : std::exp(log_r);
}

Judgment judge_ratio(double r, Rng& rng) {
  Judgment j;
  j.ratio = r;
  j.u = rng.uniform();
  j.accepted = j.u <= r;
  return j;
}

namespace {

double mode_ratio(AcceptanceMode mode, const AgentParams& speaker, const AgentParams& listener, const Latent& z_sp,
                  const Latent& z_li, const Caption& c_star, const Caption& c_li, const PosteriorTable* posterior) {
  switch (mode) {
    case AcceptanceMode::approximate: return acceptance_ratio(listener.phi, z_li, c_star, c_li);
    case AcceptanceMode::always_accept: return 1.0;
    case AcceptanceMode::exact_oracle: {
      PosteriorTable local;
      if (!posterior) {
        local = text_encoder_posterior(speaker.phi, z_sp, speaker.dims.vocab, speaker.dims.length);
        posterior = &local;
      }
      const double log_r = exact_log_ratio(speaker.xi, *posterior, listener.phi, z_sp, z_li, c_star, c_li);
      return log_r >= 0.0 ? 1.0 : std::exp(log_r);
    }
  }
  return 0.0;
}

void add_trace(RoundReport& report, AgentId id, Head head, const TrainResult& r) {
  report.learning.push_back({id, head, r.initial_loss, r.final_loss, r.epoch_loss});
  for (const auto& w : r.warnings)
    report.warnings.push_back(std::string(to_string(id)) + "/" + to_string(head) + ": " + w);
}

}  // namespace

Judgment judge(GameState& state, AgentId listener, std::size_t d, const Caption& c_star, Rng& rng) {
  if (d >= state.data_size()) throw InputError("judge: datum index out of range");
  AgentState& li = state.agent(listener);
  const AgentState& sp = state.agent(other(listener));
  const double r =
      mode_ratio(state.config.acceptance, sp.params, li.params, sp.latents[d], li.latents[d], c_star, li.captions[d], nullptr);
  const Judgment j = judge_ratio(r, rng);
  if (j.accepted) li.captions[d] = c_star;
  return j;
}

Caption propose(const AgentParams& speaker, const Latent& z_sp, Rng& rng) { return sample_caption(speaker.xi, z_sp, rng); }

void perceive(GameState& state) {
  for (auto& ag : state.agents)
    for (std::size_t d = 0; d < ag.observations.size(); ++d)
      ag.latents[d] = encode_image(ag.params.psi, ag.observations[d], state.rng);
}

AgentBuffers make_buffers(const AgentParams& params, const std::vector<PretrainSample>& pretrain,
                          std::size_t capacity, Rng& rng) {
  AgentBuffers b{ReplayBuffer(capacity), ReplayBuffer(capacity), ReplayBuffer(capacity), ReplayBuffer(capacity)};
  std::vector<std::size_t> order(pretrain.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t n = std::min(capacity, pretrain.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.index(order.size() - i)]);
    const auto& s = pretrain[order[i]];
    validate_caption(s.c, params.dims.vocab, params.dims.length);
    const Latent z_img = image_encoder_mean(params.psi, s.o);
    const Latent z_txt = sample_latent_from_caption(params.phi, s.c, rng);
    b.xi.push({s.o, z_img, s.c, decoder_outputs(params.xi, z_img)});
    b.phi.push({s.o, z_img, s.c, text_encoder_outputs(params.phi, s.c)});
    b.psi.push({s.o, z_txt, s.c, image_encoder_outputs(params.psi, s.o)});
    b.theta.push({s.o, z_txt, s.c, image_decoder_outputs(params.theta, z_txt)});
  }
  return b;
}

GameState init_game(const GameConfig& config, AgentSetup a, AgentSetup b) {
  validate(config);
  validate(a.params);
  validate(b.params);
  if (!(a.params.dims == b.params.dims))
    throw ConfigError("init_game: agents differ: " + a.params.dims.to_string() + " vs " + b.params.dims.to_string());
  if (a.observations.empty()) throw InputError("init_game: the game needs at least one datum");
  if (a.observations.size() != b.observations.size())
    throw InputError("init_game: both agents must observe the same number of data");
  if (config.acceptance == AcceptanceMode::exact_oracle)
    caption_space_size(a.params.dims.vocab, a.params.dims.length, kMaxEnumeration);

  GameState state;
  state.config = config;
  state.rng = Rng(config.seed);
  AgentSetup* setups[2] = {&a, &b};
  for (int i = 0; i < 2; ++i) {
    auto& ag = state.agents[static_cast<std::size_t>(i)];
    ag.params = std::move(setups[i]->params);
    ag.params.id = static_cast<AgentId>(i);
    ag.observations = std::move(setups[i]->observations);
    for (const auto& o : ag.observations)
      if (o.size() != ag.params.dims.obs) throw ConfigError("init_game: observation dimension mismatch");
    ag.buffers = make_buffers(ag.params, setups[i]->pretrain, config.buffer_capacity, state.rng);
  }
  for (auto& ag : state.agents) {
    const std::size_t D = ag.observations.size();
    ag.latents.resize(D);
    ag.captions.resize(D);
    for (std::size_t d = 0; d < D; ++d) {
      ag.latents[d] = encode_image(ag.params.psi, ag.observations[d], state.rng);
      ag.captions[d] = sample_caption(ag.params.xi, ag.latents[d], state.rng);
    }
  }
  return state;
}

std::array<double, 2> mean_joint_loglik(const GameState& state) {
  const auto& A = state.agents[0];
  const auto& B = state.agents[1];
  std::array<double, 2> out{};
  const std::size_t D = state.data_size();
  for (std::size_t x = 0; x < 2; ++x) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d)
      s += joint_caption_loglik(A.params.phi, B.params.phi, A.latents[d], B.latents[d], state.agents[x].captions[d]);
    out[x] = s / static_cast<double>(D);
  }
  return out;
}

RoundReport play_round(GameState& state) {
  const auto start = std::chrono::steady_clock::now();
  RoundReport report;
  report.round = ++state.round;
  const std::size_t D = state.data_size();
  auto& rng = state.rng;

  perceive(state);
  for (AgentId speaker : {AgentId::A, AgentId::B}) {
    const AgentId listener = other(speaker);
    const AgentState& sp = state.agent(speaker);
    std::size_t accepted = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const Caption c_star = propose(sp.params, sp.latents[d], rng);
      if (judge(state, listener, d, c_star, rng).accepted) ++accepted;
    }
    report.acceptance_rate[static_cast<std::size_t>(index_of(listener))] =
        static_cast<double>(accepted) / static_cast<double>(D);
  }
  report.joint_loglik = mean_joint_loglik(state);

  if (state.config.learning) {
    const LearnConfig& lc = state.config.learn;
    auto options = [&](double lr) { return TrainOptions{lr, lc.epochs, lc.batch_size, lc.alpha, lc.beta}; };
    for (auto& ag : state.agents) {
      std::vector<TextExample> text(D);
      for (std::size_t d = 0; d < D; ++d) text[d] = {ag.latents[d], ag.captions[d]};
      const std::span<const TextExample> view(text);
      add_trace(report, ag.params.id, Head::text_decoder,
                update_block(ag.params.xi, view, ag.buffers.xi, options(lc.lr_xi), rng));
      add_trace(report, ag.params.id, Head::text_encoder,
                update_block(ag.params.phi, view, ag.buffers.phi, options(lc.lr_phi), rng));
    }
    for (auto& ag : state.agents)
      for (std::size_t d = 0; d < D; ++d) ag.latents[d] = sample_latent_from_caption(ag.params.phi, ag.captions[d], rng);
    if (!state.config.freeze_image_heads) {
      for (auto& ag : state.agents) {
        std::vector<ImageExample> img(D);
        for (std::size_t d = 0; d < D; ++d) img[d] = {ag.observations[d], ag.latents[d]};
        const std::span<const ImageExample> view(img);
        add_trace(report, ag.params.id, Head::image_encoder,
                  update_block(ag.params.psi, view, ag.buffers.psi, options(lc.lr_psi), rng));
        add_trace(report, ag.params.id, Head::image_decoder,
                  update_block(ag.params.theta, view, ag.buffers.theta, options(lc.lr_theta), rng));
      }
    }
  }

  report.wallclock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  state.reports.push_back(report);
  return report;
}

std::vector<Caption> run_frozen_chain(const AgentParams& speaker, const AgentParams& listener, const Latent& z_sp,
                                      const Latent& z_li, Caption start, std::size_t steps, AcceptanceMode mode,
                                      Rng& rng) {
  validate_caption(start, listener.dims.vocab, listener.dims.length);
  std::optional<PosteriorTable> posterior;
  if (mode == AcceptanceMode::exact_oracle)
    posterior = text_encoder_posterior(speaker.phi, z_sp, speaker.dims.vocab, speaker.dims.length);
  std::vector<Caption> chain;
  chain.reserve(steps);
  Caption current = std::move(start);
  for (std::size_t t = 0; t < steps; ++t) {
    const Caption c_star = propose(speaker, z_sp, rng);
    const double r = mode_ratio(mode, speaker, listener, z_sp, z_li, c_star, current, posterior ? &*posterior : nullptr);
    if (judge_ratio(r, rng).accepted) current = c_star;
    chain.push_back(current);
  }
  return chain;
}

}  // namespace mhcg
