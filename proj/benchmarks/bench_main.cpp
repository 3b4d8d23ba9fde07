#include <benchmark/benchmark.h>

#include <utility>
#include <vector>

#include "mhcg/game.hpp"
#include "mhcg/learning.hpp"
#include "mhcg/oracle.hpp"

using namespace mhcg;

namespace {

Vector gaussian(int n, Rng& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Caption random_tokens(int vocab, int length, Rng& rng) {
  std::vector<int> t(static_cast<std::size_t>(length));
  for (auto& x : t) x = static_cast<int>(rng.index(static_cast<std::size_t>(vocab)));
  return Caption(std::move(t));
}

// Desk-scale agent shape: 30 tokens, 8-D latent, 6 positions, 16-D observations.
const ModelDims kDims{30, 8, 6, 16, 32};

void BM_DecoderLossAndGradient(benchmark::State& state) {
  Rng rng(1);
  const AgentParams a = make_random_agent(kDims, AgentId::A, rng, 1.0);
  std::vector<TextExample> batch;
  for (int i = 0; i < state.range(0); ++i)
    batch.push_back({gaussian(kDims.latent, rng), random_tokens(kDims.vocab, kDims.length, rng)});
  Vector g;
  for (auto _ : state) {
    const LossTerms t = loss_and_gradient(a.xi, std::span<const TextExample>(batch), ReplayDraw{}, 0.0, 0.0, &g);
    benchmark::DoNotOptimize(t.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DecoderLossAndGradient)->Arg(40)->Arg(200);

void BM_EncoderLossAndGradient(benchmark::State& state) {
  Rng rng(2);
  const AgentParams a = make_random_agent(kDims, AgentId::A, rng, 1.0);
  std::vector<TextExample> batch;
  for (int i = 0; i < 40; ++i)
    batch.push_back({gaussian(kDims.latent, rng), random_tokens(kDims.vocab, kDims.length, rng)});
  Vector g;
  for (auto _ : state) {
    const LossTerms t = loss_and_gradient(a.phi, std::span<const TextExample>(batch), ReplayDraw{}, 0.0, 0.0, &g);
    benchmark::DoNotOptimize(t.total);
  }
}
BENCHMARK(BM_EncoderLossAndGradient);

void BM_PlayRound(benchmark::State& state) {
  Rng rng(3);
  const auto pool = static_cast<std::size_t>(state.range(0));
  AgentSetup sa{make_random_agent(kDims, AgentId::A, rng, 0.7), {}, {}};
  AgentSetup sb{make_random_agent(kDims, AgentId::B, rng, 0.7), {}, {}};
  for (std::size_t i = 0; i < pool; ++i) sa.observations.push_back(gaussian(kDims.obs, rng));
  sb.observations = sa.observations;
  for (std::size_t i = 0; i < 200; ++i) {
    sa.pretrain.push_back({gaussian(kDims.obs, rng), random_tokens(kDims.vocab, kDims.length, rng)});
    sb.pretrain.push_back({gaussian(kDims.obs, rng), random_tokens(kDims.vocab, kDims.length, rng)});
  }
  GameConfig c;
  c.rounds = 1;
  c.learn.epochs = 1;
  c.freeze_image_heads = true;
  const GameState initial = init_game(c, sa, sb);
  for (auto _ : state) {
    state.PauseTiming();
    GameState g = initial;
    state.ResumeTiming();
    benchmark::DoNotOptimize(play_round(g).joint_loglik[0]);
  }
}
BENCHMARK(BM_PlayRound)->Arg(100)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_DetailedBalance(benchmark::State& state) {
  Rng rng(4);
  const ModelDims d{4, 3, 3, 3};
  const AgentParams sp = make_random_agent(d, AgentId::A, rng, 1.0), li = make_random_agent(d, AgentId::B, rng, 1.0);
  const Latent zs = gaussian(3, rng), zl = gaussian(3, rng);
  for (auto _ : state) benchmark::DoNotOptimize(detailed_balance(sp, li, zs, zl).max_violation);
}
BENCHMARK(BM_DetailedBalance)->Unit(benchmark::kMillisecond);

void BM_ProposalStep(benchmark::State& state) {
  Rng rng(5);
  const AgentParams sp = make_random_agent(kDims, AgentId::A, rng, 1.0);
  const Latent z = gaussian(kDims.latent, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sample_caption(sp.xi, z, rng));
}
BENCHMARK(BM_ProposalStep);

}  // namespace

BENCHMARK_MAIN();
