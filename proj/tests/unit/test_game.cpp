#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "mhcg/baselines.hpp"
#include "mhcg/errors.hpp"
#include "mhcg/game.hpp"
#include "test_support.hpp"

using namespace mhcg;
using testing::random_caption;
using testing::random_vector;

namespace {

const ModelDims kDims{4, 3, 2, 3, 4};

AgentSetup make_setup(const AgentParams& params, std::size_t data, std::size_t pretrain, Rng& rng) {
  AgentSetup s{params, {}, {}};
  for (std::size_t d = 0; d < data; ++d) s.observations.push_back(random_vector(kDims.obs, rng));
  for (std::size_t i = 0; i < pretrain; ++i)
    s.pretrain.push_back({random_vector(kDims.obs, rng), random_caption(kDims.vocab, kDims.length, rng)});
  return s;
}

GameConfig small_config(std::uint64_t seed) {
  GameConfig c;
  c.rounds = 3;
  c.seed = seed;
  c.buffer_capacity = 8;
  c.learn.lr_xi = 0.05;
  c.learn.lr_phi = 0.01;
  c.learn.lr_psi = 0.01;
  c.learn.lr_theta = 0.01;
  c.learn.epochs = 2;
  c.learn.batch_size = 4;
  return c;
}

GameState small_game(const GameConfig& c, std::uint64_t world_seed = 1) {
  Rng rng(world_seed);
  const AgentParams a = make_random_agent(kDims, AgentId::A, rng, 0.7);
  const AgentParams b = make_random_agent(kDims, AgentId::B, rng, 0.7);
  AgentSetup sa = make_setup(a, 12, 10, rng);
  AgentSetup sb = make_setup(b, 12, 10, rng);
  sb.observations = sa.observations;
  return init_game(c, sa, sb);
}

bool same_params(const AgentParams& x, const AgentParams& y) {
  return pack(x.xi) == pack(y.xi) && pack(x.phi) == pack(y.phi) && pack(x.psi) == pack(y.psi) &&
         pack(x.theta) == pack(y.theta);
}

}  // namespace

TEST_CASE("acceptance ratio: identical, better, and halved likelihoods") {
  Rng rng(1);
  const AgentParams li = make_random_agent(kDims, AgentId::B, rng, 1.0);
  const Latent z = random_vector(3, rng);
  const Caption c1{0, 1}, c2{3, 2};
  CHECK(acceptance_ratio(li.phi, z, c1, c1) == 1.0);
  const double l1 = text_encoder_logpdf(li.phi, z, c1), l2 = text_encoder_logpdf(li.phi, z, c2);
  const Caption& better = l1 > l2 ? c1 : c2;
  const Caption& worse = l1 > l2 ? c2 : c1;
  CHECK(acceptance_ratio(li.phi, z, better, worse) == 1.0);
  CHECK(acceptance_ratio(li.phi, z, worse, better) == doctest::Approx(std::exp(-std::abs(l1 - l2))).epsilon(1e-12));

  // Two one-token captions whose listener densities differ by exactly ln 2.
  AgentParams one = make_agent({2, 1, 1, 1}, AgentId::B);
  one.phi.shape = 1.0;
  one.phi.scale[0] = 1.0;
  one.phi.embedding(0, 0) = 0.0;
  one.phi.embedding(1, 0) = std::log(2.0);
  const Latent z0 = Latent::Constant(1, -1.0);
  CHECK(std::abs(acceptance_ratio(one.phi, z0, Caption{1}, Caption{0}) - 0.5) < 1e-12);
}

TEST_CASE("acceptance ratio is invariant to a constant shift of both log densities") {
  Rng rng(2);
  AgentParams li = make_random_agent(kDims, AgentId::B, rng, 1.0);
  const Latent z = random_vector(3, rng);
  const Caption c1{0, 1}, c2{3, 2};
  const double r = acceptance_ratio(li.phi, z, c1, c2);
  // Translating z and every embedding leaves both deviations, so both log densities, unchanged
  // while the magnitudes involved grow by two orders.
  const Vector shift = random_vector(3, rng, 100.0);
  li.phi.embedding.rowwise() += shift.transpose();
  CHECK(acceptance_ratio(li.phi, Latent(z + shift), c1, c2) == doctest::Approx(r).epsilon(1e-9));
}

TEST_CASE("judgment: certain acceptance and Monte-Carlo frequency at r = 0.5") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) CHECK(judge_ratio(1.0, rng).accepted);
  int acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += judge_ratio(0.5, rng).accepted;
  CHECK(std::abs(double(acc) / n - 0.5) < 0.01);
  const Judgment j = judge_ratio(0.3, rng);
  CHECK(j.accepted == (j.u <= 0.3));
}

TEST_CASE("judgment: always-accept replaces the listener caption regardless of densities") {
  GameConfig c = small_config(4);
  c.acceptance = AcceptanceMode::always_accept;
  GameState s = small_game(c);
  Rng rng(5);
  for (std::size_t d = 0; d < s.data_size(); ++d) {
    const Caption prop{3, 3};
    const Judgment j = judge(s, AgentId::B, d, prop, rng);
    CHECK(j.accepted);
    CHECK(s.agent(AgentId::B).captions[d] == prop);
  }
}

TEST_CASE("init_game: rejects empty data and sizes buffers") {
  Rng rng(6);
  const AgentParams a = make_random_agent(kDims, AgentId::A, rng, 0.7);
  AgentSetup empty{a, {}, {}};
  CHECK_THROWS_AS(init_game(small_config(1), empty, empty), InputError);

  for (std::size_t pre : {3u, 8u, 20u}) {
    AgentSetup s = make_setup(a, 5, pre, rng);
    const GameState g = init_game(small_config(1), s, s);
    CHECK(g.agents[0].buffers.xi.size() == std::min<std::size_t>(8, pre));
    CHECK(g.agents[1].buffers.theta.size() == std::min<std::size_t>(8, pre));
    CHECK(g.agents[0].captions.size() == 5u);
    CHECK(g.agents[0].latents.size() == 5u);
  }
  AgentParams other = make_random_agent({5, 3, 2, 3}, AgentId::B, rng, 0.7);
  CHECK_THROWS_AS(init_game(small_config(1), make_setup(a, 3, 3, rng), make_setup(other, 3, 3, rng)), ConfigError);
}

TEST_CASE("init_game: identical agents draw identically distributed initial captions") {
  Rng rng(7);
  const AgentParams a = make_random_agent({2, 2, 2, 3}, AgentId::A, rng, 0.5);
  AgentSetup s{a, {}, {}};
  const Observation o = random_vector(3, rng);
  for (int d = 0; d < 20000; ++d) s.observations.push_back(o);
  const GameState g = init_game(small_config(8), s, s);
  std::vector<double> fa(4, 0.0), fb(4, 0.0);
  for (std::size_t d = 0; d < g.data_size(); ++d) {
    fa[caption_index(g.agents[0].captions[d], 2)] += 1.0 / 20000;
    fb[caption_index(g.agents[1].captions[d], 2)] += 1.0 / 20000;
  }
  CHECK(tv_distance(fa, fb) < 0.02);
}

TEST_CASE("play_round: same seed gives identical traces") {
  GameState s1 = small_game(small_config(9)), s2 = small_game(small_config(9));
  for (int r = 0; r < 3; ++r) {
    const RoundReport a = play_round(s1), b = play_round(s2);
    CHECK(a.acceptance_rate == b.acceptance_rate);
    CHECK(a.joint_loglik == b.joint_loglik);
    CHECK(a.round == r + 1);
  }
  CHECK(same_params(s1.agents[0].params, s2.agents[0].params));
  CHECK(same_params(s1.agents[1].params, s2.agents[1].params));
  CHECK(s1.agents[1].captions == s2.agents[1].captions);
  CHECK(s1.rng == s2.rng);
}

TEST_CASE("play_round: frozen image heads stay bitwise fixed, others move") {
  GameConfig c = small_config(10);
  c.freeze_image_heads = true;
  GameState s = small_game(c);
  const AgentParams before = s.agents[0].params;
  play_round(s);
  CHECK(pack(s.agents[0].params.psi) == pack(before.psi));
  CHECK(pack(s.agents[0].params.theta) == pack(before.theta));
  CHECK(pack(s.agents[0].params.xi) != pack(before.xi));

  c.freeze_image_heads = false;
  GameState t = small_game(c);
  play_round(t);
  CHECK(pack(t.agents[0].params.psi) != pack(before.psi));
}

TEST_CASE("fine-tune round equals the always-accept game bitwise and reports rate 1") {
  GameConfig c = small_config(11);
  GameState ft = small_game(c);
  c.acceptance = AcceptanceMode::always_accept;
  GameState aa = small_game(c);
  for (int r = 0; r < 3; ++r) {
    const RoundReport a = finetune_round(ft), b = play_round(aa);
    CHECK(a.acceptance_rate[0] == 1.0);
    CHECK(a.acceptance_rate[1] == 1.0);
    CHECK(a.joint_loglik == b.joint_loglik);
  }
  CHECK(ft.config.acceptance == AcceptanceMode::approximate);
  CHECK(same_params(ft.agents[0].params, aa.agents[0].params));
  CHECK(same_params(ft.agents[1].params, aa.agents[1].params));
}

TEST_CASE("play_round: acceptance counts bounded and report serializes") {
  GameState s = small_game(small_config(12));
  const RoundReport r = play_round(s);
  for (double x : r.acceptance_rate) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
  CHECK(r.learning.size() == 8u);
  const auto j = nlohmann::json::parse(round_report_to_json(r));
  for (const char* k : {"round", "acceptance_rate_A", "acceptance_rate_B", "joint_loglik_A", "joint_loglik_B",
                        "wallclock_ms"})
    CHECK(j.contains(k));
  CHECK(j["round"] == 1);
}

TEST_CASE("role symmetry: swapping the agents mirrors the acceptance statistics") {
  Rng rng(13);
  const AgentParams x = make_random_agent(kDims, AgentId::A, rng, 0.7);
  const AgentParams y = make_random_agent(kDims, AgentId::B, rng, 0.7);
  AgentSetup sx = make_setup(x, 400, 4, rng), sy = make_setup(y, 400, 4, rng);
  GameConfig c = small_config(14);
  c.learning = false;
  GameState xy = init_game(c, sx, sy);
  c.seed = 15;
  GameState yx = init_game(c, sy, sx);
  double x_as_listener_1 = 0, x_as_listener_2 = 0;
  for (int r = 0; r < 10; ++r) {
    x_as_listener_1 += play_round(xy).acceptance_rate[0] / 10;
    x_as_listener_2 += play_round(yx).acceptance_rate[1] / 10;
  }
  CHECK(std::abs(x_as_listener_1 - x_as_listener_2) < 0.03);
}

TEST_CASE("frozen chain: valid MH chain against the enumerated target") {
  Rng rng(16);
  const ModelDims d{3, 2, 2, 2};
  const AgentParams sp = make_random_agent(d, AgentId::A, rng, 1.0);
  const AgentParams li = make_random_agent(d, AgentId::B, rng, 1.0);
  const Latent z_sp = random_vector(2, rng), z_li = random_vector(2, rng);
  const auto chain = run_frozen_chain(sp, li, z_sp, z_li, Caption{0, 0}, 50000, AcceptanceMode::approximate, rng);
  CHECK(chain.size() == 50000u);
  CHECK(chain_tv_distance(chain, enumerate_posterior(sp, li, z_sp, z_li, Target::mh_target)) < 0.05);
}

TEST_CASE("exact-oracle acceptance: runs on enumerable worlds only") {
  GameConfig c = small_config(17);
  c.acceptance = AcceptanceMode::exact_oracle;
  GameState s = small_game(c);
  const RoundReport r = play_round(s);
  CHECK(r.round == 1);
  Rng rng(18);
  const AgentParams big = make_random_agent({24, 3, 4, 3}, AgentId::A, rng, 0.5);
  AgentSetup sb{big, {random_vector(3, rng)}, {}};
  CHECK_THROWS_AS(init_game(c, sb, sb), CapabilityError);
  CHECK(acceptance_mode_from_string("always-accept") == AcceptanceMode::always_accept);
  CHECK_THROWS_AS(acceptance_mode_from_string("sometimes"), ConfigError);
}
