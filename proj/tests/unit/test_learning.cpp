#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mhcg/errors.hpp"
#include "mhcg/learning.hpp"
#include "test_support.hpp"

using namespace mhcg;
using testing::random_caption;
using testing::random_vector;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

template <class T>
std::span<const T> view(const std::vector<T>& v) {
  return std::span<const T>(v);
}

}  // namespace

TEST_CASE("xi loss: certain captions give zero, uniform decoder gives L log V") {
  const ModelDims d{5, 2, 3, 2};
  AgentParams a = make_agent(d, AgentId::A);
  const std::vector<TextExample> batch{{Latent::Zero(2), Caption{1, 4, 0}}, {Latent::Ones(2), Caption{1, 4, 0}}};
  CHECK(loss_xi(a.xi, view(batch), {}, 0.0, 0.0).total == doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-14));
  for (int pos = 0; pos < 3; ++pos) a.xi.bias[std::size_t(pos)][batch[0].c[std::size_t(pos)]] = 1000.0;
  CHECK(loss_xi(a.xi, view(batch), {}, 0.0, 0.0).total == 0.0);
  CHECK(gradient(a.xi, view(batch), ReplayDraw{}, 0.0, 0.0).norm() < 1e-6);
}

TEST_CASE("replay matching term vanishes when stored outputs are current") {
  Rng rng(1);
  const ModelDims d{4, 3, 2, 3, 5};
  const AgentParams a = make_random_agent(d, AgentId::A, rng, 0.8);
  ReplayBuffer xb(5), pb(5), sb(5), tb(5);
  for (int i = 0; i < 5; ++i) {
    const Latent z = random_vector(3, rng);
    const Observation o = random_vector(3, rng);
    const Caption c = random_caption(4, 2, rng);
    xb.push({o, z, c, decoder_outputs(a.xi, z)});
    pb.push({o, z, c, text_encoder_outputs(a.phi, c)});
    sb.push({o, z, c, image_encoder_outputs(a.psi, o)});
    tb.push({o, z, c, image_decoder_outputs(a.theta, z)});
  }
  const std::vector<TextExample> tx{{random_vector(3, rng), Caption{0, 1}}};
  const std::vector<ImageExample> ix{{random_vector(3, rng), random_vector(3, rng)}};
  CHECK(loss_xi(a.xi, view(tx), ReplayDraw::whole(xb), 1.0, 0.0).matching == 0.0);
  CHECK(loss_phi(a.phi, view(tx), ReplayDraw::whole(pb), 1.0, 0.0).matching == 0.0);
  CHECK(loss_psi(a.psi, view(ix), ReplayDraw::whole(sb), 1.0, 0.0).matching == 0.0);
  CHECK(loss_theta(a.theta, view(ix), ReplayDraw::whole(tb), 1.0, 0.0).matching == 0.0);

  // The matching gradient alone (beta = 0, no batch term difference) is the same with alpha on or off.
  const Vector g0 = gradient(a.xi, view(tx), ReplayDraw::whole(xb), 0.0, 0.0);
  const Vector g1 = gradient(a.xi, view(tx), ReplayDraw::whole(xb), 3.0, 0.0);
  CHECK((g1 - g0).norm() < 1e-12);
  const Vector p0 = gradient(a.psi, view(ix), ReplayDraw::whole(sb), 0.0, 0.0);
  const Vector p1 = gradient(a.psi, view(ix), ReplayDraw::whole(sb), 3.0, 0.0);
  CHECK((p1 - p0).norm() < 1e-12);
}

TEST_CASE("losses without replay equal the direct negative log densities") {
  Rng rng(2);
  const ModelDims d{4, 3, 2, 3, 4};
  const AgentParams a = make_random_agent(d, AgentId::A, rng, 0.8);
  std::vector<TextExample> tx;
  std::vector<ImageExample> ix;
  double xi = 0, phi = 0, psi = 0, theta = 0;
  for (int i = 0; i < 6; ++i) {
    tx.push_back({random_vector(3, rng), random_caption(4, 2, rng)});
    ix.push_back({random_vector(3, rng), random_vector(3, rng)});
    xi -= text_decoder_logprob(a.xi, tx.back().c, tx.back().z) / 6;
    phi -= text_encoder_logpdf(a.phi, tx.back().z, tx.back().c) / 6;
    psi -= image_encoder_logpdf(a.psi, ix.back().z, ix.back().o) / 6;
    theta -= image_decoder_logpdf(a.theta, ix.back().o, ix.back().z) / 6;
  }
  const ReplayBuffer empty(4);
  CHECK(loss_xi(a.xi, view(tx), ReplayDraw::whole(empty), 0.05, 0.05).total == doctest::Approx(xi).epsilon(1e-13));
  CHECK(loss_phi(a.phi, view(tx), ReplayDraw::whole(empty), 0.05, 0.05).total == doctest::Approx(phi).epsilon(1e-13));
  CHECK(loss_psi(a.psi, view(ix), ReplayDraw::whole(empty), 0.05, 0.05).total == doctest::Approx(psi).epsilon(1e-13));
  CHECK(loss_theta(a.theta, view(ix), ReplayDraw::whole(empty), 0.05, 0.05).total ==
        doctest::Approx(theta).epsilon(1e-13));
}

TEST_CASE("phi loss: normalizer at the mean, scale sensitivity, 1-D hand case") {
  Rng rng(3);
  AgentParams a = make_random_agent({4, 3, 2, 2}, AgentId::A, rng, 1.0);
  a.phi.shape = 2.0;
  const Caption c{2, 3};
  const std::vector<TextExample> at_mean{{text_encoder_mean(a.phi, c), c}};
  double norm = 0.0;
  for (int k = 0; k < 3; ++k) norm += std::log(2.0) - std::log(2.0 * a.phi.scale[k] * std::sqrt(std::numbers::pi));
  CHECK(loss_phi(a.phi, view(at_mean), {}, 0.0, 0.0).total == doctest::Approx(-norm).epsilon(1e-13));

  const std::vector<TextExample> off{{Latent(text_encoder_mean(a.phi, c).array() + 0.4), c}};
  const double before = loss_phi(a.phi, view(off), {}, 0.0, 0.0).total;
  a.phi.scale *= 2.0;
  CHECK(loss_phi(a.phi, view(off), {}, 0.0, 0.0).total != before);

  AgentParams one = make_agent({2, 1, 1, 1}, AgentId::A);
  one.phi.embedding(1, 0) = 0.25;
  one.phi.scale[0] = 0.8;
  one.phi.shape = 1.5;
  const std::vector<TextExample> b{{Latent::Constant(1, -0.35), Caption{1}}};
  const double hand = -(std::log(1.5) - std::log(2.0 * 0.8 * std::tgamma(1.0 / 1.5)) - std::pow(0.6 / 0.8, 1.5));
  CHECK(std::abs(loss_phi(one.phi, view(b), {}, 0.0, 0.0).total - hand) < 1e-10);
}

TEST_CASE("psi loss: normalizer at the mean, translation invariance, 1-D hand case") {
  Rng rng(4);
  AgentParams a = make_random_agent({3, 2, 1, 3}, AgentId::A, rng, 1.0);
  const Observation o = random_vector(3, rng);
  const std::vector<ImageExample> at_mean{{o, image_encoder_mean(a.psi, o)}};
  const Vector s = image_encoder_scale(a.psi);
  const double norm = s.array().log().sum() + kLog2Pi;
  CHECK(loss_psi(a.psi, view(at_mean), {}, 0.0, 0.0).total == doctest::Approx(norm).epsilon(1e-13));

  const Latent z = random_vector(2, rng);
  const Vector shift = random_vector(2, rng);
  const std::vector<ImageExample> one{{o, z}}, moved{{o, Latent(z + shift)}};
  const double before = loss_psi(a.psi, view(one), {}, 0.0, 0.0).total;
  a.psi.bias += shift;
  CHECK(loss_psi(a.psi, view(moved), {}, 0.0, 0.0).total == doctest::Approx(before).epsilon(1e-12));

  AgentParams d1 = make_agent({2, 1, 1, 1}, AgentId::A);
  d1.psi.weight(0, 0) = 2.0;
  d1.psi.raw_scale[0] = positive_map_inverse(0.5);
  const std::vector<ImageExample> b{{Observation::Constant(1, 0.3), Latent::Constant(1, 1.1)}};
  const double hand = 0.5 * std::pow((1.1 - 0.6) / 0.5, 2) + std::log(0.5) + 0.5 * kLog2Pi;
  CHECK(std::abs(loss_psi(d1.psi, view(b), {}, 0.0, 0.0).total - hand) < 1e-10);
}

TEST_CASE("theta loss: mean observation with unit noise gives (D_o/2) log 2 pi") {
  Rng rng(5);
  AgentParams a = make_random_agent({3, 2, 1, 4}, AgentId::A, rng, 1.0);
  a.theta.noise = 1.0;
  const Latent z = random_vector(2, rng);
  const std::vector<ImageExample> b{{image_decoder_mean(a.theta, z), z}};
  CHECK(loss_theta(a.theta, view(b), {}, 0.0, 0.0).total == doctest::Approx(2.0 * kLog2Pi).epsilon(1e-14));

  AgentParams d1 = make_agent({2, 1, 1, 1}, AgentId::A);
  d1.theta.noise = 0.7;
  d1.theta.weight(0, 0) = -1.5;
  const std::vector<ImageExample> h{{Observation::Constant(1, 0.2), Latent::Constant(1, 0.4)}};
  const double hand = 0.5 * std::pow((0.2 + 0.6) / 0.7, 2) + std::log(0.7) + 0.5 * kLog2Pi;
  CHECK(std::abs(loss_theta(d1.theta, view(h), {}, 0.0, 0.0).total - hand) < 1e-10);
}

TEST_CASE("gradients match central finite differences on random instances") {
  Rng rng(2024);
  for (int i = 0; i < 20; ++i) {
    const testing::GradientInstance in = testing::make_gradient_instance(rng);
    const testing::InstanceErrors e = testing::gradient_errors(in);
    INFO("instance " << i << " dims " << in.dims.to_string());
    CHECK(e.xi < 1e-4);
    CHECK(e.phi < 1e-4);
    CHECK(e.psi < 1e-4);
    CHECK(e.theta < 1e-4);
    CHECK(e.kd < 1e-4);
  }
}

TEST_CASE("replay draws are two separate samples") {
  ReplayBuffer b(50);
  for (int i = 0; i < 50; ++i) CHECK(b.push({Observation::Zero(1), Latent::Constant(1, i), Caption{0}, Vector()}));
  CHECK_FALSE(b.push({Observation::Zero(1), Latent::Zero(1), Caption{0}, Vector()}));
  CHECK(b.size() == 50u);
  Rng rng(6);
  const ReplayDraw d = ReplayDraw::draw(b, 20, rng);
  CHECK(d.matching.size() == 20u);
  CHECK(d.replay.size() == 20u);
  CHECK(d.matching != d.replay);
  CHECK(ReplayDraw::draw(ReplayBuffer(3), 5, rng).matching.empty());
}

TEST_CASE("update_block: zero learning rate leaves parameters bitwise unchanged") {
  Rng rng(7);
  const testing::GradientInstance in = testing::make_gradient_instance(rng);
  AgentParams a = in.agent;
  const TrainOptions opt{0.0, 3, 2, 0.05, 0.05};
  update_block(a.xi, view(in.text), in.xi_buffer, opt, rng);
  update_block(a.phi, view(in.text), in.phi_buffer, opt, rng);
  update_block(a.psi, view(in.image), in.psi_buffer, opt, rng);
  update_block(a.theta, view(in.image), in.theta_buffer, opt, rng);
  CHECK(pack(a.xi) == pack(in.agent.xi));
  CHECK(pack(a.phi) == pack(in.agent.phi));
  CHECK(pack(a.psi) == pack(in.agent.psi));
  CHECK(pack(a.theta) == pack(in.agent.theta));
}

TEST_CASE("update_block: text-encoder mean converges to the centre of symmetric data") {
  AgentParams a = make_agent({1, 1, 1, 1}, AgentId::A);
  std::vector<TextExample> data;
  const double centre = 1.7;
  for (double dz : {-1.5, -1.0, -0.5, 0.5, 1.0, 1.5}) data.push_back({Latent::Constant(1, centre + dz), Caption{0}});
  Rng rng(8);
  const TrainResult r = update_block(a.phi, view(data), ReplayBuffer(), {0.05, 400, 6, 0.0, 0.0}, rng);
  CHECK(std::abs(a.phi.embedding(0, 0) - centre) < 1e-3);
  CHECK(r.final_loss < r.initial_loss);
}

TEST_CASE("update_block: deterministic under a seed, losses decrease at moderate rates") {
  Rng init(9);
  const testing::GradientInstance in = testing::make_gradient_instance(init);
  AgentParams a = in.agent, b = in.agent;
  Rng r1(10), r2(10);
  const TrainOptions opt{0.02, 10, 2, 0.05, 0.05};
  const TrainResult ra = update_block(a.xi, view(in.text), in.xi_buffer, opt, r1);
  update_block(b.xi, view(in.text), in.xi_buffer, opt, r2);
  CHECK(pack(a.xi) == pack(b.xi));
  CHECK(ra.epoch_loss.size() == 10u);
  CHECK(ra.final_loss <= ra.initial_loss);
  const TrainResult rp = update_block(a.phi, view(in.text), in.phi_buffer, opt, r1);
  CHECK(rp.final_loss <= rp.initial_loss);
  const TrainResult rt = update_block(a.theta, view(in.image), in.theta_buffer, opt, r1);
  CHECK(rt.final_loss <= rt.initial_loss);
}

TEST_CASE("update_block: divergence and bad inputs raise") {
  Rng rng(11);
  const testing::GradientInstance in = testing::make_gradient_instance(rng);
  AgentParams a = in.agent;
  CHECK_THROWS_AS(update_block(a.theta, view(in.image), in.theta_buffer, {1e6, 5, 1, 0.0, 0.0}, rng), DivergenceError);
  CHECK_THROWS_AS(update_block(a.xi, std::span<const TextExample>(), in.xi_buffer, {0.1, 1, 1, 0, 0}, rng),
                  InputError);
  CHECK_THROWS_AS(update_block(a.xi, view(in.text), in.xi_buffer, {-0.1, 1, 1, 0, 0}, rng), ConfigError);
  const TrainResult w = update_block(a.xi, view(in.text), ReplayBuffer(), {0.01, 1, 1, 0.05, 0.0}, rng);
  CHECK_FALSE(w.warnings.empty());
  CHECK(diverged(1.0, std::nan("")));
  CHECK(diverged(1.0, 10.5));
  CHECK_FALSE(diverged(1.0, 9.5));
  CHECK(diverged(-2.0, 17.0));
}
