#include <doctest.h>

#include <cmath>
#include <boost/math/special_functions/gamma.hpp>
#include <numbers>

#include "mhcg/agent.hpp"
#include "mhcg/errors.hpp"
#include "mhcg/generalized_gaussian.hpp"
#include "mhcg/oracle.hpp"
#include "test_support.hpp"

using namespace mhcg;
using testing::random_caption;
using testing::random_vector;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double gaussian_logpdf(double x, double mu, double sigma) {
  const double d = (x - mu) / sigma;
  return -0.5 * d * d - std::log(sigma) - 0.5 * kLog2Pi;
}

}  // namespace

TEST_CASE("image encoder: zero weights and vanishing scale give z = 0") {
  const ModelDims d{4, 3, 2, 5};
  AgentParams a = make_agent(d, AgentId::A);
  a.psi.raw_scale.setConstant(-800.0);
  Rng rng(1);
  const Latent z = encode_image(a.psi, random_vector(5, rng), rng);
  CHECK(z.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("image encoder: identity weights and vanishing scale give z = o") {
  const ModelDims d{4, 3, 2, 3};
  AgentParams a = make_agent(d, AgentId::A);
  a.psi.weight = Matrix::Identity(3, 3);
  a.psi.raw_scale.setConstant(-800.0);
  Rng rng(2);
  const Observation o = random_vector(3, rng);
  CHECK((encode_image(a.psi, o, rng) - o).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("image encoder: reproducible draws and Monte-Carlo mean") {
  Rng init(3);
  const ModelDims d{4, 3, 2, 4};
  const AgentParams a = make_random_agent(d, AgentId::A, init, 0.8);
  const Observation o = random_vector(4, init);
  Rng r1(7), r2(7);
  CHECK(encode_image(a.psi, o, r1) == encode_image(a.psi, o, r2));

  const int n = 100000;
  Vector sum = Vector::Zero(3);
  for (int i = 0; i < n; ++i) sum += encode_image(a.psi, o, r1);
  const Vector mean = image_encoder_mean(a.psi, o);
  CHECK((mean - (a.psi.weight * o + a.psi.bias)).norm() < 1e-12);
  const Vector sigma = image_encoder_scale(a.psi);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(sum[k] / n - mean[k]) < 3.0 * sigma[k] / std::sqrt(double(n)));
}

TEST_CASE("image encoder: logpdf is the diagonal Gaussian") {
  Rng rng(4);
  const AgentParams a = make_random_agent({3, 2, 1, 3}, AgentId::A, rng, 1.0);
  const Observation o = random_vector(3, rng);
  const Latent z = random_vector(2, rng);
  const Vector m = image_encoder_mean(a.psi, o), s = image_encoder_scale(a.psi);
  CHECK(image_encoder_logpdf(a.psi, z, o) ==
        doctest::Approx(gaussian_logpdf(z[0], m[0], s[0]) + gaussian_logpdf(z[1], m[1], s[1])).epsilon(1e-12));
}

TEST_CASE("positive map: floor, inverse and derivative") {
  CHECK(positive_map(-1e4) >= kScaleFloor);
  for (double v : {1e-3, 0.5, 1.0, 7.0}) CHECK(positive_map(positive_map_inverse(v)) == doctest::Approx(v).epsilon(1e-12));
  for (double r : {-3.0, 0.0, 2.0}) {
    const double fd = (positive_map(r + 1e-6) - positive_map(r - 1e-6)) / 2e-6;
    CHECK(positive_map_derivative(r) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("text decoder: all-zero logits give L log(1/V)") {
  const ModelDims d{5, 3, 4, 2};
  const AgentParams a = make_agent(d, AgentId::A);
  Rng rng(1);
  const double lp = text_decoder_logprob(a.xi, random_caption(5, 4, rng), random_vector(3, rng));
  CHECK(lp == doctest::Approx(4.0 * std::log(1.0 / 5.0)).epsilon(1e-14));
}

TEST_CASE("text decoder: normalizes over the whole caption space") {
  for (int hidden : {0, 6}) {
    Rng rng(10 + hidden);
    const ModelDims d{4, 3, 2, 2, hidden};
    const AgentParams a = make_random_agent(d, AgentId::A, rng, 1.2);
    const Latent z = random_vector(3, rng);
    double total = 0.0;
    for (std::size_t i = 0; i < 16; ++i) total += std::exp(text_decoder_logprob(a.xi, caption_from_index(i, 4, 2), z));
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("text decoder: saturated logit and sampler") {
  const ModelDims d{4, 2, 3, 2};
  AgentParams a = make_agent(d, AgentId::A);
  const Caption dominant{2, 0, 3};
  for (int pos = 0; pos < 3; ++pos) a.xi.bias[static_cast<std::size_t>(pos)][dominant[static_cast<std::size_t>(pos)]] = 30.0;
  const Latent z = Latent::Zero(2);
  CHECK(std::abs(text_decoder_logprob(a.xi, dominant, z)) < 1e-9);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(sample_caption(a.xi, z, rng) == dominant);
}

TEST_CASE("text decoder: uniform V=2 L=1 sampler is fair") {
  const AgentParams a = make_agent({2, 1, 1, 1}, AgentId::A);
  Rng rng(6);
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += sample_caption(a.xi, Latent::Zero(1), rng)[0];
  CHECK(std::abs(double(ones) / n - 0.5) < 0.01);
}

TEST_CASE("text decoder: sampler matches the enumerated distribution") {
  Rng rng(8);
  const ModelDims d{3, 2, 3, 2, 4};
  const AgentParams a = make_random_agent(d, AgentId::A, rng, 1.0);
  const Latent z = random_vector(2, rng);
  const PosteriorTable table = decoder_table(a.xi, z, 3, 3);
  std::vector<Caption> draws;
  for (int i = 0; i < 100000; ++i) draws.push_back(sample_caption(a.xi, z, rng));
  CHECK(chain_tv_distance(draws, table, 0) < 0.01);
  std::vector<std::size_t> counts(table.size(), 0);
  for (const auto& c : draws) ++counts[caption_index(c, 3)];
  CHECK(testing::chi_square_p(counts, table.prob) > 0.01);
}

TEST_CASE("generalized Gaussian: shape 2 is the Gaussian") {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const double sigma = 0.2 + rng.uniform() * 3.0, mu = rng.normal(), x = 3.0 * rng.normal();
    CHECK(std::abs(gg::logpdf(x, mu, std::sqrt(2.0) * sigma, 2.0) - gaussian_logpdf(x, mu, sigma)) < 1e-10);
  }
  CHECK(gg::variance(std::sqrt(2.0) * 1.7, 2.0) == doctest::Approx(1.7 * 1.7).epsilon(1e-12));
}

TEST_CASE("text encoder: shape 2 with alpha = sqrt(2) sigma matches the Gaussian closed form") {
  Rng rng(13);
  const ModelDims d{5, 3, 2, 2};
  AgentParams a = make_random_agent(d, AgentId::A, rng, 1.0);
  a.phi.shape = 2.0;
  const Vector sigma = (random_vector(3, rng).array().abs() + 0.3).matrix();
  a.phi.scale = std::sqrt(2.0) * sigma;
  const Caption c{1, 4};
  const Latent z = random_vector(3, rng);
  const Vector mu = text_encoder_mean(a.phi, c);
  CHECK((mu - 0.5 * (a.phi.embedding.row(1) + a.phi.embedding.row(4)).transpose()).norm() < 1e-15);
  double expected = 0.0;
  for (int k = 0; k < 3; ++k) expected += gaussian_logpdf(z[k], mu[k], sigma[k]);
  CHECK(std::abs(text_encoder_logpdf(a.phi, z, c) - expected) < 1e-10);
}

TEST_CASE("text encoder: z at the mean gives the normalizer") {
  Rng rng(14);
  AgentParams a = make_random_agent({4, 3, 3, 2}, AgentId::A, rng, 1.0);
  a.phi.shape = 1.37;
  const Caption c{0, 2, 2};
  double expected = 0.0;
  for (int k = 0; k < 3; ++k)
    expected += std::log(a.phi.shape) - std::log(2.0 * a.phi.scale[k] * std::tgamma(1.0 / a.phi.shape));
  CHECK(text_encoder_logpdf(a.phi, text_encoder_mean(a.phi, c), c) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("text encoder: Laplace density integrates to one") {
  AgentParams a = make_agent({2, 1, 1, 1}, AgentId::A);
  a.phi.embedding(1, 0) = 0.7;
  a.phi.scale[0] = 1.3;
  a.phi.shape = 1.0;
  const Caption c{1};
  auto f = [&](double x) { return std::exp(text_encoder_logpdf(a.phi, Latent::Constant(1, x), c)); };
  // Split at the kink so each panel is smooth.
  const double integral = testing::simpson(f, -50.0, 0.7, 200000) + testing::simpson(f, 0.7, 50.0, 200000);
  CHECK(std::abs(integral - 1.0) < 1e-6);
}

TEST_CASE("text encoder sampler: shape 2 matches the Gaussian (KS)") {
  AgentParams a = make_agent({2, 1, 1, 1}, AgentId::A);
  a.phi.embedding(0, 0) = -0.4;
  a.phi.scale[0] = std::sqrt(2.0) * 0.8;
  Rng rng(15);
  std::vector<double> x;
  for (int i = 0; i < 100000; ++i) x.push_back(sample_latent_from_caption(a.phi, Caption{0}, rng)[0]);
  const double ks = testing::ks_statistic(x, [](double v) { return 0.5 * std::erfc(-(v + 0.4) / (0.8 * std::sqrt(2.0))); });
  CHECK(ks < testing::kKsCritical01);
}

TEST_CASE("text encoder sampler: Laplace and heavy shapes match their density (KS)") {
  for (double shape : {1.0, 0.7, 3.5}) {
    const double alpha = 1.1;
    Rng rng(16);
    std::vector<double> x;
    for (int i = 0; i < 100000; ++i) x.push_back(gg::sample(0.0, alpha, shape, rng));
    // CDF from the regularized incomplete gamma: |x/alpha|^shape ~ Gamma(1/shape).
    auto cdf = [&](double v) {
      const double t = std::pow(std::abs(v) / alpha, shape);
      const double half = 0.5 * boost::math::gamma_p(1.0 / shape, t);
      return v < 0 ? 0.5 - half : 0.5 + half;
    };
    CHECK(testing::ks_statistic(x, cdf) < testing::kKsCritical01);
  }
}

TEST_CASE("text encoder sampler: vanishing scale and determinism") {
  Rng init(17);
  AgentParams a = make_random_agent({4, 3, 2, 2}, AgentId::A, init, 1.0);
  const Caption c{3, 1};
  Rng r1(9), r2(9);
  CHECK(sample_latent_from_caption(a.phi, c, r1) == sample_latent_from_caption(a.phi, c, r2));
  a.phi.scale.setConstant(1e-12);
  CHECK((sample_latent_from_caption(a.phi, c, r1) - text_encoder_mean(a.phi, c)).norm() < 1e-9);
}

TEST_CASE("image decoder: normalizer, translation invariance, quadrature") {
  AgentParams a = make_agent({2, 2, 1, 3}, AgentId::A);
  a.theta.noise = 1.0;
  Rng rng(18);
  const Latent z = random_vector(2, rng);
  a.theta.weight = Matrix::Random(3, 2);
  const Observation m = image_decoder_mean(a.theta, z);
  CHECK(image_decoder_logpdf(a.theta, m, z) == doctest::Approx(-1.5 * kLog2Pi).epsilon(1e-14));

  a.theta.noise = 0.6;
  const Observation o = random_vector(3, rng);
  const Vector shift = random_vector(3, rng);
  const double before = image_decoder_logpdf(a.theta, o, z);
  a.theta.bias += shift;
  CHECK(image_decoder_logpdf(a.theta, Observation(o + shift), z) == doctest::Approx(before).epsilon(1e-12));

  AgentParams one = make_agent({2, 1, 1, 1}, AgentId::A);
  one.theta.noise = 0.4;
  one.theta.bias[0] = 0.3;
  auto f = [&](double x) { return std::exp(image_decoder_logpdf(one.theta, Observation::Constant(1, x), Latent::Zero(1))); };
  CHECK(std::abs(testing::simpson(f, -20.0, 20.0, 20000) - 1.0) < 1e-6);
}

TEST_CASE("all log densities are finite on random valid instances") {
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const ModelDims d{3 + int(rng.index(3)), 1 + int(rng.index(4)), 1 + int(rng.index(3)), 1 + int(rng.index(4)),
                      int(rng.index(2)) * 4};
    const AgentParams a = make_random_agent(d, AgentId::B, rng, 2.0);
    const Caption c = random_caption(d.vocab, d.length, rng);
    const Latent z = random_vector(d.latent, rng, 5.0);
    const Observation o = random_vector(d.obs, rng, 5.0);
    CHECK(std::isfinite(text_decoder_logprob(a.xi, c, z)));
    CHECK(std::isfinite(text_encoder_logpdf(a.phi, z, c)));
    CHECK(std::isfinite(image_encoder_logpdf(a.psi, z, o)));
    CHECK(std::isfinite(image_decoder_logpdf(a.theta, o, z)));
  }
}

TEST_CASE("agent: pack/unpack round trip and validation") {
  Rng rng(20);
  const ModelDims d{4, 3, 2, 5, 6};
  const AgentParams a = make_random_agent(d, AgentId::A, rng, 1.0);
  AgentParams b = make_agent(d, AgentId::A);
  unpack(pack(a.xi), b.xi);
  unpack(pack(a.phi), b.phi);
  unpack(pack(a.psi), b.psi);
  unpack(pack(a.theta), b.theta);
  CHECK((pack(b.xi) - pack(a.xi)).norm() == 0.0);
  CHECK(b.xi.hidden_weight == a.xi.hidden_weight);
  CHECK((b.phi.scale - a.phi.scale).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(std::abs(b.theta.noise - a.theta.noise) < 1e-14);
  CHECK(pack(a.xi).size() == 2 * 4 * 6 + 2 * 4 + 6 * 3 + 6);
  CHECK_NOTHROW(validate(a));
  AgentParams bad = a;
  bad.phi.scale[0] = -1.0;
  CHECK_THROWS_AS(validate(bad), InvariantError);
  bad = a;
  bad.xi.weight[0] = Matrix::Zero(4, 5);
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("decoder features: tanh hidden layer, identity without") {
  Rng rng(21);
  const AgentParams h = make_random_agent({3, 2, 1, 1, 4}, AgentId::A, rng, 1.0);
  const Latent z = random_vector(2, rng);
  CHECK((decoder_features(h.xi, z) - (h.xi.hidden_weight * z + h.xi.hidden_bias).array().tanh().matrix()).norm() <
        1e-15);
  const AgentParams lin = make_random_agent({3, 2, 1, 1, 0}, AgentId::A, rng, 1.0);
  CHECK(decoder_features(lin.xi, z) == z);
  CHECK_FALSE(lin.xi.has_hidden());
}
