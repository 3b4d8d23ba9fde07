#include "mhcg/agent.hpp"

#include <cmath>

#include "mhcg/errors.hpp"
#include "mhcg/generalized_gaussian.hpp"

namespace mhcg {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require_dim(long actual, long expected, const char* what) {
  if (actual != expected)
    throw ConfigError(std::string(what) + ": dimension " + std::to_string(actual) + " != expected " +
                      std::to_string(expected));
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw InputError(std::string(what) + " has non-finite entries");
}

// Appends a matrix row-major.
void append(Vector& out, Eigen::Index& at, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
}
void append(Vector& out, Eigen::Index& at, const Vector& v) {
  out.segment(at, v.size()) = v;
  at += v.size();
}
void extract(const Vector& in, Eigen::Index& at, Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[at++];
}
void extract(const Vector& in, Eigen::Index& at, Vector& v) {
  v = in.segment(at, v.size());
  at += v.size();
}

}  // namespace

std::string ModelDims::to_string() const {
  return "V=" + std::to_string(vocab) + " K=" + std::to_string(latent) + " L=" + std::to_string(length) +
         " D_o=" + std::to_string(obs) + (hidden > 0 ? " H=" + std::to_string(hidden) : std::string());
}

const char* to_string(AgentId id) { return id == AgentId::A ? "A" : "B"; }

void validate(const AgentParams& agent) {
  const auto& d = agent.dims;
  if (d.vocab < 1 || d.latent < 1 || d.length < 1 || d.obs < 1 || d.hidden < 0)
    throw ConfigError("model dims must be positive: " + d.to_string());
  const int features = d.hidden > 0 ? d.hidden : d.latent;
  if (d.hidden > 0) {
    require_dim(agent.xi.hidden_weight.rows(), d.hidden, "xi hidden weight rows");
    require_dim(agent.xi.hidden_weight.cols(), d.latent, "xi hidden weight cols");
    require_dim(agent.xi.hidden_bias.size(), d.hidden, "xi hidden bias");
  } else if (agent.xi.hidden_weight.size() > 0 || agent.xi.hidden_bias.size() > 0) {
    throw ConfigError("xi has a hidden layer but H=0");
  }
  require_dim(static_cast<long>(agent.xi.weight.size()), d.length, "xi positions");
  require_dim(static_cast<long>(agent.xi.bias.size()), d.length, "xi bias positions");
  for (int pos = 0; pos < d.length; ++pos) {
    require_dim(agent.xi.weight[pos].rows(), d.vocab, "xi weight rows");
    require_dim(agent.xi.weight[pos].cols(), features, "xi weight cols");
    require_dim(agent.xi.bias[pos].size(), d.vocab, "xi bias");
  }
  require_dim(agent.phi.embedding.rows(), d.vocab, "phi embedding rows");
  require_dim(agent.phi.embedding.cols(), d.latent, "phi embedding cols");
  require_dim(agent.phi.scale.size(), d.latent, "phi scale");
  if ((agent.phi.scale.array() <= 0.0).any()) throw InvariantError("phi scale must be positive");
  if (!(agent.phi.shape > 0.0)) throw InvariantError("phi shape must be positive");
  require_dim(agent.psi.weight.rows(), d.latent, "psi weight rows");
  require_dim(agent.psi.weight.cols(), d.obs, "psi weight cols");
  require_dim(agent.psi.bias.size(), d.latent, "psi bias");
  require_dim(agent.psi.raw_scale.size(), d.latent, "psi raw scale");
  require_dim(agent.theta.weight.rows(), d.obs, "theta weight rows");
  require_dim(agent.theta.weight.cols(), d.latent, "theta weight cols");
  require_dim(agent.theta.bias.size(), d.obs, "theta bias");
  if (!(agent.theta.noise > 0.0)) throw InvariantError("theta noise must be positive");
}

AgentParams make_agent(const ModelDims& dims, AgentId id) {
  AgentParams a;
  a.dims = dims;
  a.id = id;
  const int features = dims.hidden > 0 ? dims.hidden : dims.latent;
  a.xi.weight.assign(static_cast<std::size_t>(dims.length), Matrix::Zero(dims.vocab, features));
  if (dims.hidden > 0) {
    a.xi.hidden_weight = Matrix::Zero(dims.hidden, dims.latent);
    a.xi.hidden_bias = Vector::Zero(dims.hidden);
  }
  a.xi.bias.assign(static_cast<std::size_t>(dims.length), Vector::Zero(dims.vocab));
  a.phi.embedding = Matrix::Zero(dims.vocab, dims.latent);
  a.phi.scale = Vector::Ones(dims.latent);
  a.phi.shape = 2.0;
  a.psi.weight = Matrix::Zero(dims.latent, dims.obs);
  a.psi.bias = Vector::Zero(dims.latent);
  a.psi.raw_scale = Vector::Constant(dims.latent, positive_map_inverse(1.0));
  a.theta.weight = Matrix::Zero(dims.obs, dims.latent);
  a.theta.bias = Vector::Zero(dims.obs);
  a.theta.noise = 1.0;
  validate(a);
  return a;
}

AgentParams make_random_agent(const ModelDims& dims, AgentId id, Rng& rng, double weight_scale) {
  AgentParams a = make_agent(dims, id);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = weight_scale * rng.normal();
  };
  for (auto& w : a.xi.weight) fill(w);
  for (auto& b : a.xi.bias) fill(b);
  fill(a.xi.hidden_weight);
  fill(a.xi.hidden_bias);
  fill(a.phi.embedding);
  for (Eigen::Index k = 0; k < a.phi.scale.size(); ++k) a.phi.scale[k] = std::exp(0.2 * rng.normal());
  fill(a.psi.weight);
  fill(a.psi.bias);
  for (Eigen::Index k = 0; k < a.psi.raw_scale.size(); ++k)
    a.psi.raw_scale[k] = positive_map_inverse(std::exp(0.2 * rng.normal()));
  fill(a.theta.weight);
  fill(a.theta.bias);
  a.theta.noise = std::exp(0.2 * rng.normal());
  return a;
}

double positive_map(double raw) {
  const double softplus = raw > 30.0 ? raw : std::log1p(std::exp(raw));
  return kScaleFloor + softplus;
}

double positive_map_derivative(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

double positive_map_inverse(double value) {
  const double y = value - kScaleFloor;
  if (!(y > 0.0)) throw InvariantError("positive_map_inverse: value below floor");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// --- image encoder -------------------------------------------------------

Latent image_encoder_mean(const ImageEncoderParams& psi, const Observation& o) {
  require_dim(o.size(), psi.weight.cols(), "observation");
  require_finite(o, "observation");
  return psi.weight * o + psi.bias;
}

Vector image_encoder_scale(const ImageEncoderParams& psi) {
  return psi.raw_scale.unaryExpr([](double r) { return positive_map(r); });
}

Latent encode_image(const ImageEncoderParams& psi, const Observation& o, Rng& rng) {
  Latent z = image_encoder_mean(psi, o);
  const Vector s = image_encoder_scale(psi);
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] += s[k] * rng.normal();
  return z;
}

double image_encoder_logpdf(const ImageEncoderParams& psi, const Latent& z, const Observation& o) {
  require_dim(z.size(), psi.weight.rows(), "latent");
  const Vector mean = image_encoder_mean(psi, o);
  const Vector s = image_encoder_scale(psi);
  double lp = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double r = (z[k] - mean[k]) / s[k];
    lp += -kHalfLog2Pi - std::log(s[k]) - 0.5 * r * r;
  }
  return lp;
}

// --- text decoder --------------------------------------------------------

Vector decoder_features(const TextDecoderParams& xi, const Latent& z) {
  if (!xi.has_hidden()) {
    require_dim(z.size(), xi.weight.front().cols(), "latent");
    return z;
  }
  require_dim(z.size(), xi.hidden_weight.cols(), "latent");
  return (xi.hidden_weight * z + xi.hidden_bias).array().tanh();
}

Matrix text_decoder_logits(const TextDecoderParams& xi, const Latent& z) {
  const auto length = static_cast<Eigen::Index>(xi.weight.size());
  const Vector h = decoder_features(xi, z);
  Matrix logits(length, xi.weight.front().rows());
  for (Eigen::Index pos = 0; pos < length; ++pos)
    logits.row(pos) = (xi.weight[pos] * h + xi.bias[pos]).transpose();
  return logits;
}

DecoderForward decoder_forward(const TextDecoderParams& xi, Matrix z) {
  DecoderForward f;
  f.z = std::move(z);
  if (xi.has_hidden()) {
    require_dim(f.z.rows(), xi.hidden_weight.cols(), "latent");
    f.h = ((xi.hidden_weight * f.z).colwise() + xi.hidden_bias).array().tanh();
  } else {
    require_dim(f.z.rows(), xi.weight.front().cols(), "latent");
    f.h = f.z;
  }
  f.logits.reserve(xi.weight.size());
  for (std::size_t pos = 0; pos < xi.weight.size(); ++pos)
    f.logits.push_back((xi.weight[pos] * f.h).colwise() + xi.bias[pos]);
  return f;
}

Matrix log_softmax_cols(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    const double lse = m + std::log((logits.col(c).array() - m).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

void add_decoder_gradient(const TextDecoderParams& xi, const DecoderForward& f, const std::vector<Matrix>& dlogits,
                          TextDecoderParams& grad) {
  Matrix dh;
  if (xi.has_hidden()) dh = Matrix::Zero(f.h.rows(), f.h.cols());
  for (std::size_t pos = 0; pos < xi.weight.size(); ++pos) {
    grad.weight[pos].noalias() += dlogits[pos] * f.h.transpose();
    grad.bias[pos] += dlogits[pos].rowwise().sum();
    if (xi.has_hidden()) dh.noalias() += xi.weight[pos].transpose() * dlogits[pos];
  }
  if (xi.has_hidden()) {
    const Matrix da = dh.array() * (1.0 - f.h.array().square());
    grad.hidden_weight.noalias() += da * f.z.transpose();
    grad.hidden_bias += da.rowwise().sum();
  }
}

TextDecoderParams zeros_like(const TextDecoderParams& xi) {
  TextDecoderParams g;
  for (std::size_t p = 0; p < xi.weight.size(); ++p) {
    g.weight.push_back(Matrix::Zero(xi.weight[p].rows(), xi.weight[p].cols()));
    g.bias.push_back(Vector::Zero(xi.bias[p].size()));
  }
  g.hidden_weight = Matrix::Zero(xi.hidden_weight.rows(), xi.hidden_weight.cols());
  g.hidden_bias = Vector::Zero(xi.hidden_bias.size());
  return g;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

double text_decoder_logprob(const TextDecoderParams& xi, const Caption& c, const Latent& z) {
  const auto length = static_cast<int>(xi.weight.size());
  const auto vocab = static_cast<int>(xi.weight.front().rows());
  validate_caption(c, vocab, length);
  const Matrix lp = log_softmax_rows(text_decoder_logits(xi, z));
  double total = 0.0;
  for (int pos = 0; pos < length; ++pos) total += lp(pos, c[static_cast<std::size_t>(pos)]);
  return total;
}

Caption sample_from_logits(const Matrix& logits, Rng& rng) {
  const Matrix lp = log_softmax_rows(logits);
  std::vector<int> tokens(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index pos = 0; pos < logits.rows(); ++pos) {
    const double u = rng.uniform();
    double acc = 0.0;
    int chosen = static_cast<int>(logits.cols()) - 1;
    for (Eigen::Index t = 0; t < logits.cols(); ++t) {
      acc += std::exp(lp(pos, t));
      if (u < acc) {
        chosen = static_cast<int>(t);
        break;
      }
    }
    tokens[static_cast<std::size_t>(pos)] = chosen;
  }
  return Caption(std::move(tokens));
}

Caption greedy_from_logits(const Matrix& logits) {
  std::vector<int> tokens(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index pos = 0; pos < logits.rows(); ++pos) {
    Eigen::Index best = 0;
    logits.row(pos).maxCoeff(&best);
    tokens[static_cast<std::size_t>(pos)] = static_cast<int>(best);
  }
  return Caption(std::move(tokens));
}

Caption sample_caption(const TextDecoderParams& xi, const Latent& z, Rng& rng) {
  return sample_from_logits(text_decoder_logits(xi, z), rng);
}

// --- text encoder --------------------------------------------------------

Vector text_encoder_mean(const TextEncoderParams& phi, const Caption& c) {
  Vector mu = Vector::Zero(phi.embedding.cols());
  for (int t : c.tokens()) {
    if (t < 0 || t >= phi.embedding.rows()) throw InputError("token id out of range: " + std::to_string(t));
    mu += phi.embedding.row(t).transpose();
  }
  return mu / static_cast<double>(c.size());
}

double text_encoder_logpdf(const TextEncoderParams& phi, const Latent& z, const Caption& c) {
  if (!(phi.shape > 0.0) || (phi.scale.array() <= 0.0).any())
    throw InvariantError("text encoder scale and shape must be positive");
  require_dim(z.size(), phi.embedding.cols(), "latent");
  const Vector mu = text_encoder_mean(phi, c);
  double lp = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) lp += gg::logpdf(z[k], mu[k], phi.scale[k], phi.shape);
  return lp;
}

Latent sample_latent_from_caption(const TextEncoderParams& phi, const Caption& c, Rng& rng) {
  const Vector mu = text_encoder_mean(phi, c);
  Latent z(mu.size());
  for (Eigen::Index k = 0; k < mu.size(); ++k) z[k] = gg::sample(mu[k], phi.scale[k], phi.shape, rng);
  return z;
}

// --- image decoder -------------------------------------------------------

Observation image_decoder_mean(const ImageDecoderParams& theta, const Latent& z) {
  require_dim(z.size(), theta.weight.cols(), "latent");
  return theta.weight * z + theta.bias;
}

double image_decoder_logpdf(const ImageDecoderParams& theta, const Observation& o, const Latent& z) {
  if (!(theta.noise > 0.0)) throw InvariantError("image decoder noise must be positive");
  require_dim(o.size(), theta.weight.rows(), "observation");
  const Vector r = (o - image_decoder_mean(theta, z)) / theta.noise;
  const auto d = static_cast<double>(o.size());
  return -d * (kHalfLog2Pi + std::log(theta.noise)) - 0.5 * r.squaredNorm();
}

// --- outputs -------------------------------------------------------------

Vector decoder_outputs(const TextDecoderParams& xi, const Latent& z) {
  const Matrix logits = text_decoder_logits(xi, z);
  Vector out(logits.size());
  Eigen::Index at = 0;
  append(out, at, logits);
  return out;
}

Vector text_encoder_outputs(const TextEncoderParams& phi, const Caption& c) {
  const auto k = phi.embedding.cols();
  Vector out(2 * k + 1);
  out.head(k) = text_encoder_mean(phi, c);
  out.segment(k, k) = phi.scale;
  out[2 * k] = phi.shape;
  return out;
}

Vector image_encoder_outputs(const ImageEncoderParams& psi, const Observation& o) {
  const auto k = psi.weight.rows();
  Vector out(2 * k);
  out.head(k) = image_encoder_mean(psi, o);
  out.tail(k) = image_encoder_scale(psi);
  return out;
}

Vector image_decoder_outputs(const ImageDecoderParams& theta, const Latent& z) {
  const auto d = theta.weight.rows();
  Vector out(d + 1);
  out.head(d) = image_decoder_mean(theta, z);
  out[d] = theta.noise;
  return out;
}

// --- packing -------------------------------------------------------------

Vector pack(const TextDecoderParams& xi) {
  Eigen::Index n = 0;
  for (std::size_t p = 0; p < xi.weight.size(); ++p) n += xi.weight[p].size() + xi.bias[p].size();
  n += xi.hidden_weight.size() + xi.hidden_bias.size();
  Vector out(n);
  Eigen::Index at = 0;
  for (const auto& w : xi.weight) append(out, at, w);
  for (const auto& b : xi.bias) append(out, at, b);
  append(out, at, xi.hidden_weight);
  append(out, at, xi.hidden_bias);
  return out;
}

void unpack(const Vector& flat, TextDecoderParams& xi) {
  Eigen::Index at = 0;
  for (auto& w : xi.weight) extract(flat, at, w);
  for (auto& b : xi.bias) extract(flat, at, b);
  extract(flat, at, xi.hidden_weight);
  extract(flat, at, xi.hidden_bias);
  require_dim(at, flat.size(), "packed xi");
}

Vector pack(const TextEncoderParams& phi) {
  Vector out(phi.embedding.size() + phi.scale.size() + 1);
  Eigen::Index at = 0;
  append(out, at, phi.embedding);
  append(out, at, Vector(phi.scale.array().log()));
  out[at] = std::log(phi.shape);
  return out;
}

void unpack(const Vector& flat, TextEncoderParams& phi) {
  Eigen::Index at = 0;
  extract(flat, at, phi.embedding);
  Vector log_scale(phi.scale.size());
  extract(flat, at, log_scale);
  phi.scale = log_scale.array().exp();
  phi.shape = std::exp(flat[at++]);
  require_dim(at, flat.size(), "packed phi");
}

Vector pack(const ImageEncoderParams& psi) {
  Vector out(psi.weight.size() + psi.bias.size() + psi.raw_scale.size());
  Eigen::Index at = 0;
  append(out, at, psi.weight);
  append(out, at, psi.bias);
  append(out, at, psi.raw_scale);
  return out;
}

void unpack(const Vector& flat, ImageEncoderParams& psi) {
  Eigen::Index at = 0;
  extract(flat, at, psi.weight);
  extract(flat, at, psi.bias);
  extract(flat, at, psi.raw_scale);
  require_dim(at, flat.size(), "packed psi");
}

Vector pack(const ImageDecoderParams& theta) {
  Vector out(theta.weight.size() + theta.bias.size() + 1);
  Eigen::Index at = 0;
  append(out, at, theta.weight);
  append(out, at, theta.bias);
  out[at] = std::log(theta.noise);
  return out;
}

void unpack(const Vector& flat, ImageDecoderParams& theta) {
  Eigen::Index at = 0;
  extract(flat, at, theta.weight);
  extract(flat, at, theta.bias);
  theta.noise = std::exp(flat[at++]);
  require_dim(at, flat.size(), "packed theta");
}

}  // namespace mhcg
