#include "mhcg/learning.hpp"

#include "mhcg/generalized_gaussian.hpp"

namespace mhcg {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Matrix stack_latents(const std::vector<const ReplayEntry*>& entries) {
  Matrix z(entries.front()->z.size(), static_cast<Eigen::Index>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) z.col(static_cast<Eigen::Index>(i)) = entries[i]->z;
  return z;
}

double mean_or_zero(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

LossTerms combine(double expectation, double matching, double replay, double alpha, double beta) {
  return {expectation, matching, replay, expectation + alpha * matching + beta * replay};
}

// --- text decoder ---------------------------------------------------------

// Summed -log q(c_i | z_i) over the columns of z; accumulates weight * gradient.
double decoder_nll(const TextDecoderParams& xi, Matrix z, const std::vector<const Caption*>& captions, double weight,
                   TextDecoderParams* grad) {
  if (captions.empty()) return 0.0;
  const DecoderForward f = decoder_forward(xi, std::move(z));
  double nll = 0.0;
  std::vector<Matrix> dlogits;
  for (std::size_t pos = 0; pos < f.logits.size(); ++pos) {
    Matrix lp = log_softmax_cols(f.logits[pos]);
    for (std::size_t i = 0; i < captions.size(); ++i) nll -= lp((*captions[i])[pos], static_cast<Eigen::Index>(i));
    if (grad) {
      Matrix g = lp.array().exp();
      for (std::size_t i = 0; i < captions.size(); ++i) g((*captions[i])[pos], static_cast<Eigen::Index>(i)) -= 1.0;
      dlogits.push_back(weight * g);
    }
  }
  if (grad) add_decoder_gradient(xi, f, dlogits, *grad);
  return nll;
}

LossTerms decoder_loss(const TextDecoderParams& xi, std::span<const TextExample> batch, const ReplayDraw& draw,
                       double alpha, double beta, TextDecoderParams* grad) {
  std::vector<const Caption*> caps;
  Matrix z(batch.empty() ? 0 : batch.front().z.size(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    z.col(static_cast<Eigen::Index>(i)) = batch[i].z;
    caps.push_back(&batch[i].c);
  }
  const double w = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  const double sum = decoder_nll(xi, std::move(z), caps, w, grad);
  const LossTerms replay = decoder_replay_terms(xi, draw, alpha, beta, grad);
  return combine(mean_or_zero(sum, batch.size()), replay.matching, replay.replay, alpha, beta);
}

// --- text encoder ---------------------------------------------------------

struct EncoderGrad {
  Matrix embedding;
  Vector log_scale;
  double log_shape = 0.0;
};

// -log p(z | c; phi); accumulates weight * gradient when `g` is non-null.
double encoder_nll(const TextEncoderParams& phi, const Latent& z, const Caption& c, double weight, EncoderGrad* g) {
  const Vector mu = text_encoder_mean(phi, c);
  const double beta = phi.shape;
  double nll = 0.0;
  Vector dmu = Vector::Zero(mu.size());
  double dshape = 0.0;
  const double shape_const = -1.0 - gg::digamma(1.0 / beta) / beta;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const double r = z[k] - mu[k];
    const double t = std::abs(r) / phi.scale[k];
    const double tb = std::pow(t, beta);
    nll -= gg::log_normalizer(phi.scale[k], beta) - tb;
    if (g) {
      const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      dmu[k] = t > 0.0 ? -beta * std::pow(t, beta - 1.0) * sign / phi.scale[k] : 0.0;
      g->log_scale[k] += weight * (1.0 - beta * tb);
      dshape += shape_const + (t > 0.0 ? beta * tb * std::log(t) : 0.0);
    }
  }
  if (g) {
    const double per_pos = weight / static_cast<double>(c.size());
    for (int tok : c.tokens()) g->embedding.row(tok) += per_pos * dmu.transpose();
    g->log_shape += weight * dshape;
  }
  return nll;
}

// || h' - (mu(c'), scale, shape) ||^2
double encoder_matching(const TextEncoderParams& phi, const ReplayEntry& e, double weight, EncoderGrad* g) {
  const Vector diff = text_encoder_outputs(phi, e.c) - e.h;
  if (g) {
    const auto K = phi.embedding.cols();
    const Vector dmu = 2.0 * diff.head(K);
    const double per_pos = weight / static_cast<double>(e.c.size());
    for (int tok : e.c.tokens()) g->embedding.row(tok) += per_pos * dmu.transpose();
    g->log_scale += weight * 2.0 * diff.segment(K, K).cwiseProduct(phi.scale);
    g->log_shape += weight * 2.0 * diff[2 * K] * phi.shape;
  }
  return diff.squaredNorm();
}

LossTerms encoder_loss(const TextEncoderParams& phi, std::span<const TextExample> batch, const ReplayDraw& draw,
                       double alpha, double beta, EncoderGrad* g) {
  double sum = 0.0, match = 0.0, rep = 0.0;
  const double wb = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) sum += encoder_nll(phi, ex.z, ex.c, wb, g);
  const double wm = draw.matching.empty() ? 0.0 : alpha / static_cast<double>(draw.matching.size());
  for (const auto* e : draw.matching) match += encoder_matching(phi, *e, wm, g);
  const double wr = draw.replay.empty() ? 0.0 : beta / static_cast<double>(draw.replay.size());
  for (const auto* e : draw.replay) rep += encoder_nll(phi, e->z, e->c, wr, g);
  return combine(mean_or_zero(sum, batch.size()), mean_or_zero(match, draw.matching.size()),
                 mean_or_zero(rep, draw.replay.size()), alpha, beta);
}

// --- image encoder --------------------------------------------------------

struct ImageEncoderGrad {
  Matrix weight;
  Vector bias;
  Vector raw_scale;
};

double image_encoder_nll(const ImageEncoderParams& psi, const Latent& z, const Observation& o, double weight,
                         ImageEncoderGrad* g) {
  const Vector mean = image_encoder_mean(psi, o);
  const Vector s = image_encoder_scale(psi);
  double nll = 0.0;
  Vector dmean(mean.size());
  for (Eigen::Index k = 0; k < mean.size(); ++k) {
    const double r = z[k] - mean[k];
    nll += kHalfLog2Pi + std::log(s[k]) + 0.5 * r * r / (s[k] * s[k]);
    if (g) {
      dmean[k] = -r / (s[k] * s[k]);
      const double ds = 1.0 / s[k] - r * r / (s[k] * s[k] * s[k]);
      g->raw_scale[k] += weight * ds * positive_map_derivative(psi.raw_scale[k]);
    }
  }
  if (g) {
    g->weight.noalias() += weight * dmean * o.transpose();
    g->bias += weight * dmean;
  }
  return nll;
}

double image_encoder_matching(const ImageEncoderParams& psi, const ReplayEntry& e, double weight,
                              ImageEncoderGrad* g) {
  const Vector diff = image_encoder_outputs(psi, e.o) - e.h;
  if (g) {
    const auto K = psi.weight.rows();
    const Vector dmean = 2.0 * diff.head(K);
    g->weight.noalias() += weight * dmean * e.o.transpose();
    g->bias += weight * dmean;
    for (Eigen::Index k = 0; k < K; ++k)
      g->raw_scale[k] += weight * 2.0 * diff[K + k] * positive_map_derivative(psi.raw_scale[k]);
  }
  return diff.squaredNorm();
}

LossTerms image_encoder_loss(const ImageEncoderParams& psi, std::span<const ImageExample> batch,
                             const ReplayDraw& draw, double alpha, double beta, ImageEncoderGrad* g) {
  double sum = 0.0, match = 0.0, rep = 0.0;
  const double wb = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) sum += image_encoder_nll(psi, ex.z, ex.o, wb, g);
  const double wm = draw.matching.empty() ? 0.0 : alpha / static_cast<double>(draw.matching.size());
  for (const auto* e : draw.matching) match += image_encoder_matching(psi, *e, wm, g);
  const double wr = draw.replay.empty() ? 0.0 : beta / static_cast<double>(draw.replay.size());
  for (const auto* e : draw.replay) rep += image_encoder_nll(psi, e->z, e->o, wr, g);
  return combine(mean_or_zero(sum, batch.size()), mean_or_zero(match, draw.matching.size()),
                 mean_or_zero(rep, draw.replay.size()), alpha, beta);
}

// --- image decoder --------------------------------------------------------

struct ImageDecoderGrad {
  Matrix weight;
  Vector bias;
  double log_noise = 0.0;
};

double image_decoder_nll(const ImageDecoderParams& theta, const Observation& o, const Latent& z, double weight,
                         ImageDecoderGrad* g) {
  const Vector r = o - image_decoder_mean(theta, z);
  const double var = theta.noise * theta.noise;
  const auto d = static_cast<double>(o.size());
  const double nll = d * (kHalfLog2Pi + std::log(theta.noise)) + 0.5 * r.squaredNorm() / var;
  if (g) {
    const Vector dmean = -r / var;
    g->weight.noalias() += weight * dmean * z.transpose();
    g->bias += weight * dmean;
    g->log_noise += weight * (d - r.squaredNorm() / var);
  }
  return nll;
}

double image_decoder_matching(const ImageDecoderParams& theta, const ReplayEntry& e, double weight,
                              ImageDecoderGrad* g) {
  const Vector diff = image_decoder_outputs(theta, e.z) - e.h;
  if (g) {
    const auto D = theta.weight.rows();
    const Vector dmean = 2.0 * diff.head(D);
    g->weight.noalias() += weight * dmean * e.z.transpose();
    g->bias += weight * dmean;
    g->log_noise += weight * 2.0 * diff[D] * theta.noise;
  }
  return diff.squaredNorm();
}

LossTerms image_decoder_loss(const ImageDecoderParams& theta, std::span<const ImageExample> batch,
                             const ReplayDraw& draw, double alpha, double beta, ImageDecoderGrad* g) {
  double sum = 0.0, match = 0.0, rep = 0.0;
  const double wb = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) sum += image_decoder_nll(theta, ex.o, ex.z, wb, g);
  const double wm = draw.matching.empty() ? 0.0 : alpha / static_cast<double>(draw.matching.size());
  for (const auto* e : draw.matching) match += image_decoder_matching(theta, *e, wm, g);
  const double wr = draw.replay.empty() ? 0.0 : beta / static_cast<double>(draw.replay.size());
  for (const auto* e : draw.replay) rep += image_decoder_nll(theta, e->o, e->z, wr, g);
  return combine(mean_or_zero(sum, batch.size()), mean_or_zero(match, draw.matching.size()),
                 mean_or_zero(rep, draw.replay.size()), alpha, beta);
}

}  // namespace

const char* to_string(Head head) {
  switch (head) {
    case Head::text_decoder: return "xi";
    case Head::text_encoder: return "phi";
    case Head::image_encoder: return "psi";
    case Head::image_decoder: return "theta";
  }
  return "?";
}

void validate(const LearnConfig& cfg) {
  if (!(cfg.lr_xi > 0 && cfg.lr_phi > 0 && cfg.lr_psi > 0 && cfg.lr_theta > 0))
    throw ConfigError("learning rates must be positive");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.alpha < 0 || cfg.beta < 0) throw ConfigError("replay weights alpha and beta must be non-negative");
}

bool ReplayBuffer::push(ReplayEntry entry) {
  if (entries_.size() >= capacity_) return false;
  entries_.push_back(std::move(entry));
  return true;
}

std::vector<const ReplayEntry*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<const ReplayEntry*> out;
  if (entries_.empty()) return out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&entries_[rng.index(entries_.size())]);
  return out;
}

ReplayDraw ReplayDraw::draw(const ReplayBuffer& buffer, std::size_t n, Rng& rng) {
  ReplayDraw d;
  d.matching = buffer.sample(n, rng);
  d.replay = buffer.sample(n, rng);
  return d;
}

ReplayDraw ReplayDraw::whole(const ReplayBuffer& buffer) {
  ReplayDraw d;
  for (const auto& e : buffer.entries()) {
    d.matching.push_back(&e);
    d.replay.push_back(&e);
  }
  return d;
}

LossTerms decoder_replay_terms(const TextDecoderParams& xi, const ReplayDraw& draw, double alpha, double beta,
                               TextDecoderParams* grad) {
  double match = 0.0, rep = 0.0;
  if (!draw.matching.empty()) {
    const double wm = alpha / static_cast<double>(draw.matching.size());
    const auto n = static_cast<Eigen::Index>(draw.matching.size());
    const auto V = xi.bias.front().size();
    const DecoderForward f = decoder_forward(xi, stack_latents(draw.matching));
    std::vector<Matrix> dlogits;
    for (std::size_t pos = 0; pos < f.logits.size(); ++pos) {
      // stored outputs are the logits flattened position-major
      Matrix diff = f.logits[pos];
      for (Eigen::Index i = 0; i < n; ++i)
        diff.col(i) -= draw.matching[static_cast<std::size_t>(i)]->h.segment(static_cast<Eigen::Index>(pos) * V, V);
      match += diff.squaredNorm();
      if (grad) dlogits.push_back(2.0 * wm * diff);
    }
    if (grad) add_decoder_gradient(xi, f, dlogits, *grad);
  }
  if (!draw.replay.empty()) {
    const double wr = beta / static_cast<double>(draw.replay.size());
    std::vector<const Caption*> caps;
    for (const auto* e : draw.replay) caps.push_back(&e->c);
    rep = decoder_nll(xi, stack_latents(draw.replay), caps, wr, grad);
  }
  return combine(0.0, mean_or_zero(match, draw.matching.size()), mean_or_zero(rep, draw.replay.size()), alpha,
                 beta);
}

// --- public loss/gradient overloads ---------------------------------------

LossTerms loss_and_gradient(const TextDecoderParams& xi, std::span<const TextExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad) {
  if (!grad) return decoder_loss(xi, batch, draw, alpha, beta, nullptr);
  TextDecoderParams g = zeros_like(xi);
  const LossTerms out = decoder_loss(xi, batch, draw, alpha, beta, &g);
  *grad = pack(g);
  return out;
}

LossTerms loss_and_gradient(const TextEncoderParams& phi, std::span<const TextExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad) {
  if (!grad) return encoder_loss(phi, batch, draw, alpha, beta, nullptr);
  EncoderGrad g{Matrix::Zero(phi.embedding.rows(), phi.embedding.cols()), Vector::Zero(phi.scale.size()), 0.0};
  const LossTerms out = encoder_loss(phi, batch, draw, alpha, beta, &g);
  grad->resize(g.embedding.size() + g.log_scale.size() + 1);
  Eigen::Index at = 0;
  for (Eigen::Index r = 0; r < g.embedding.rows(); ++r)
    for (Eigen::Index c = 0; c < g.embedding.cols(); ++c) (*grad)[at++] = g.embedding(r, c);
  grad->segment(at, g.log_scale.size()) = g.log_scale;
  (*grad)[grad->size() - 1] = g.log_shape;
  return out;
}

LossTerms loss_and_gradient(const ImageEncoderParams& psi, std::span<const ImageExample> batch,
                            const ReplayDraw& draw, double alpha, double beta, Vector* grad) {
  if (!grad) return image_encoder_loss(psi, batch, draw, alpha, beta, nullptr);
  ImageEncoderGrad g{Matrix::Zero(psi.weight.rows(), psi.weight.cols()), Vector::Zero(psi.bias.size()),
                     Vector::Zero(psi.raw_scale.size())};
  const LossTerms out = image_encoder_loss(psi, batch, draw, alpha, beta, &g);
  *grad = pack(ImageEncoderParams{g.weight, g.bias, g.raw_scale});
  return out;
}

LossTerms loss_and_gradient(const ImageDecoderParams& theta, std::span<const ImageExample> batch,
                            const ReplayDraw& draw, double alpha, double beta, Vector* grad) {
  if (!grad) return image_decoder_loss(theta, batch, draw, alpha, beta, nullptr);
  ImageDecoderGrad g{Matrix::Zero(theta.weight.rows(), theta.weight.cols()), Vector::Zero(theta.bias.size()), 0.0};
  const LossTerms out = image_decoder_loss(theta, batch, draw, alpha, beta, &g);
  grad->resize(g.weight.size() + g.bias.size() + 1);
  Eigen::Index at = 0;
  for (Eigen::Index r = 0; r < g.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < g.weight.cols(); ++c) (*grad)[at++] = g.weight(r, c);
  grad->segment(at, g.bias.size()) = g.bias;
  (*grad)[grad->size() - 1] = g.log_noise;
  return out;
}

bool diverged(double initial, double final_loss) {
  if (!std::isfinite(final_loss)) return true;
  return final_loss - initial > 9.0 * std::max(1.0, std::abs(initial));
}

}  // namespace mhcg
