#pragma once

// One Inter-ProbVLM agent at desk scale: four probabilistic heads around a
// K-dimensional latent.
//
//   image encoder  q(z | o; psi)   diagonal Gaussian, mean W o + b
//   text decoder   q(c | z; xi)    independent softmax per caption position over
//                                  features h = tanh(U z + a), or h = z without a hidden layer
//   text encoder   p(z | c; phi)   generalized Gaussian around the mean token embedding
//   image decoder  p(o | z; theta) isotropic Gaussian, mean W z + b

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mhcg/caption.hpp"
#include "mhcg/rng.hpp"

namespace mhcg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Latent = Eigen::VectorXd;
using Observation = Eigen::VectorXd;

struct ModelDims {
  int vocab = 0;    // V
  int latent = 0;   // K
  int length = 0;   // L
  int obs = 0;      // D_o
  int hidden = 0;   // H, text decoder hidden width; 0 reads the latent directly

  bool operator==(const ModelDims&) const = default;
  std::string to_string() const;
};

enum class AgentId { A = 0, B = 1 };

inline AgentId other(AgentId id) { return id == AgentId::A ? AgentId::B : AgentId::A; }
inline int index_of(AgentId id) { return static_cast<int>(id); }
const char* to_string(AgentId id);

/// xi: per-position logits A[pos] h + u[pos].
struct TextDecoderParams {
  std::vector<Matrix> weight;  // L of V x F, F = H or K
  std::vector<Vector> bias;    // L of V
  Matrix hidden_weight;        // H x K, empty without a hidden layer
  Vector hidden_bias;          // H

  bool has_hidden() const { return hidden_weight.size() > 0; }
};

/// phi: mean of token embeddings, per-dimension scale, shared shape.
struct TextEncoderParams {
  Matrix embedding;  // V x K
  Vector scale;      // K, > 0
  double shape = 2.0;
};

/// psi: scale = positive_map(raw_scale).
struct ImageEncoderParams {
  Matrix weight;     // K x D_o
  Vector bias;       // K
  Vector raw_scale;  // K
};

/// theta
struct ImageDecoderParams {
  Matrix weight;  // D_o x K
  Vector bias;    // D_o
  double noise = 1.0;
};

struct AgentParams {
  ModelDims dims;
  AgentId id = AgentId::A;
  TextDecoderParams xi;
  TextEncoderParams phi;
  ImageEncoderParams psi;
  ImageDecoderParams theta;
};

/// Throws ConfigError on shape mismatch, InvariantError on non-positive scales.
void validate(const AgentParams& agent);

/// All blocks zero; unit scales; Gaussian shape.
AgentParams make_agent(const ModelDims& dims, AgentId id);
/// Every weight ~ N(0, weight_scale^2); scales near one. Used for verification worlds and tests.
AgentParams make_random_agent(const ModelDims& dims, AgentId id, Rng& rng, double weight_scale);

// Smooth positivity map for image-encoder scales: softplus with a 1e-6 floor.
inline constexpr double kScaleFloor = 1e-6;
double positive_map(double raw);
double positive_map_derivative(double raw);
double positive_map_inverse(double value);

// --- image encoder -------------------------------------------------------

Latent image_encoder_mean(const ImageEncoderParams& psi, const Observation& o);
Vector image_encoder_scale(const ImageEncoderParams& psi);
Latent encode_image(const ImageEncoderParams& psi, const Observation& o, Rng& rng);
double image_encoder_logpdf(const ImageEncoderParams& psi, const Latent& z, const Observation& o);

// --- text decoder --------------------------------------------------------

/// L x V matrix of logits.
/// h(z): the hidden activations, or z itself.
Vector decoder_features(const TextDecoderParams& xi, const Latent& z);
Matrix text_decoder_logits(const TextDecoderParams& xi, const Latent& z);
/// Column-batched decoder pass over latents Z (K x n).
struct DecoderForward {
  Matrix z;                    // K x n
  Matrix h;                    // F x n
  std::vector<Matrix> logits;  // L of V x n
};
DecoderForward decoder_forward(const TextDecoderParams& xi, Matrix z);
/// Column-wise log-softmax.
Matrix log_softmax_cols(const Matrix& logits);
/// Adds d(loss)/d(xi) into `grad` given d(loss)/d(logits) per position (L of V x n).
void add_decoder_gradient(const TextDecoderParams& xi, const DecoderForward& f, const std::vector<Matrix>& dlogits,
                          TextDecoderParams& grad);
TextDecoderParams zeros_like(const TextDecoderParams& xi);
/// Row-wise log-softmax of `logits`.
Matrix log_softmax_rows(const Matrix& logits);
double text_decoder_logprob(const TextDecoderParams& xi, const Caption& c, const Latent& z);
Caption sample_caption(const TextDecoderParams& xi, const Latent& z, Rng& rng);
Caption sample_from_logits(const Matrix& logits, Rng& rng);
Caption greedy_from_logits(const Matrix& logits);

// --- text encoder --------------------------------------------------------

Vector text_encoder_mean(const TextEncoderParams& phi, const Caption& c);
double text_encoder_logpdf(const TextEncoderParams& phi, const Latent& z, const Caption& c);
Latent sample_latent_from_caption(const TextEncoderParams& phi, const Caption& c, Rng& rng);

// --- image decoder -------------------------------------------------------

Observation image_decoder_mean(const ImageDecoderParams& theta, const Latent& z);
double image_decoder_logpdf(const ImageDecoderParams& theta, const Observation& o, const Latent& z);

// --- model outputs stored in replay buffers ------------------------------

/// Flattened logits, row-major (pos, token).
Vector decoder_outputs(const TextDecoderParams& xi, const Latent& z);
/// (mu(c), alpha, beta)
Vector text_encoder_outputs(const TextEncoderParams& phi, const Caption& c);
/// (mean, scale)
Vector image_encoder_outputs(const ImageEncoderParams& psi, const Observation& o);
/// (mean, noise)
Vector image_decoder_outputs(const ImageDecoderParams& theta, const Latent& z);

// --- unconstrained packing -----------------------------------------------
// Flat row-major vectors; positive scalars (phi scale and shape, theta
// noise) are stored as logarithms so gradient steps keep them positive.

Vector pack(const TextDecoderParams& xi);
Vector pack(const TextEncoderParams& phi);
Vector pack(const ImageEncoderParams& psi);
Vector pack(const ImageDecoderParams& theta);
void unpack(const Vector& flat, TextDecoderParams& xi);
void unpack(const Vector& flat, TextEncoderParams& phi);
void unpack(const Vector& flat, ImageEncoderParams& psi);
void unpack(const Vector& flat, ImageDecoderParams& theta);

}  // namespace mhcg
