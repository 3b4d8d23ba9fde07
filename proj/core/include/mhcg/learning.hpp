#pragma once

// Losses for the four heads, each optionally augmented with the DER++
// replay terms, their analytic gradients, and the SGD loop that applies them.
//
//   L = E_batch[-log density]
//     + alpha * E_{(.',h') ~ M} || h' - h(.') ||^2      (output matching)
//     + beta  * E_{(.'',.'') ~ M} [-log density]         (replayed likelihood)
//
// Stored outputs h are: decoder logits (xi), (mu(c), scale, shape) for phi,
// (mean, scale) for psi and (mean, noise) for theta. Gradients are taken in
// the unconstrained coordinates of `pack`.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/errors.hpp"
#include "mhcg/rng.hpp"

namespace mhcg {

enum class Head { text_decoder, text_encoder, image_encoder, image_decoder };
const char* to_string(Head head);

struct LearnConfig {
  double lr_xi = 1e-4;
  double lr_phi = 1e-6;
  double lr_psi = 1e-4;
  double lr_theta = 1e-4;
  int epochs = 10;
  int batch_size = 40;
  double alpha = 0.05;
  double beta = 0.05;

  bool operator==(const LearnConfig&) const = default;
};

void validate(const LearnConfig& cfg);

struct TextExample {
  Latent z;
  Caption c;
};

struct ImageExample {
  Observation o;
  Latent z;
};

/// One pre-training sample plus the model output recorded when the buffer was filled.
struct ReplayEntry {
  Observation o;
  Latent z;
  Caption c;
  Vector h;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  /// False (and no insertion) once the buffer is full.
  bool push(ReplayEntry entry);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  /// Uniform with replacement.
  std::vector<const ReplayEntry*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<ReplayEntry> entries_;
};

struct AgentBuffers {
  ReplayBuffer xi;
  ReplayBuffer phi;
  ReplayBuffer psi;
  ReplayBuffer theta;
};

/// The two independent buffer samples of one step: (z', c', h') for output
/// matching and (z'', c'', h'') for replayed likelihood.
struct ReplayDraw {
  std::vector<const ReplayEntry*> matching;
  std::vector<const ReplayEntry*> replay;

  static ReplayDraw draw(const ReplayBuffer& buffer, std::size_t n, Rng& rng);
  /// Every entry once in both roles; the deterministic full-buffer objective.
  static ReplayDraw whole(const ReplayBuffer& buffer);
};

struct LossTerms {
  double expectation = 0.0;
  double matching = 0.0;
  double replay = 0.0;
  double total = 0.0;
};

/// The objective and, when `grad` is non-null, its gradient in `pack` coordinates.
LossTerms loss_and_gradient(const TextDecoderParams& xi, std::span<const TextExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad);
LossTerms loss_and_gradient(const TextEncoderParams& phi, std::span<const TextExample> batch, const ReplayDraw& draw,
                            double alpha, double beta, Vector* grad);
LossTerms loss_and_gradient(const ImageEncoderParams& psi, std::span<const ImageExample> batch,
                            const ReplayDraw& draw, double alpha, double beta, Vector* grad);
LossTerms loss_and_gradient(const ImageDecoderParams& theta, std::span<const ImageExample> batch,
                            const ReplayDraw& draw, double alpha, double beta, Vector* grad);

template <class Params, class Example>
LossTerms loss(const Params& p, std::span<const Example> batch, const ReplayDraw& draw, double alpha, double beta) {
  return loss_and_gradient(p, batch, draw, alpha, beta, nullptr);
}

template <class Params, class Example>
Vector gradient(const Params& p, std::span<const Example> batch, const ReplayDraw& draw, double alpha, double beta) {
  Vector g;
  loss_and_gradient(p, batch, draw, alpha, beta, &g);
  return g;
}

// Named entry points matching the four objectives.
inline LossTerms loss_xi(const TextDecoderParams& xi, std::span<const TextExample> b, const ReplayDraw& d,
                         double alpha, double beta) {
  return loss(xi, b, d, alpha, beta);
}
inline LossTerms loss_phi(const TextEncoderParams& phi, std::span<const TextExample> b, const ReplayDraw& d,
                          double alpha, double beta) {
  return loss(phi, b, d, alpha, beta);
}
inline LossTerms loss_psi(const ImageEncoderParams& psi, std::span<const ImageExample> b, const ReplayDraw& d,
                          double alpha, double beta) {
  return loss(psi, b, d, alpha, beta);
}
inline LossTerms loss_theta(const ImageDecoderParams& theta, std::span<const ImageExample> b, const ReplayDraw& d,
                            double alpha, double beta) {
  return loss(theta, b, d, alpha, beta);
}

/// Decoder replay terms alone (shared with distillation). Adds alpha/beta
/// weighted gradients into `grad` when non-null.
LossTerms decoder_replay_terms(const TextDecoderParams& xi, const ReplayDraw& draw, double alpha, double beta,
                               TextDecoderParams* grad);

struct TrainOptions {
  double lr = 0.0;
  int epochs = 1;
  int batch_size = 1;
  double alpha = 0.0;
  double beta = 0.0;
};

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::vector<std::string> warnings;
};

/// Divergence rule: non-finite, or growth beyond ten times the starting scale.
bool diverged(double initial, double final_loss);

/// Plain SGD over shuffled minibatches. Each step draws two fresh, independent
/// buffer samples of minibatch size. lr == 0 leaves `params` bitwise unchanged.
/// Throws DivergenceError per `diverged`.
template <class Params, class Example>
TrainResult update_block(Params& params, std::span<const Example> data, const ReplayBuffer& buffer,
                         const TrainOptions& opt, Rng& rng) {
  if (data.empty()) throw InputError("update_block: empty training batch");
  if (opt.lr < 0.0) throw ConfigError("update_block: learning rate must be non-negative");
  if (opt.epochs < 1 || opt.batch_size < 1) throw ConfigError("update_block: epochs and batch size must be >= 1");

  TrainResult result;
  const bool replay_on = opt.alpha > 0.0 || opt.beta > 0.0;
  if (replay_on && buffer.empty()) result.warnings.emplace_back("replay buffer empty; replay terms are zero");

  const ReplayDraw whole = ReplayDraw::whole(buffer);
  result.initial_loss = loss(params, data, whole, opt.alpha, opt.beta).total;
  if (!std::isfinite(result.initial_loss)) throw DivergenceError("non-finite loss before training");
  if (opt.lr == 0.0) {
    result.final_loss = result.initial_loss;
    return result;
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Example> batch;
  Vector flat = pack(params);
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
      const ReplayDraw draw = replay_on ? ReplayDraw::draw(buffer, batch.size(), rng) : ReplayDraw{};
      const std::span<const Example> view(batch);
      Vector g;
      sum += loss_and_gradient(params, view, draw, opt.alpha, opt.beta, &g).total;
      ++steps;
      if (!g.allFinite()) throw DivergenceError("non-finite gradient");
      flat -= opt.lr * g;
      unpack(flat, params);
    }
    result.epoch_loss.push_back(sum / static_cast<double>(steps));
  }
  result.final_loss = loss(params, data, whole, opt.alpha, opt.beta).total;
  if (diverged(result.initial_loss, result.final_loss))
    throw DivergenceError("loss diverged: " + std::to_string(result.initial_loss) + " -> " +
                          std::to_string(result.final_loss));
  if (result.final_loss > result.initial_loss)
    result.warnings.emplace_back("loss increased over the update epochs");
  return result;
}

}  // namespace mhcg
