#include <Eigen/QR>
#include <algorithm>
#include <cmath>

#include "mhcg/errors.hpp"
#include "mhcg/experiment.hpp"

namespace mhcg {

Matrix random_rotation(int k, Rng& rng) {
  Matrix g(k, k);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(k, k);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix column signs so the factorization, and hence the draw, is unique.
  for (int j = 0; j < k; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

Backbone make_backbone(const WorldSpec& spec, int latent, const BackboneConfig& config, std::uint64_t seed) {
  if (latent < 1) throw ConfigError("backbone: latent dimension must be >= 1");
  Rng rng(seed);
  Backbone bb;
  bb.projection = Matrix(latent, spec.obs);
  const double s = 1.0 / std::sqrt(static_cast<double>(spec.obs));
  for (Eigen::Index i = 0; i < bb.projection.size(); ++i) bb.projection.data()[i] = s * rng.normal();

  const auto n = static_cast<Eigen::Index>(config.corpus);
  Matrix x = Matrix::Zero(n, spec.vocab);
  Matrix y(n, latent);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cats = sample_categories(spec, rng);
    const Observation o = render_observation(spec, cats, rng);
    const Caption c = caption_template(spec, cats);
    for (int t : c.tokens()) x(i, t) += 1.0 / static_cast<double>(spec.length);
    y.row(i) = (bb.projection * o).transpose();
  }
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += config.ridge * static_cast<double>(n);
  bb.embedding = gram.ldlt().solve(x.transpose() * y);
  const Matrix resid = y - x * bb.embedding;
  bb.residual_std = std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size()));
  return bb;
}

PretrainData subset(const World& world, const std::vector<std::size_t>& indices) {
  PretrainData d;
  for (std::size_t i : indices) {
    d.observations.push_back(world.records.at(i).observation);
    d.captions.push_back(world.records.at(i).caption);
  }
  return d;
}

AgentParams pretrain_agent(const PretrainData& data, const Backbone& backbone, const Matrix& rotation,
                           const ModelDims& dims, AgentId id, const PretrainConfig& config, Rng& rng) {
  if (data.observations.empty()) throw InputError("pretrain_agent: empty data subset");
  if (data.observations.size() != data.captions.size()) throw InputError("pretrain_agent: observations != captions");
  if (backbone.projection.rows() != dims.latent || backbone.projection.cols() != dims.obs ||
      backbone.embedding.rows() != dims.vocab)
    throw ConfigError("pretrain_agent: backbone does not match " + dims.to_string());

  AgentParams a = make_agent(dims, id);
  a.psi.weight = rotation * backbone.projection;
  a.psi.raw_scale.setConstant(positive_map_inverse(backbone.residual_std));
  a.phi.embedding = backbone.embedding * rotation.transpose();
  a.phi.scale.setConstant(std::sqrt(2.0) * backbone.residual_std);
  a.phi.shape = 2.0;
  Vector mean_o = Vector::Zero(dims.obs);
  for (const auto& o : data.observations) mean_o += o;
  mean_o /= static_cast<double>(data.observations.size());
  a.theta.bias = mean_o;
  // The decoder's hidden layer starts from this agent's own random draw.
  const double gain = 1.0 / std::sqrt(static_cast<double>(dims.latent));
  for (Eigen::Index i = 0; i < a.xi.hidden_weight.size(); ++i) a.xi.hidden_weight.data()[i] = gain * rng.normal();
  for (Eigen::Index i = 0; i < a.xi.hidden_bias.size(); ++i) a.xi.hidden_bias[i] = 0.5 * rng.normal();

  const std::size_t n = data.observations.size();
  const ReplayBuffer none;
  auto opt = [&](double lr) { return TrainOptions{lr, config.epochs, config.batch_size, 0.0, 0.0}; };

  std::vector<TextExample> text(n);
  for (std::size_t i = 0; i < n; ++i) text[i] = {image_encoder_mean(a.psi, data.observations[i]), data.captions[i]};
  update_block(a.phi, std::span<const TextExample>(text), none, opt(config.lr_phi), rng);

  std::vector<ImageExample> img(n);
  for (std::size_t i = 0; i < n; ++i)
    img[i] = {data.observations[i], sample_latent_from_caption(a.phi, data.captions[i], rng)};
  update_block(a.psi, std::span<const ImageExample>(img), none, opt(config.lr_psi), rng);
  update_block(a.theta, std::span<const ImageExample>(img), none, opt(config.lr_theta), rng);

  for (std::size_t i = 0; i < n; ++i) text[i].z = image_encoder_mean(a.psi, data.observations[i]);
  update_block(a.xi, std::span<const TextExample>(text), none, opt(config.lr_xi), rng);
  return a;
}

double data_loglik(const AgentParams& agent, const PretrainData& data) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.observations.size(); ++i) {
    const Latent z = image_encoder_mean(agent.psi, data.observations[i]);
    s += text_encoder_logpdf(agent.phi, z, data.captions[i]) + image_decoder_logpdf(agent.theta, data.observations[i], z);
  }
  return data.observations.empty() ? 0.0 : s / static_cast<double>(data.observations.size());
}

Evaluation evaluate(const Captioner& captioner, const World& world, const std::vector<std::size_t>& indices) {
  std::vector<std::vector<int>> lexicon;
  for (const auto& cat : world.spec.categories) lexicon.push_back(cat.lexicon);
  Evaluation ev{CategoryCounts(lexicon.size()), {}, 0.0};
  for (std::size_t i : indices) {
    const auto& r = world.records.at(i);
    const Caption c = captioner.caption(r.observation, ev.cost);
    ev.counts.add(match_categories(c, lexicon), r.categories);
    ev.bleu += bleu4(c, {r.caption});
  }
  if (!indices.empty()) ev.bleu /= static_cast<double>(indices.size());
  return ev;
}

std::vector<int> own_categories(const CategoryPartition& p, AgentId id) {
  std::vector<int> out{p.common};
  const auto& side = id == AgentId::A ? p.a_only : p.b_only;
  out.insert(out.end(), side.begin(), side.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> counterpart_categories(const CategoryPartition& p, AgentId id) {
  std::vector<int> out = id == AgentId::A ? p.b_only : p.a_only;
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mhcg
