#pragma once

// Experiment harness: YAML configuration, the shared frozen backbone that
// stands in for large pre-trained vision/language models, toy pre-training,
// method runs, evaluation and result emission (CSV, JSON lines, manifest).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/baselines.hpp"
#include "mhcg/dataset.hpp"
#include "mhcg/game.hpp"
#include "mhcg/metrics.hpp"

namespace mhcg {

enum class ExperimentId { likelihood, category, mcmc_verify };
const char* to_string(ExperimentId id);
ExperimentId experiment_from_string(const std::string& s);

enum class Method { pretrain, finetune, mhcg, kd, ensemble, packllm, weight_average, topline };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct WorldConfig {
  std::string spec_path;  // optional world.json; overrides the generated spec
  WorldDefaults defaults;
  int latent = 8;
  int hidden = 32;  // text decoder hidden width, 0 for a linear decoder
  std::size_t pool = 600;
  double eval_fraction = 0.2;

  bool operator==(const WorldConfig&) const = default;
};

struct BackboneConfig {
  int corpus = 4000;
  double ridge = 1e-3;

  bool operator==(const BackboneConfig&) const = default;
};

struct PretrainConfig {
  int epochs = 40;
  int batch_size = 20;
  double lr_xi = 0.5;
  double lr_phi = 0.02;
  double lr_psi = 1e-4;
  double lr_theta = 0.01;

  bool operator==(const PretrainConfig&) const = default;
};

/// Small enumerable world for the chain checks.
struct VerifyConfig {
  int vocab = 4;
  int length = 3;
  int latent = 3;
  int obs = 3;
  int pairs = 5;
  std::size_t steps = 50000;
  double tolerance = 0.05;
  double weight_scale = 1.0;

  bool operator==(const VerifyConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::category;
  std::uint64_t seed = 1;
  std::vector<Method> methods{Method::pretrain, Method::finetune, Method::mhcg,           Method::kd,
                              Method::ensemble, Method::packllm,  Method::weight_average, Method::topline};
  WorldConfig world;
  BackboneConfig backbone;
  PretrainConfig pretrain;
  GameConfig game;
  double packllm_lambda = 1.0;
  VerifyConfig verify;
  std::string checkpoint_dir;  // reuse pre-trained agents from here when their hash matches

  bool operator==(const ExperimentConfig&) const = default;
};

/// Defaults for a given experiment before any file is applied.
ExperimentConfig default_config(ExperimentId id = ExperimentId::category);

/// Unknown keys and ill-typed values raise ConfigError naming the key and line.
/// An empty document yields default_config().
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, in the schema order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);

/// Hex SHA-256 of bytes / of a file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// --- backbone and pre-training ---------------------------------------------

/// Frozen shared representation: world latent z_w = P o, and token
/// embeddings regressed from a generic corpus covering every category.
/// Each agent sees the backbone through its own orthogonal rotation Q, so
/// agents trained apart share meaning but not coordinates.
struct Backbone {
  Matrix projection;      // K x D_o
  Matrix embedding;       // V x K, in world coordinates
  double residual_std = 1.0;
};

Backbone make_backbone(const WorldSpec& spec, int latent, const BackboneConfig& config, std::uint64_t seed);

/// Random orthogonal K x K matrix.
Matrix random_rotation(int k, Rng& rng);

struct PretrainData {
  std::vector<Observation> observations;
  std::vector<Caption> captions;
};

PretrainData subset(const World& world, const std::vector<std::size_t>& indices);

/// Backbone-initialized agent fitted by maximum likelihood (no replay) on
/// `data`: text encoder, text decoder, image encoder, image decoder in turn.
AgentParams pretrain_agent(const PretrainData& data, const Backbone& backbone, const Matrix& rotation,
                           const ModelDims& dims, AgentId id, const PretrainConfig& config, Rng& rng);

/// Mean over data of log p(z | c; phi) with z = psi mean, plus log p(o | z; theta).
double data_loglik(const AgentParams& agent, const PretrainData& data);

// --- evaluation ------------------------------------------------------------

struct Evaluation {
  CategoryCounts counts;
  DecodeCounter cost;
  double bleu = 0.0;  // mean BLEU@4 against the ground-truth caption
};

Evaluation evaluate(const Captioner& captioner, const World& world, const std::vector<std::size_t>& indices);

/// Category subsets used in reports: own side (common + own-only) and counterpart side.
std::vector<int> own_categories(const CategoryPartition& p, AgentId id);
std::vector<int> counterpart_categories(const CategoryPartition& p, AgentId id);

// --- runs --------------------------------------------------------------------

struct ChainCheck {
  int pair = 0;
  double tv = 0.0;
  bool passed = false;
};

struct ExperimentResult {
  std::filesystem::path dir;
  std::map<std::string, std::vector<RoundReport>> rounds;  // per game-style method
  std::vector<MetricRow> metrics;
  std::vector<ChainCheck> chains;
  bool verification_passed = true;
  std::vector<std::string> files;  // written outputs, relative to dir
};

/// Runs the configured experiment into `out_dir`. A manifest.json recording
/// the full config text, hashes and status is written even when the run fails.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Config text stored in a manifest.
std::string config_from_manifest(const std::filesystem::path& manifest);

}  // namespace mhcg
