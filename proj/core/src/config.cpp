#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <openssl/evp.h>
#include <sstream>

#include "mhcg/errors.hpp"
#include "mhcg/experiment.hpp"

namespace mhcg {

namespace {

struct Names {
  const char* text;
  int value;
};

constexpr Names kExperiments[] = {{"exp1-likelihood", static_cast<int>(ExperimentId::likelihood)},
                                  {"exp2-category", static_cast<int>(ExperimentId::category)},
                                  {"mcmc-verify", static_cast<int>(ExperimentId::mcmc_verify)}};

constexpr Names kMethods[] = {{"pretrain", static_cast<int>(Method::pretrain)},
                              {"finetune", static_cast<int>(Method::finetune)},
                              {"mhcg", static_cast<int>(Method::mhcg)},
                              {"kd", static_cast<int>(Method::kd)},
                              {"ensemble", static_cast<int>(Method::ensemble)},
                              {"packllm", static_cast<int>(Method::packllm)},
                              {"weight-average", static_cast<int>(Method::weight_average)},
                              {"topline", static_cast<int>(Method::topline)}};

template <std::size_t N>
const char* name_of(const Names (&table)[N], int value) {
  for (const auto& n : table)
    if (n.value == value) return n.text;
  return "?";
}

template <std::size_t N>
int value_of(const Names (&table)[N], const std::string& s, const char* what) {
  for (const auto& n : table)
    if (s == n.text) return n.value;
  std::string options;
  for (const auto& n : table) options += std::string(options.empty() ? "" : ", ") + n.text;
  throw ConfigError("unknown " + std::string(what) + " '" + s + "' (" + options + ")");
}

// Walks one mapping, dispatching each key to a handler and rejecting strays.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, const std::string& source)
      : node_(node), path_(std::move(path)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, "expected a mapping");
  }

  template <class T>
  Section& field(const std::string& key, T& out) {
    handlers_[key] = [this, &out, key](const YAML::Node& v) {
      try {
        out = v.as<T>();
      } catch (const YAML::Exception&) {
        fail(v, "invalid value for '" + qualified(key) + "'");
      }
    };
    return *this;
  }

  Section& custom(const std::string& key, std::function<void(const YAML::Node&)> f) {
    handlers_[key] = std::move(f);
    return *this;
  }

  void run() {
    if (!node_ || node_.IsNull()) return;
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      const auto key = it->first.as<std::string>();
      const auto h = handlers_.find(key);
      if (h == handlers_.end()) fail(it->first, "unknown key '" + qualified(key) + "'");
      h->second(it->second);
    }
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const auto mark = at.Mark();
    throw ConfigError(source_ + ":" + std::to_string(mark.line + 1) + ": " + msg);
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::map<std::string, std::function<void(const YAML::Node&)>> handlers_;
};

void parse_learn(const YAML::Node& n, LearnConfig& l, const std::string& source) {
  Section(n, "learn", source)
      .field("lr_xi", l.lr_xi)
      .field("lr_phi", l.lr_phi)
      .field("lr_psi", l.lr_psi)
      .field("lr_theta", l.lr_theta)
      .field("epochs", l.epochs)
      .field("batch_size", l.batch_size)
      .field("alpha", l.alpha)
      .field("beta", l.beta)
      .run();
}

std::string num(double x) { return format_double(x); }

}  // namespace

const char* to_string(ExperimentId id) { return name_of(kExperiments, static_cast<int>(id)); }
ExperimentId experiment_from_string(const std::string& s) {
  return static_cast<ExperimentId>(value_of(kExperiments, s, "experiment"));
}
const char* to_string(Method m) { return name_of(kMethods, static_cast<int>(m)); }
Method method_from_string(const std::string& s) { return static_cast<Method>(value_of(kMethods, s, "method")); }

ExperimentConfig default_config(ExperimentId id) {
  ExperimentConfig c;
  c.experiment = id;
  // Desk-scale learning rates.
  c.game.learn.lr_xi = 0.1;
  c.game.learn.lr_phi = 1e-3;
  c.game.learn.lr_psi = 1e-3;
  c.game.learn.lr_theta = 1e-3;
  c.game.freeze_image_heads = true;
  c.game.seed = 3;
  c.world.defaults.seed = 7;
  c.world.defaults.prototype_scale = 2.0;
  if (id == ExperimentId::likelihood) c.methods = {Method::pretrain, Method::finetune, Method::mhcg};
  if (id == ExperimentId::mcmc_verify) c.methods = {};
  return c;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  // The experiment id selects the defaults, so read it first.
  ExperimentId id = ExperimentId::category;
  if (root && root.IsMap() && root["experiment"]) {
    try {
      id = experiment_from_string(root["experiment"].as<std::string>());
    } catch (const YAML::Exception&) {
      throw ConfigError(source + ": invalid value for 'experiment'");
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(root["experiment"].Mark().line + 1) + ": " + e.what());
    }
  }
  ExperimentConfig c = default_config(id);
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");

  auto& w = c.world;
  auto& g = c.game;
  Section top(root, "", source);
  top.custom("experiment", [](const YAML::Node&) {})
      .field("seed", c.seed)
      .field("checkpoint_dir", c.checkpoint_dir)
      .field("packllm_lambda", c.packllm_lambda)
      .custom("methods", [&](const YAML::Node& n) {
        if (!n.IsSequence()) top.fail(n, "'methods' must be a list");
        c.methods.clear();
        for (const auto& m : n) {
          try {
            c.methods.push_back(method_from_string(m.as<std::string>()));
          } catch (const ConfigError& e) {
            top.fail(m, e.what());
          }
        }
      })
      .custom("world", [&](const YAML::Node& n) {
        Section(n, "world", source)
            .field("spec", w.spec_path)
            .field("categories", w.defaults.categories)
            .field("super_categories", w.defaults.super_categories)
            .field("vocab", w.defaults.vocab)
            .field("length", w.defaults.length)
            .field("obs", w.defaults.obs)
            .field("latent", w.latent)
            .field("hidden", w.hidden)
            .field("images", w.defaults.images)
            .field("obs_noise", w.defaults.obs_noise)
            .field("prototype_scale", w.defaults.prototype_scale)
            .field("seed", w.defaults.seed)
            .field("pool", w.pool)
            .field("eval_fraction", w.eval_fraction)
            .run();
      })
      .custom("backbone", [&](const YAML::Node& n) {
        Section(n, "backbone", source).field("corpus", c.backbone.corpus).field("ridge", c.backbone.ridge).run();
      })
      .custom("pretrain", [&](const YAML::Node& n) {
        auto& p = c.pretrain;
        Section(n, "pretrain", source)
            .field("epochs", p.epochs)
            .field("batch_size", p.batch_size)
            .field("lr_xi", p.lr_xi)
            .field("lr_phi", p.lr_phi)
            .field("lr_psi", p.lr_psi)
            .field("lr_theta", p.lr_theta)
            .run();
      })
      .custom("game", [&](const YAML::Node& n) {
        Section s(n, "game", source);
        s.field("rounds", g.rounds)
            .custom("acceptance",
                    [&](const YAML::Node& v) {
                      try {
                        g.acceptance = acceptance_mode_from_string(v.as<std::string>());
                      } catch (const ConfigError& e) {
                        s.fail(v, e.what());
                      }
                    })
            .field("freeze_image_heads", g.freeze_image_heads)
            .field("learning", g.learning)
            .field("seed", g.seed)
            .field("buffer_capacity", g.buffer_capacity)
            .run();
      })
      .custom("learn", [&](const YAML::Node& n) { parse_learn(n, g.learn, source); })
      .custom("verify", [&](const YAML::Node& n) {
        auto& v = c.verify;
        Section(n, "verify", source)
            .field("vocab", v.vocab)
            .field("length", v.length)
            .field("latent", v.latent)
            .field("obs", v.obs)
            .field("pairs", v.pairs)
            .field("steps", v.steps)
            .field("tolerance", v.tolerance)
            .field("weight_scale", v.weight_scale)
            .run();
      })
      .run();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream o;
  const auto& w = c.world;
  const auto& g = c.game;
  const auto& l = g.learn;
  const auto& p = c.pretrain;
  const auto& v = c.verify;
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"' || ch == '\\') q += '\\';
      q += ch;
    }
    return q + "\"";
  };
  o << "experiment: " << to_string(c.experiment) << "\n";
  o << "seed: " << c.seed << "\n";
  o << "methods: [";
  for (std::size_t i = 0; i < c.methods.size(); ++i) o << (i ? ", " : "") << to_string(c.methods[i]);
  o << "]\n";
  o << "checkpoint_dir: " << quoted(c.checkpoint_dir) << "\n";
  o << "packllm_lambda: " << num(c.packllm_lambda) << "\n";
  o << "world:\n"
    << "  spec: " << quoted(w.spec_path) << "\n"
    << "  categories: " << w.defaults.categories << "\n"
    << "  super_categories: " << w.defaults.super_categories << "\n"
    << "  vocab: " << w.defaults.vocab << "\n"
    << "  length: " << w.defaults.length << "\n"
    << "  obs: " << w.defaults.obs << "\n"
    << "  latent: " << w.latent << "\n"
    << "  hidden: " << w.hidden << "\n"
    << "  images: " << w.defaults.images << "\n"
    << "  obs_noise: " << num(w.defaults.obs_noise) << "\n"
    << "  prototype_scale: " << num(w.defaults.prototype_scale) << "\n"
    << "  seed: " << w.defaults.seed << "\n"
    << "  pool: " << w.pool << "\n"
    << "  eval_fraction: " << num(w.eval_fraction) << "\n";
  o << "backbone:\n"
    << "  corpus: " << c.backbone.corpus << "\n"
    << "  ridge: " << num(c.backbone.ridge) << "\n";
  o << "pretrain:\n"
    << "  epochs: " << p.epochs << "\n"
    << "  batch_size: " << p.batch_size << "\n"
    << "  lr_xi: " << num(p.lr_xi) << "\n"
    << "  lr_phi: " << num(p.lr_phi) << "\n"
    << "  lr_psi: " << num(p.lr_psi) << "\n"
    << "  lr_theta: " << num(p.lr_theta) << "\n";
  o << "game:\n"
    << "  rounds: " << g.rounds << "\n"
    << "  acceptance: " << to_string(g.acceptance) << "\n"
    << "  freeze_image_heads: " << (g.freeze_image_heads ? "true" : "false") << "\n"
    << "  learning: " << (g.learning ? "true" : "false") << "\n"
    << "  seed: " << g.seed << "\n"
    << "  buffer_capacity: " << g.buffer_capacity << "\n";
  o << "learn:\n"
    << "  lr_xi: " << num(l.lr_xi) << "\n"
    << "  lr_phi: " << num(l.lr_phi) << "\n"
    << "  lr_psi: " << num(l.lr_psi) << "\n"
    << "  lr_theta: " << num(l.lr_theta) << "\n"
    << "  epochs: " << l.epochs << "\n"
    << "  batch_size: " << l.batch_size << "\n"
    << "  alpha: " << num(l.alpha) << "\n"
    << "  beta: " << num(l.beta) << "\n";
  o << "verify:\n"
    << "  vocab: " << v.vocab << "\n"
    << "  length: " << v.length << "\n"
    << "  latent: " << v.latent << "\n"
    << "  obs: " << v.obs << "\n"
    << "  pairs: " << v.pairs << "\n"
    << "  steps: " << v.steps << "\n"
    << "  tolerance: " << num(v.tolerance) << "\n"
    << "  weight_scale: " << num(v.weight_scale) << "\n";
  return o.str();
}

void validate(const ExperimentConfig& c) {
  validate(c.game);
  const auto& w = c.world;
  if (w.latent < 1) throw ConfigError("world.latent must be >= 1");
  if (w.hidden < 0) throw ConfigError("world.hidden must be >= 0");
  if (w.eval_fraction < 0.0 || w.eval_fraction >= 1.0) throw ConfigError("world.eval_fraction must be in [0, 1)");
  if (w.pool < 1) throw ConfigError("world.pool must be >= 1");
  if (!w.spec_path.empty() && !std::filesystem::exists(w.spec_path))
    throw ConfigError("world.spec: file not found: " + w.spec_path);
  if (c.backbone.corpus < 1 || !(c.backbone.ridge >= 0.0)) throw ConfigError("backbone: corpus >= 1, ridge >= 0");
  const auto& p = c.pretrain;
  if (p.epochs < 1 || p.batch_size < 1) throw ConfigError("pretrain: epochs and batch_size must be >= 1");
  if (!(p.lr_xi > 0 && p.lr_phi > 0 && p.lr_psi > 0 && p.lr_theta > 0))
    throw ConfigError("pretrain: learning rates must be positive");
  if (c.packllm_lambda < 0.0) throw ConfigError("packllm_lambda must be non-negative");
  const auto& v = c.verify;
  if (v.vocab < 1 || v.length < 1 || v.latent < 1 || v.obs < 1 || v.pairs < 1 || v.steps < 2)
    throw ConfigError("verify: sizes must be positive and steps >= 2");
  caption_space_size(v.vocab, v.length, kMaxEnumeration);
  if (!(v.tolerance > 0.0)) throw ConfigError("verify.tolerance must be positive");
  if (c.experiment != ExperimentId::mcmc_verify && c.methods.empty())
    throw ConfigError("methods must not be empty");
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace mhcg
