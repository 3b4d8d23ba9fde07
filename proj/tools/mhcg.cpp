// mhcg: command-line front end for pre-training, games, chain verification
// and result summaries.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 learning divergence, 4 verification failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mhcg/errors.hpp"
#include "mhcg/experiment.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string manifest_path;
  std::string out = "mhcg-out";
  std::vector<std::string> methods;
  std::string acceptance;
  std::string world_spec;
  std::string checkpoint_dir;
  std::uint64_t seed = 0;
  int rounds = 0;
  int pairs = 0;
  std::size_t steps = 0;
  bool freeze = false;
  bool unfreeze = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "YAML experiment config");
  cmd->add_option("-o,--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Experiment seed");
  cmd->add_option("--world-spec", o.world_spec, "World spec JSON (world.spec)");
  cmd->add_option("--checkpoint-dir", o.checkpoint_dir, "Cache directory for pre-trained agents");
}

mhcg::ExperimentConfig resolve(const Overrides& o, mhcg::ExperimentId forced, bool force) {
  mhcg::ExperimentConfig c;
  if (!o.manifest_path.empty())
    c = mhcg::parse_config(mhcg::config_from_manifest(o.manifest_path), o.manifest_path);
  else if (!o.config_path.empty())
    c = mhcg::load_config(o.config_path);
  else
    c = mhcg::default_config(forced);
  if (force && c.experiment != forced) {
    // Keep the file's sections but switch experiment defaults that depend on the id.
    const auto methods = mhcg::default_config(forced).methods;
    c.experiment = forced;
    c.methods = methods;
  }
  if (!o.manifest_path.empty()) return c;  // a manifest reproduces its run exactly
  if (o.seed) c.seed = o.seed;
  if (!o.world_spec.empty()) c.world.spec_path = o.world_spec;
  if (!o.checkpoint_dir.empty()) c.checkpoint_dir = o.checkpoint_dir;
  if (!o.methods.empty()) {
    c.methods.clear();
    for (const auto& m : o.methods) c.methods.push_back(mhcg::method_from_string(m));
  }
  if (!o.acceptance.empty()) c.game.acceptance = mhcg::acceptance_mode_from_string(o.acceptance);
  if (o.rounds) c.game.rounds = o.rounds;
  if (o.freeze) c.game.freeze_image_heads = true;
  if (o.unfreeze) c.game.freeze_image_heads = false;
  if (o.pairs) c.verify.pairs = o.pairs;
  if (o.steps) c.verify.steps = o.steps;
  mhcg::validate(c);
  return c;
}

int report(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "metrics.csv");
  if (!in) throw mhcg::InputError("no metrics.csv in " + dir);
  std::string line;
  std::getline(in, line);
  std::printf("%-8s %-16s %-12s %-22s %s\n", "agent", "method", "slice", "metric", "value");
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string f[5];
    for (auto& x : f) std::getline(ss, x, ',');
    std::printf("%-8s %-16s %-12s %-22s %s\n", f[0].c_str(), f[1].c_str(), f[2].c_str(), f[3].c_str(), f[4].c_str());
  }
  const auto manifest = std::filesystem::path(dir) / "manifest.json";
  if (std::filesystem::exists(manifest)) {
    std::ifstream m(manifest);
    std::string text((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
    const auto pos = text.find("\"status\"");
    if (pos != std::string::npos) std::printf("\n%s\n", text.substr(pos, text.find('\n', pos) - pos).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metropolis-Hastings captioning game simulator"};
  app.require_subcommand(1);
  Overrides o;
  std::string report_dir;

  auto* pretrain = app.add_subcommand("pretrain", "Generate the world and pre-train both agents");
  add_common(pretrain, o);

  auto* play = app.add_subcommand("play", "Run an experiment (likelihood or category) from a config or manifest");
  add_common(play, o);
  play->add_option("--from-manifest", o.manifest_path, "Re-run exactly the run recorded in a manifest.json");
  play->add_option("--methods", o.methods, "Methods to run")->delimiter(',');
  play->add_option("--acceptance", o.acceptance, "approximate | exact-oracle | always-accept");
  play->add_option("--rounds", o.rounds, "Game rounds");
  play->add_flag("--freeze-image-heads", o.freeze, "Keep psi and theta fixed");
  play->add_flag("--train-image-heads", o.unfreeze, "Update psi and theta every round");

  auto* verify = app.add_subcommand("verify", "Check the caption chain against the enumerated target");
  add_common(verify, o);
  verify->add_option("--pairs", o.pairs, "Number of random latent pairs");
  verify->add_option("--steps", o.steps, "Judgment steps per chain");

  auto* rep = app.add_subcommand("report", "Print the metrics of an output directory");
  rep->add_option("dir", report_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rep->parsed()) return report(report_dir);
    mhcg::ExperimentConfig config;
    if (verify->parsed()) {
      config = resolve(o, mhcg::ExperimentId::mcmc_verify, true);
    } else if (pretrain->parsed()) {
      config = resolve(o, mhcg::ExperimentId::category, false);
      if (config.experiment == mhcg::ExperimentId::mcmc_verify)
        throw mhcg::ConfigError("pretrain needs a likelihood or category experiment");
      const bool topline =
          std::find(config.methods.begin(), config.methods.end(), mhcg::Method::topline) != config.methods.end();
      config.methods = {mhcg::Method::pretrain};
      if (topline) config.methods.push_back(mhcg::Method::topline);
    } else {
      config = resolve(o, mhcg::ExperimentId::category, false);
    }
    const auto result = mhcg::run_experiment(config, o.out);
    for (const auto& ch : result.chains)
      std::printf("pair %d  tv %.4f  %s\n", ch.pair, ch.tv, ch.passed ? "PASS" : "FAIL");
    std::printf("wrote %zu files to %s\n", result.files.size(), o.out.c_str());
    return result.verification_passed ? 0 : 4;
  } catch (const mhcg::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mhcg::CapabilityError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mhcg::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const mhcg::VerificationError& e) {
    std::fprintf(stderr, "verification failed: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
