#include "mhcg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <optional>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mhcg/agent_io.hpp"
#include "mhcg/errors.hpp"

namespace mhcg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Stream ids for Rng(config.seed).fork(...)
enum Stream : std::uint64_t {
  kBackboneStream = 1,
  kRotationStream = 10,  // + agent slot
  kPretrainStream = 20,  // + agent slot
  kKdStream = 30,
  kVerifyStream = 50,
};

bool has(const ExperimentConfig& c, Method m) {
  return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

struct Run {
  const ExperimentConfig& config;
  fs::path dir;
  ExperimentResult result;
  json manifest;

  void record_output(const std::string& rel) {
    result.files.push_back(rel);
    manifest["outputs"][rel] = sha256_file(dir / rel);
  }
};

World build_world(const ExperimentConfig& c) {
  WorldSpec spec = c.world.spec_path.empty() ? make_world_spec(c.world.defaults)
                                             : world_spec_from_json(read_text(c.world.spec_path));
  return generate_world(spec, c.world.pool, c.world.eval_fraction);
}

std::vector<PretrainSample> pretrain_samples(const World& w, const std::vector<std::size_t>& idx) {
  std::vector<PretrainSample> out;
  for (std::size_t i : idx) out.push_back({w.records[i].observation, w.records[i].caption});
  return out;
}

// Pre-trained checkpoints, written once and re-read (hash-verified) by every method.
class Checkpoints {
 public:
  Checkpoints(Run& run, const World& world, const ModelDims& dims) : run_(run), world_(world), dims_(dims) {
    const auto& c = run.config;
    std::ostringstream key;
    key << c.seed << '|' << world_spec_to_json(world.spec) << '|'
        << c.world.latent << '|' << c.world.hidden << '|' << c.world.pool << '|' << format_double(c.world.eval_fraction) << '|'
        << c.backbone.corpus << '|' << format_double(c.backbone.ridge) << '|' << c.pretrain.epochs << '|'
        << c.pretrain.batch_size << '|' << format_double(c.pretrain.lr_xi) << '|' << format_double(c.pretrain.lr_phi)
        << '|' << format_double(c.pretrain.lr_psi) << '|' << format_double(c.pretrain.lr_theta);
    key_ = sha256_hex(key.str());
    fs::create_directories(run.dir / "checkpoints");
    run.manifest["checkpoint_key"] = key_;
  }

  AgentParams get(const std::string& name, AgentId id, const std::vector<std::size_t>& subset_idx, int slot) {
    const std::string rel = "checkpoints/agent_" + name + ".json";
    const fs::path local = run_.dir / rel;
    auto it = hashes_.find(name);
    if (it == hashes_.end()) {
      std::string text;
      const auto& cache_dir = run_.config.checkpoint_dir;
      const fs::path cached = cache_dir.empty() ? fs::path() : fs::path(cache_dir) / key_ / ("agent_" + name + ".json");
      if (!cached.empty() && fs::exists(cached)) {
        text = read_text(cached);
      } else {
        text = agent_to_json(train(id, subset_idx, slot));
        if (!cached.empty()) {
          fs::create_directories(cached.parent_path());
          write_text(cached, text);
        }
      }
      write_text(local, text);
      it = hashes_.emplace(name, sha256_hex(text)).first;
      run_.manifest["checkpoints"][name] = it->second;
    }
    const std::string text = read_text(local);
    if (sha256_hex(text) != it->second) throw VerificationError("checkpoint " + rel + " changed on disk");
    AgentParams a = agent_from_json(text);
    if (!(a.dims == dims_)) throw ConfigError("checkpoint " + rel + " has dims " + a.dims.to_string());
    return a;
  }

 private:
  AgentParams train(AgentId id, const std::vector<std::size_t>& subset_idx, int slot) {
    const auto& c = run_.config;
    if (!backbone_) {
      backbone_ = std::make_unique<Backbone>(
          make_backbone(world_.spec, dims_.latent, c.backbone, Rng(c.seed).fork(kBackboneStream).seed()));
    }
    Rng rot_rng = Rng(c.seed).fork(kRotationStream + static_cast<std::uint64_t>(slot));
    const Matrix q = random_rotation(dims_.latent, rot_rng);
    Rng rng = Rng(c.seed).fork(kPretrainStream + static_cast<std::uint64_t>(slot));
    return pretrain_agent(subset(world_, subset_idx), *backbone_, q, dims_, id, c.pretrain, rng);
  }

  Run& run_;
  const World& world_;
  ModelDims dims_;
  std::string key_;
  std::map<std::string, std::string> hashes_;
  std::unique_ptr<Backbone> backbone_;
};

void write_rounds(Run& run, const std::string& method, const std::vector<RoundReport>& reports) {
  const std::string rel = "rounds_" + method + ".jsonl";
  std::ostringstream o;
  for (const auto& r : reports) o << round_report_to_json(r) << '\n';
  write_text(run.dir / rel, o.str());
  run.result.files.push_back(rel);  // carries wallclock; not hashed into the determinism check
}

void add_metric_rows(std::vector<MetricRow>& rows, const std::string& agent, const std::string& method,
                     const std::string& slice, const CategoryMetrics& m) {
  rows.push_back({agent, method, slice, "OP", m.op});
  rows.push_back({agent, method, slice, "OR", m.orc});
  rows.push_back({agent, method, slice, "OF1", m.of1});
  rows.push_back({agent, method, slice, "CP", m.cp});
  rows.push_back({agent, method, slice, "CR", m.cr});
  rows.push_back({agent, method, slice, "CF1", m.cf1});
}

struct GameOutcome {
  std::array<AgentParams, 2> agents;
  std::vector<RoundReport> reports;
};

GameOutcome play_game(const ExperimentConfig& c, AgentSetup a, AgentSetup b, bool finetune) {
  GameState st = init_game(c.game, std::move(a), std::move(b));
  for (int r = 0; r < c.game.rounds; ++r) {
    if (finetune)
      finetune_round(st);
    else
      play_round(st);
  }
  return {{st.agents[0].params, st.agents[1].params}, st.reports};
}

void run_fusion(Run& run) {
  const auto& c = run.config;
  const World world = build_world(c);
  write_world(world, run.dir / "world");
  for (const char* f : {"world/world.json", "world/records.jsonl", "world/split.json"}) run.record_output(f);

  const ModelDims dims{world.spec.vocab, c.world.latent, world.spec.length, world.spec.obs, c.world.hidden};
  Checkpoints ckpt(run, world, dims);
  const auto& sets = world.sets;
  const AgentParams pre_a = ckpt.get("A", AgentId::A, sets.pretrain_a, 0);
  const AgentParams pre_b = ckpt.get("B", AgentId::B, sets.pretrain_b, 1);

  std::vector<Observation> pool_obs;
  for (std::size_t i : sets.pool) pool_obs.push_back(world.records[i].observation);
  auto setup = [&](const char* name, AgentId id) {
    return AgentSetup{ckpt.get(name, id, id == AgentId::A ? sets.pretrain_a : sets.pretrain_b, index_of(id)),
                      pool_obs, pretrain_samples(world, id == AgentId::A ? sets.pretrain_a : sets.pretrain_b)};
  };

  struct Entry {
    Method method;
    std::string agent;
    std::unique_ptr<Captioner> captioner;
    std::optional<AgentId> side;
  };
  std::vector<Entry> entries;
  auto single = [&](Method m, const AgentParams& p) {
    entries.push_back({m, to_string(p.id), std::make_unique<SingleAgentCaptioner>(p), p.id});
  };

  json timing = json::object();
  std::ostringstream likelihood;
  likelihood << "method,agent,round,acceptance_rate,joint_loglik\n";
  auto trace = [&](Method m, const std::vector<RoundReport>& reports) {
    for (const auto& r : reports)
      for (int x = 0; x < 2; ++x)
        likelihood << to_string(m) << ',' << to_string(static_cast<AgentId>(x)) << ',' << r.round << ','
                   << format_double(r.acceptance_rate[static_cast<std::size_t>(x)]) << ','
                   << format_double(r.joint_loglik[static_cast<std::size_t>(x)]) << '\n';
    run.result.rounds[to_string(m)] = reports;
    write_rounds(run, to_string(m), reports);
  };
  auto timed = [&](Method m, auto&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    timing[std::string(to_string(m)) + "_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  if (has(c, Method::pretrain)) {
    single(Method::pretrain, pre_a);
    single(Method::pretrain, pre_b);
  }
  if (has(c, Method::finetune)) {
    timed(Method::finetune, [&] {
      auto g = play_game(c, setup("A", AgentId::A), setup("B", AgentId::B), true);
      trace(Method::finetune, g.reports);
      single(Method::finetune, g.agents[0]);
      single(Method::finetune, g.agents[1]);
    });
  }
  if (has(c, Method::mhcg)) {
    timed(Method::mhcg, [&] {
      auto g = play_game(c, setup("A", AgentId::A), setup("B", AgentId::B), false);
      trace(Method::mhcg, g.reports);
      single(Method::mhcg, g.agents[0]);
      single(Method::mhcg, g.agents[1]);
    });
  }
  if (has(c, Method::kd)) {
    timed(Method::kd, [&] {
      Rng rng = Rng(c.seed).fork(kKdStream);
      AgentParams sa = pre_a, sb = pre_b;
      const AgentBuffers buf_a = make_buffers(sa, pretrain_samples(world, sets.pretrain_a), c.game.buffer_capacity, rng);
      const AgentBuffers buf_b = make_buffers(sb, pretrain_samples(world, sets.pretrain_b), c.game.buffer_capacity, rng);
      std::vector<RoundReport> reports;
      for (int r = 1; r <= c.game.rounds; ++r) {
        RoundReport rep;
        rep.round = r;
        rep.acceptance_rate = {1.0, 1.0};
        const auto ta = kd_round(sa, pre_b, pool_obs, buf_a.xi, c.game.learn, c.game.learn.lr_xi, rng);
        const auto tb = kd_round(sb, pre_a, pool_obs, buf_b.xi, c.game.learn, c.game.learn.lr_xi, rng);
        rep.learning.push_back({AgentId::A, Head::text_decoder, ta.initial_loss, ta.final_loss, ta.epoch_loss});
        rep.learning.push_back({AgentId::B, Head::text_decoder, tb.initial_loss, tb.final_loss, tb.epoch_loss});
        for (std::size_t x = 0; x < 2; ++x) {
          const AgentParams& me = x == 0 ? sa : sb;
          double s = 0.0;
          for (const auto& o : pool_obs) {
            const Latent za = image_encoder_mean(sa.psi, o), zb = image_encoder_mean(sb.psi, o);
            const Caption cap = greedy_from_logits(text_decoder_logits(me.xi, x == 0 ? za : zb));
            s += joint_caption_loglik(sa.phi, sb.phi, za, zb, cap);
          }
          rep.joint_loglik[x] = s / static_cast<double>(pool_obs.size());
        }
        reports.push_back(std::move(rep));
      }
      run.result.rounds["kd"] = reports;
      write_rounds(run, "kd", reports);
      single(Method::kd, sa);
      single(Method::kd, sb);
    });
  }
  if (has(c, Method::ensemble))
    entries.push_back({Method::ensemble, "A+B", std::make_unique<EnsembleCaptioner>(pre_a, pre_b), std::nullopt});
  if (has(c, Method::packllm))
    entries.push_back(
        {Method::packllm, "A+B", std::make_unique<PackLlmCaptioner>(pre_a, pre_b, c.packllm_lambda), std::nullopt});
  if (has(c, Method::weight_average))
    entries.push_back({Method::weight_average, "avg",
                       std::make_unique<SingleAgentCaptioner>(weight_average(pre_a, pre_b)), std::nullopt});
  if (has(c, Method::topline)) {
    const AgentParams top = ckpt.get("topline", AgentId::A, sets.topline, 2);
    entries.push_back({Method::topline, "T", std::make_unique<SingleAgentCaptioner>(top), std::nullopt});
  }

  if (!run.result.rounds.empty()) {
    write_text(run.dir / "likelihood.csv", likelihood.str());
    run.record_output("likelihood.csv");
    for (const auto& [method, reports] : run.result.rounds) {
      for (int x = 0; x < 2; ++x) {
        const auto ux = static_cast<std::size_t>(x);
        const std::string agent = to_string(static_cast<AgentId>(x));
        run.result.metrics.push_back({agent, method, "pool", "joint_loglik_first", reports.front().joint_loglik[ux]});
        run.result.metrics.push_back({agent, method, "pool", "joint_loglik_last", reports.back().joint_loglik[ux]});
        double acc = 0.0;
        for (const auto& r : reports) acc += r.acceptance_rate[ux];
        run.result.metrics.push_back(
            {agent, method, "pool", "acceptance_rate_mean", acc / static_cast<double>(reports.size())});
      }
    }
  }

  if (c.experiment == ExperimentId::category) {
    std::vector<Cf1Row> cf1;
    for (const auto& e : entries) {
      const auto t0 = std::chrono::steady_clock::now();
      const Evaluation ev = evaluate(*e.captioner, world, sets.eval);
      timing[std::string("decode_") + to_string(e.method) + "_" + e.agent + "_ms"] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      auto& rows = run.result.metrics;
      add_metric_rows(rows, e.agent, to_string(e.method), "all", category_metrics(ev.counts));
      if (e.side) {
        add_metric_rows(rows, e.agent, to_string(e.method), "own",
                        category_metrics(ev.counts, own_categories(world.split.partition, *e.side)));
        add_metric_rows(rows, e.agent, to_string(e.method), "counterpart",
                        category_metrics(ev.counts, counterpart_categories(world.split.partition, *e.side)));
      }
      rows.push_back({e.agent, to_string(e.method), "all", "bleu4", ev.bleu});
      rows.push_back({e.agent, to_string(e.method), "all", "decode_cost", ev.cost.per_position()});
      cf1.push_back({to_string(e.method), e.agent, per_category_f1(ev.counts)});
    }
    std::vector<std::string> names;
    for (const auto& cat : world.spec.categories) names.push_back(cat.name);
    write_cf1_matrix(cf1, names, run.dir / "cf1_matrix.csv");
    run.record_output("cf1_matrix.csv");
  }

  write_metric_csv(run.result.metrics, run.dir / "metrics.csv");
  run.record_output("metrics.csv");
  write_text(run.dir / "timing.json", timing.dump(1) + "\n");
  run.result.files.push_back("timing.json");
}

void run_verify(Run& run) {
  const auto& c = run.config;
  const auto& v = c.verify;
  const ModelDims dims{v.vocab, v.latent, v.length, v.obs};
  Rng rng = Rng(c.seed).fork(kVerifyStream);
  std::ostringstream csv;
  csv << "pair,tv,tolerance,passed,balance_violation\n";
  json report;
  report["tolerance"] = v.tolerance;
  report["steps"] = v.steps;
  report["pairs"] = json::array();
  const std::size_t space = caption_space_size(v.vocab, v.length, kMaxEnumeration);
  for (int p = 0; p < v.pairs; ++p) {
    const AgentParams sp = make_random_agent(dims, AgentId::A, rng, v.weight_scale);
    const AgentParams li = make_random_agent(dims, AgentId::B, rng, v.weight_scale);
    Latent z_sp(v.latent), z_li(v.latent);
    for (int k = 0; k < v.latent; ++k) z_sp[k] = rng.normal();
    for (int k = 0; k < v.latent; ++k) z_li[k] = rng.normal();
    const Caption start = caption_from_index(rng.index(space), v.vocab, v.length);
    const auto chain = run_frozen_chain(sp, li, z_sp, z_li, start, v.steps, AcceptanceMode::approximate, rng);
    const PosteriorTable table = enumerate_posterior(sp, li, z_sp, z_li, Target::mh_target);
    const double tv = chain_tv_distance(chain, table);
    const BalanceCheck balance = detailed_balance(sp, li, z_sp, z_li);
    const bool ok = tv < v.tolerance;
    run.result.chains.push_back({p, tv, ok});
    run.result.verification_passed = run.result.verification_passed && ok;
    csv << p << ',' << format_double(tv) << ',' << format_double(v.tolerance) << ',' << (ok ? "true" : "false") << ','
        << format_double(balance.max_violation) << '\n';
    report["pairs"].push_back({{"pair", p}, {"tv", tv}, {"passed", ok}, {"balance_violation", balance.max_violation}});
    run.result.metrics.push_back({"A->B", "mhcg", "pair" + std::to_string(p), "chain_tv", tv});
  }
  report["passed"] = run.result.verification_passed;
  write_text(run.dir / "verify.csv", csv.str());
  run.record_output("verify.csv");
  write_text(run.dir / "verify_report.json", report.dump(1) + "\n");
  run.record_output("verify_report.json");
  write_metric_csv(run.result.metrics, run.dir / "metrics.csv");
  run.record_output("metrics.csv");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Run run{config, out_dir, {}, json::object()};
  run.result.dir = out_dir;
  const std::string text = serialize_config(config);
  run.manifest["tool"] = "mhcg";
  run.manifest["version"] = kVersion;
  run.manifest["experiment"] = to_string(config.experiment);
  run.manifest["config"] = text;
  run.manifest["config_sha256"] = sha256_hex(text);
  run.manifest["seeds"] = {{"experiment", config.seed},
                           {"world", config.world.defaults.seed},
                           {"game", config.game.seed}};
  run.manifest["status"] = "running";
  run.manifest["outputs"] = json::object();
  auto write_manifest = [&] { write_text(out_dir / "manifest.json", run.manifest.dump(1) + "\n"); };
  write_manifest();
  try {
    validate(config);
    if (config.experiment == ExperimentId::mcmc_verify)
      run_verify(run);
    else
      run_fusion(run);
  } catch (const std::exception& e) {
    run.manifest["status"] = "failed";
    run.manifest["error"] = e.what();
    write_manifest();
    throw;
  }
  run.manifest["status"] = run.result.verification_passed ? "ok" : "verification-failed";
  write_manifest();
  return run.result;
}

std::string config_from_manifest(const fs::path& manifest) {
  try {
    const json j = json::parse(read_text(manifest));
    const std::string text = j.at("config").get<std::string>();
    if (j.contains("config_sha256") && j["config_sha256"].get<std::string>() != sha256_hex(text))
      throw ConfigError("manifest config hash mismatch in " + manifest.string());
    return text;
  } catch (const json::exception& e) {
    throw ConfigError("unreadable manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace mhcg
