#include "mhcg/agent_io.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mhcg/errors.hpp"

namespace mhcg {

using nlohmann::json;

namespace {

std::vector<double> flat(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

std::vector<double> flat(const Vector& v) { return {v.data(), v.data() + v.size()}; }

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("agent json: missing key '") + key + "'");
  return j.at(key);
}

std::vector<double> numbers(const json& j, const char* key, std::size_t expected) {
  auto v = field(j, key).get<std::vector<double>>();
  if (v.size() != expected)
    throw ConfigError(std::string("agent json: '") + key + "' has " + std::to_string(v.size()) +
                      " values, expected " + std::to_string(expected));
  return v;
}

void fill(Matrix& m, const std::vector<double>& v, std::size_t offset = 0) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[offset++];
}

void fill(Vector& m, const std::vector<double>& v, std::size_t offset = 0) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = v[offset++];
}

}  // namespace

std::string agent_to_json(const AgentParams& agent) {
  validate(agent);
  const auto& d = agent.dims;
  json j;
  j["config"] = {{"V", d.vocab}, {"K", d.latent}, {"L", d.length}, {"D_o", d.obs}, {"H", d.hidden}};
  j["agent"] = to_string(agent.id);
  std::vector<double> xw, xb;
  for (const auto& w : agent.xi.weight) {
    auto f = flat(w);
    xw.insert(xw.end(), f.begin(), f.end());
  }
  for (const auto& b : agent.xi.bias) {
    auto f = flat(b);
    xb.insert(xb.end(), f.begin(), f.end());
  }
  j["xi"] = {{"weight", xw},
             {"bias", xb},
             {"hidden_weight", flat(agent.xi.hidden_weight)},
             {"hidden_bias", flat(agent.xi.hidden_bias)}};
  j["phi"] = {{"embedding", flat(agent.phi.embedding)}, {"scale", flat(agent.phi.scale)}, {"shape", agent.phi.shape}};
  j["psi"] = {{"weight", flat(agent.psi.weight)}, {"bias", flat(agent.psi.bias)}, {"raw_scale", flat(agent.psi.raw_scale)}};
  j["theta"] = {{"weight", flat(agent.theta.weight)}, {"bias", flat(agent.theta.bias)}, {"noise", agent.theta.noise}};
  return j.dump();
}

AgentParams agent_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("agent json: ") + e.what());
  }
  try {
    const auto& cfg = field(j, "config");
    ModelDims d{field(cfg, "V").get<int>(), field(cfg, "K").get<int>(), field(cfg, "L").get<int>(),
                field(cfg, "D_o").get<int>(), cfg.contains("H") ? cfg["H"].get<int>() : 0};
    if (d.hidden < 0) throw ConfigError("agent json: H must be >= 0");
    const auto id_text = field(j, "agent").get<std::string>();
    if (id_text != "A" && id_text != "B") throw ConfigError("agent json: agent id must be A or B");
    AgentParams a = make_agent(d, id_text == "A" ? AgentId::A : AgentId::B);
    const auto V = static_cast<std::size_t>(d.vocab), K = static_cast<std::size_t>(d.latent),
               L = static_cast<std::size_t>(d.length), O = static_cast<std::size_t>(d.obs),
               H = static_cast<std::size_t>(d.hidden), F = d.hidden > 0 ? H : K;

    const auto& xi = field(j, "xi");
    const auto xw = numbers(xi, "weight", L * V * F);
    const auto xb = numbers(xi, "bias", L * V);
    for (std::size_t p = 0; p < L; ++p) {
      fill(a.xi.weight[p], xw, p * V * F);
      fill(a.xi.bias[p], xb, p * V);
    }
    if (H > 0) {
      fill(a.xi.hidden_weight, numbers(xi, "hidden_weight", H * K));
      fill(a.xi.hidden_bias, numbers(xi, "hidden_bias", H));
    }
    const auto& phi = field(j, "phi");
    fill(a.phi.embedding, numbers(phi, "embedding", V * K));
    fill(a.phi.scale, numbers(phi, "scale", K));
    a.phi.shape = field(phi, "shape").get<double>();
    const auto& psi = field(j, "psi");
    fill(a.psi.weight, numbers(psi, "weight", K * O));
    fill(a.psi.bias, numbers(psi, "bias", K));
    fill(a.psi.raw_scale, numbers(psi, "raw_scale", K));
    const auto& theta = field(j, "theta");
    fill(a.theta.weight, numbers(theta, "weight", O * K));
    fill(a.theta.bias, numbers(theta, "bias", O));
    a.theta.noise = field(theta, "noise").get<double>();
    validate(a);
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("agent json: ") + e.what());
  }
}

void save_agent(const AgentParams& agent, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << agent_to_json(agent) << '\n';
}

AgentParams load_agent(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return agent_from_json(ss.str());
}

}  // namespace mhcg
