#pragma once

#include <filesystem>
#include <string>

#include "mhcg/agent.hpp"

namespace mhcg {

// One JSON document per agent:
//   {"config": {"V", "K", "L", "D_o"}, "agent": "A"|"B",
//    "xi":    {"weight": [L*V*K], "bias": [L*V]},
//    "phi":   {"embedding": [V*K], "scale": [K], "shape": x},
//    "psi":   {"weight": [K*D_o], "bias": [K], "raw_scale": [K]},
//    "theta": {"weight": [D_o*K], "bias": [D_o], "noise": x}}
// Matrices are row-major; xi weights are position-major. Doubles are written
// with round-trip precision so save/load is bit-exact.

std::string agent_to_json(const AgentParams& agent);
AgentParams agent_from_json(const std::string& text);

void save_agent(const AgentParams& agent, const std::filesystem::path& path);
AgentParams load_agent(const std::filesystem::path& path);

}  // namespace mhcg
