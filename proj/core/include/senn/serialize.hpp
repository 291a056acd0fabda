#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "senn/network.hpp"

namespace senn {

// {input_dim, layers:[{weights, activations:[[α,β,γ],...], is_output}]}
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

void save_snapshot(const Network& net, const std::string& path);
Network load_snapshot(const std::string& path);

// Compact JSON with doubles printed at 17 significant digits.
std::string dump_json(const nlohmann::json& j);

}  // namespace senn
