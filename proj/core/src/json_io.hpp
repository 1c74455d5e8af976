#pragma once

// Internal JSON (de)serialisation shared by checkpoints and the CLI config.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binnlab/network_spec.hpp"

namespace binnlab::detail {

std::string base64_encode_doubles(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(const std::string& text);

nlohmann::json network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

}  // namespace binnlab::detail
