#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "paramap/nn.hpp"

// Bit-exact persistence helpers shared by the file formats.
namespace paramap::codec {

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Little-endian float64 blob, base64 encoded.
std::string encode_doubles(const std::vector<double>& v);
std::vector<double> decode_doubles(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t h);
std::uint64_t parse_hex64(const std::string& s);

}  // namespace paramap::codec

namespace paramap::nn {

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const NetworkParams& p);
void from_json(const nlohmann::json& j, NetworkParams& p);

}  // namespace paramap::nn
