#include "json_io.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace binnlab::detail {

namespace {

constexpr char kBase64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int base64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<std::uint8_t> doubles_to_le_bytes(const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return bytes;
}

}  // namespace

std::string base64_encode_doubles(const std::vector<double>& values) {
  const std::vector<std::uint8_t> bytes = doubles_to_le_bytes(values);
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) chunk |= bytes[i + 2];
    out.push_back(kBase64Chars[(chunk >> 18) & 63]);
    out.push_back(kBase64Chars[(chunk >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kBase64Chars[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kBase64Chars[chunk & 63] : '=');
  }
  return out;
}

std::vector<double> base64_decode_doubles(const std::string& text) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(text.size() / 4 * 3);
  std::uint32_t chunk = 0;
  int have = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = base64_value(c);
    if (v < 0) throw std::invalid_argument("base64: invalid character");
    chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
    if (++have == 4) {
      bytes.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
      bytes.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
      bytes.push_back(static_cast<std::uint8_t>(chunk & 0xff));
      chunk = 0;
      have = 0;
    }
  }
  if (have == 2) {
    bytes.push_back(static_cast<std::uint8_t>((chunk >> 4) & 0xff));
  } else if (have == 3) {
    bytes.push_back(static_cast<std::uint8_t>((chunk >> 10) & 0xff));
    bytes.push_back(static_cast<std::uint8_t>((chunk >> 2) & 0xff));
  } else if (have != 0) {
    throw std::invalid_argument("base64: truncated input");
  }
  if (bytes.size() % 8 != 0) throw std::invalid_argument("base64: not a float64 array");

  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Lif: return "lif";
    case LayerKind::Readout: return "readout";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv") return LayerKind::Conv;
  if (name == "lif") return LayerKind::Lif;
  if (name == "readout") return LayerKind::Readout;
  throw std::invalid_argument("unknown layer kind: " + name);
}

const char* granularity_name(ScaleGranularity g) {
  switch (g) {
    case ScaleGranularity::PerLayer: return "per_layer";
    case ScaleGranularity::PerNeuron: return "per_neuron";
    case ScaleGranularity::PerWeight: return "per_weight";
  }
  return "?";
}

ScaleGranularity granularity_from_name(const std::string& name) {
  if (name == "per_layer") return ScaleGranularity::PerLayer;
  if (name == "per_neuron") return ScaleGranularity::PerNeuron;
  if (name == "per_weight") return ScaleGranularity::PerWeight;
  throw std::invalid_argument("unknown granularity: " + name);
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::Mfa: return "mfa";
    case Variant::Fpv: return "fpv";
    case Variant::Nkl: return "nkl";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::Full;
  if (name == "mfa") return Variant::Mfa;
  if (name == "fpv") return Variant::Fpv;
  if (name == "nkl") return Variant::Nkl;
  throw std::invalid_argument("unknown variant: " + name);
}

}  // namespace

nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& ls : spec.layers) {
    nlohmann::json l;
    l["kind"] = kind_name(ls.kind);
    l["in_size"] = ls.in_size;
    l["out_size"] = ls.out_size;
    l["residual"] = ls.residual;
    l["recurrent"] = ls.recurrent;
    l["theta"] = ls.theta;
    l["beta"] = ls.beta;
    l["granularity"] = granularity_name(ls.granularity);
    if (ls.kind == LayerKind::Conv) {
      l["in_channels"] = ls.in_channels;
      l["out_channels"] = ls.out_channels;
      l["in_h"] = ls.in_h;
      l["in_w"] = ls.in_w;
      l["kernel"] = ls.kernel;
      l["pad"] = ls.pad;
    }
    layers.push_back(std::move(l));
  }
  nlohmann::json j;
  j["layers"] = std::move(layers);
  j["variant"] = variant_name(spec.variant);
  j["fpv_sigma"] = spec.fpv_sigma;
  j["timesteps"] = spec.timesteps;
  j["base_noise_var"] = spec.base_noise_var;
  j["kappa_feedback_grad"] = spec.kappa_feedback_grad;
  return j;
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  for (const auto& l : j.at("layers")) {
    LayerSpec ls;
    ls.kind = kind_from_name(l.at("kind").get<std::string>());
    ls.in_size = l.at("in_size").get<std::size_t>();
    ls.out_size = l.at("out_size").get<std::size_t>();
    ls.residual = l.at("residual").get<bool>();
    ls.recurrent = l.at("recurrent").get<bool>();
    ls.theta = l.at("theta").get<double>();
    ls.beta = l.at("beta").get<double>();
    ls.granularity = granularity_from_name(l.at("granularity").get<std::string>());
    if (ls.kind == LayerKind::Conv) {
      ls.in_channels = l.at("in_channels").get<std::size_t>();
      ls.out_channels = l.at("out_channels").get<std::size_t>();
      ls.in_h = l.at("in_h").get<std::size_t>();
      ls.in_w = l.at("in_w").get<std::size_t>();
      ls.kernel = l.at("kernel").get<std::size_t>();
      ls.pad = l.at("pad").get<std::size_t>();
    }
    spec.layers.push_back(ls);
  }
  spec.variant = variant_from_name(j.at("variant").get<std::string>());
  spec.fpv_sigma = j.at("fpv_sigma").get<double>();
  spec.timesteps = j.at("timesteps").get<std::size_t>();
  spec.base_noise_var = j.at("base_noise_var").get<double>();
  spec.kappa_feedback_grad = j.at("kappa_feedback_grad").get<bool>();
  spec.validate();
  return spec;
}

}  // namespace binnlab::detail
