#include "binnlab/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "json_io.hpp"

namespace binnlab {

void save_checkpoint(const TrainingCheckpoint& checkpoint, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["seed"] = checkpoint.seed;
  j["next_epoch"] = checkpoint.next_epoch;
  j["network"] = detail::network_spec_to_json(checkpoint.spec);
  j["params"] = {{"total", checkpoint.params.values.size()},
                 {"values_b64", detail::base64_encode_doubles(checkpoint.params.values)}};
  j["optimizer"] = {{"step_count", checkpoint.opt.step_count},
                    {"lr_weights", checkpoint.opt.lr_weights},
                    {"lr_scales", checkpoint.opt.lr_scales},
                    {"beta1", checkpoint.opt.beta1},
                    {"beta2", checkpoint.opt.beta2},
                    {"eps", checkpoint.opt.eps},
                    {"first_b64", detail::base64_encode_doubles(checkpoint.opt.first_moment)},
                    {"second_b64", detail::base64_encode_doubles(checkpoint.opt.second_moment)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

TrainingCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }
  TrainingCheckpoint ck;
  ck.seed = j.at("seed").get<std::uint64_t>();
  ck.next_epoch = j.at("next_epoch").get<std::size_t>();
  ck.spec = detail::network_spec_from_json(j.at("network"));
  ck.params.layout = ParamLayout::build(ck.spec);
  ck.params.values = detail::base64_decode_doubles(j.at("params").at("values_b64"));
  if (ck.params.values.size() != ck.params.layout.total ||
      j.at("params").at("total").get<std::size_t>() != ck.params.layout.total) {
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  }
  const auto& opt = j.at("optimizer");
  ck.opt.step_count = opt.at("step_count").get<std::size_t>();
  ck.opt.lr_weights = opt.at("lr_weights").get<double>();
  ck.opt.lr_scales = opt.at("lr_scales").get<double>();
  ck.opt.beta1 = opt.at("beta1").get<double>();
  ck.opt.beta2 = opt.at("beta2").get<double>();
  ck.opt.eps = opt.at("eps").get<double>();
  ck.opt.first_moment = detail::base64_decode_doubles(opt.at("first_b64"));
  ck.opt.second_moment = detail::base64_decode_doubles(opt.at("second_b64"));
  if (ck.opt.first_moment.size() != ck.params.layout.total ||
      ck.opt.second_moment.size() != ck.params.layout.total) {
    throw std::runtime_error("load_checkpoint: optimizer state size mismatch");
  }
  return ck;
}

}  // namespace binnlab
