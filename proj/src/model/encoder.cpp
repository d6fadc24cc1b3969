#include "esam3/model/encoder.hpp"

#include "esam3/error.hpp"

namespace esam3::model {

void EncoderConfig::validate() const {
  if (widths.empty() || widths.size() != depths.size()) {
    fail(ErrorKind::kInvalidArgument, "encoder: widths and depths must be non-empty and equally long");
  }
  for (int w : widths)
    if (w <= 0) fail(ErrorKind::kInvalidArgument, "encoder: widths must be positive");
  for (int d : depths)
    if (d < 0) fail(ErrorKind::kInvalidArgument, "encoder: depths must be non-negative");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) { j = {{"widths", c.widths}, {"depths", c.depths}}; }

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  for (const auto& [k, v] : j.items())
    if (k != "widths" && k != "depths") fail(ErrorKind::kInvalidArgument, "encoder config: unknown key '" + k + "'");
  if (j.contains("widths")) j.at("widths").get_to(c.widths);
  if (j.contains("depths")) j.at("depths").get_to(c.depths);
  c.validate();
}

void init_encoder(ParamStore& store, const EncoderConfig& cfg, const std::string& prefix, ModuleTag tag, Rng& rng) {
  cfg.validate();
  int in = 3;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string stage = prefix + ".s" + std::to_string(i);
    add_conv(store, stage + ".down", tag, cfg.widths[i], in, 3, rng);
    for (int d = 0; d < cfg.depths[i]; ++d) {
      add_conv(store, stage + ".res" + std::to_string(d), tag, cfg.widths[i], cfg.widths[i], 3, rng, true, 0.5);
    }
    in = cfg.widths[i];
  }
}

Var encode(Session& s, const EncoderConfig& cfg, const std::string& prefix, Var image) {
  Var x = image;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string stage = prefix + ".s" + std::to_string(i);
    x = num::relu(conv(s, x, stage + ".down", 2, 1));
    for (int d = 0; d < cfg.depths[i]; ++d) x = num::relu(x + conv(s, x, stage + ".res" + std::to_string(d), 1, 1));
  }
  return x;
}

std::size_t encoder_param_count(const EncoderConfig& cfg) {
  std::size_t n = 0;
  std::size_t in = 3;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const auto w = static_cast<std::size_t>(cfg.widths[i]);
    n += w * in * 9 + w;
    n += static_cast<std::size_t>(cfg.depths[i]) * (w * w * 9 + w);
    in = w;
  }
  return n;
}

}  // namespace esam3::model
