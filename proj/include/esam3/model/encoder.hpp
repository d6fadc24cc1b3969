#pragma once

#include <json.hpp>

#include "esam3/model/layers.hpp"

namespace esam3::model {

/// Toy convolutional backbone: one stride-2 3x3 conv per stage followed by
/// `depths[i]` residual 3x3 convs at that width.
struct EncoderConfig {
  std::vector<int> widths = {16, 32, 64};
  std::vector<int> depths = {0, 1, 1};

  void validate() const;
  int stride() const { return 1 << widths.size(); }
  int out_channels() const { return widths.back(); }
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

void init_encoder(ParamStore& store, const EncoderConfig& cfg, const std::string& prefix, ModuleTag tag, Rng& rng);
/// image: (3, H, W) -> (widths.back(), H/stride, W/stride).
Var encode(Session& s, const EncoderConfig& cfg, const std::string& prefix, Var image);
/// Number of scalars init_encoder would create.
std::size_t encoder_param_count(const EncoderConfig& cfg);

}  // namespace esam3::model
