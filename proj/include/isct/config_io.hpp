#pragma once

#include "json.hpp"

#include "isct/dataset.hpp"
#include "isct/evaluate.hpp"
#include "isct/model.hpp"
#include "isct/tokenizer.hpp"
#include "isct/train.hpp"

namespace isct {

// JSON views of the configuration structs. from_json rejects unknown or
// ill-typed fields with ConfigError.

nlohmann::json to_json(const ChannelSpec& c);
ChannelSpec channel_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TokenizerConfig& c);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LayoutTable& t);
LayoutTable layout_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CollectorConfig& c);
nlohmann::json to_json(const EvalConfig& c);

}  // namespace isct
