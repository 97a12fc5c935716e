#pragma once

// JSON (de)serialization of configuration records. from_json only
// overrides keys that are present, so partial documents are valid.

#include "json.hpp"

#include "dcvit/model.hpp"
#include "dcvit/preprocess.hpp"
#include "dcvit/train.hpp"

namespace dcvit {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

std::string head_mode_name(HeadMode mode);
HeadMode parse_head_mode(const std::string& name);

}  // namespace dcvit
