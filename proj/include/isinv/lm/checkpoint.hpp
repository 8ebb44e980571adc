#pragma once

#include <string>

#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"
#include "isinv/lm/weight_file.hpp"

namespace isinv {

inline constexpr const char* kModelMagic = "MLMW";

struct Checkpoint {
    TransformerWeights weights;
    Tokenizer tokenizer;
};

std::string config_to_json(const MicroLMConfig& cfg);
MicroLMConfig config_from_json(const std::string& json);

WeightFile to_weight_file(const TransformerWeights& w, const Tokenizer& tok);
Checkpoint from_weight_file(const WeightFile& file);

void save_checkpoint(const std::string& path, const TransformerWeights& w, const Tokenizer& tok);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace isinv
