#pragma once

#include <span>
#include <string>
#include <vector>

#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

struct CapturedIS {
    std::string text;
    TokenSequence ids;
    InternalStates states;
    /// The tokenized text exceeded max_seq_len and was cut.
    bool truncated = false;
};

/// Runs the first `layer` blocks over every text. States are rounded to
/// binary32, the precision they travel in on the wire.
std::vector<CapturedIS> capture_is(std::span<const std::string> texts, std::size_t layer, const TransformerWeights& w,
                                   const Tokenizer& tok);

}  // namespace isinv
