#include "isinv/lm/capture.hpp"

#include "isinv/core/errors.hpp"

namespace isinv {

std::vector<CapturedIS> capture_is(std::span<const std::string> texts, std::size_t layer, const TransformerWeights& w,
                                   const Tokenizer& tok) {
    if (layer > w.config.n_layers) {
        throw ConfigError("layer " + std::to_string(layer) + " outside model depth " + std::to_string(w.config.n_layers));
    }
    std::vector<CapturedIS> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        CapturedIS rec;
        rec.text = text;
        rec.ids = tok.encode(text);
        if (rec.ids.size() > w.config.max_seq_len) {
            rec.ids.resize(w.config.max_seq_len);
            rec.truncated = true;
        }
        rec.states = forward_prefix(w, embed_tokens(w, rec.ids), layer);
        round_to_float(rec.states.h);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace isinv
