#include "isinv/lm/checkpoint.hpp"

#include <json.hpp>

#include "isinv/core/errors.hpp"

namespace isinv {

std::string config_to_json(const MicroLMConfig& cfg) {
    nlohmann::json j = {
        {"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},     {"n_layers", cfg.n_layers},
        {"n_heads", cfg.n_heads},       {"ffn_mult", cfg.ffn_mult},    {"qkv_bias", cfg.qkv_bias},
        {"max_seq_len", cfg.max_seq_len}, {"seed", cfg.seed},          {"norm_eps", cfg.norm_eps},
        {"rope_base", cfg.rope_base},   {"embed_std", cfg.embed_std},
    };
    return j.dump();
}

MicroLMConfig config_from_json(const std::string& text) {
    MicroLMConfig cfg;
    try {
        const auto j = nlohmann::json::parse(text);
        cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
        cfg.d_model = j.value("d_model", cfg.d_model);
        cfg.n_layers = j.value("n_layers", cfg.n_layers);
        cfg.n_heads = j.value("n_heads", cfg.n_heads);
        cfg.ffn_mult = j.value("ffn_mult", cfg.ffn_mult);
        cfg.qkv_bias = j.value("qkv_bias", cfg.qkv_bias);
        cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.norm_eps = j.value("norm_eps", cfg.norm_eps);
        cfg.rope_base = j.value("rope_base", cfg.rope_base);
        cfg.embed_std = j.value("embed_std", cfg.embed_std);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

WeightFile to_weight_file(const TransformerWeights& w, const Tokenizer& tok) {
    WeightFile file;
    file.magic = kModelMagic;
    file.config_json = config_to_json(w.config);
    w.for_each([&](const std::string& name, const Tensor& t) { file.add(name, t); });
    Tensor merges = Tensor::matrix(tok.merges().size(), 2);
    for (std::size_t i = 0; i < tok.merges().size(); ++i) {
        merges.at(i, 0) = tok.merges()[i].first;
        merges.at(i, 1) = tok.merges()[i].second;
    }
    file.add("tokenizer.merges", merges);
    return file;
}

Checkpoint from_weight_file(const WeightFile& file) {
    Checkpoint ck;
    ck.weights = init_weights(config_from_json(file.config_json));
    ck.weights.for_each_mut([&](const std::string& name, Tensor& t) {
        const Tensor& src = file.get(name);
        if (src.shape != t.shape) {
            throw FormatError("tensor '" + name + "' has shape " + shape_str(src.shape) + ", expected " + shape_str(t.shape));
        }
        t.data = src.data;
    });
    std::vector<Tokenizer::Merge> merges;
    const Tensor& m = file.get("tokenizer.merges");
    for (std::size_t i = 0; i < m.rows() && m.numel() > 0; ++i) {
        merges.emplace_back(static_cast<int>(m.at(i, 0)), static_cast<int>(m.at(i, 1)));
    }
    ck.tokenizer = Tokenizer(std::move(merges));
    if (ck.tokenizer.vocab_size() > ck.weights.config.vocab_size) {
        throw FormatError("tokenizer vocabulary exceeds model vocabulary");
    }
    return ck;
}

void save_checkpoint(const std::string& path, const TransformerWeights& w, const Tokenizer& tok) {
    save_weight_file(path, to_weight_file(w, tok));
}

Checkpoint load_checkpoint(const std::string& path) { return from_weight_file(load_weight_file(path, kModelMagic)); }

}  // namespace isinv
