#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isinv/core/tensor.hpp"
#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

struct InverterConfig {
    std::size_t d_in = 64;
    std::size_t d_enc = 128;
    std::size_t heads = 4;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    double ffn_mult = 2.0;
    /// Output vocabulary before the two added start / end ids.
    std::size_t vocab_size = 512;
    /// Pairs are truncated to this many IS rows and target tokens.
    std::size_t max_seq_len = 64;
    /// false: identity projection, requires d_in == d_enc.
    bool use_projection = true;
    double norm_eps = 1e-6;
    double rope_base = 10000.0;
    double embed_std = 0.1;
    std::uint64_t seed = 0;

    std::size_t bos() const { return vocab_size; }
    std::size_t eos() const { return vocab_size + 1; }
    std::size_t out_vocab() const { return vocab_size + 2; }
    void validate() const;
    bool operator==(const InverterConfig&) const = default;
};

struct CrossWeights {
    Tensor norm;            // [d_enc]
    Tensor wq, wk, wv, wo;  // [d_enc x d_enc]
};

struct InverterModel {
    InverterConfig config;
    Tensor proj_w, proj_b, proj_norm;
    std::vector<LayerWeights> encoder;
    Tensor enc_norm;
    Tensor tok_embed;  // [out_vocab x d_enc]
    std::vector<LayerWeights> decoder;
    std::vector<CrossWeights> cross;
    Tensor final_norm;
    Tensor head;  // [d_enc x out_vocab]

    template <typename Fn>
    void for_each(Fn&& fn) const;
    template <typename Fn>
    void for_each_mut(Fn&& fn);
};

InverterModel init_inverter(const InverterConfig& cfg);

/// Layer-l states of one input and the token ids that produced them.
struct InversionPair {
    Tensor h;
    TokenSequence ids;
};

struct InverterTrainOptions {
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch = 8;
    std::uint64_t seed = 0;
};

struct InverterTraining {
    InverterModel model;
    /// Mean teacher-forced cross-entropy per epoch; entry 0 is before training.
    std::vector<double> epoch_loss;
};

InverterTraining train_inverter(std::span<const InversionPair> pairs, const InverterConfig& cfg,
                                const InverterTrainOptions& opts);

/// Mean teacher-forced cross-entropy over pairs.
double inverter_loss(const InverterModel& model, std::span<const InversionPair> pairs);

struct GeneratedText {
    TokenSequence ids;
    std::string text;
};

/// Greedy decoding until the end id or `max_out` tokens.
GeneratedText invert_generate(const Tensor& h, const InverterModel& model, const Tokenizer& tok,
                              std::size_t max_out);

inline constexpr const char* kInverterMagic = "IVRT";
void save_inverter(const std::string& path, const InverterModel& model);
InverterModel load_inverter(const std::string& path);

// ---------------------------------------------------------------------------

template <typename Fn>
void InverterModel::for_each(Fn&& fn) const {
    fn("proj_w", proj_w);
    fn("proj_b", proj_b);
    fn("proj_norm", proj_norm);
    auto layer = [&](const std::string& p, const LayerWeights& l) {
        fn(p + "attn_norm", l.attn_norm);
        fn(p + "wq", l.wq);
        fn(p + "wk", l.wk);
        fn(p + "wv", l.wv);
        fn(p + "wo", l.wo);
        fn(p + "ffn_norm", l.ffn_norm);
        fn(p + "w_gate", l.w_gate);
        fn(p + "w_up", l.w_up);
        fn(p + "w_down", l.w_down);
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) layer("encoder." + std::to_string(i) + ".", encoder[i]);
    fn("enc_norm", enc_norm);
    fn("tok_embed", tok_embed);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const std::string p = "decoder." + std::to_string(i) + ".";
        layer(p, decoder[i]);
        fn(p + "cross_norm", cross[i].norm);
        fn(p + "cross_wq", cross[i].wq);
        fn(p + "cross_wk", cross[i].wk);
        fn(p + "cross_wv", cross[i].wv);
        fn(p + "cross_wo", cross[i].wo);
    }
    fn("final_norm", final_norm);
    fn("head", head);
}

template <typename Fn>
void InverterModel::for_each_mut(Fn&& fn) {
    std::as_const(*this).for_each([&](const std::string& name, const Tensor& t) { fn(name, const_cast<Tensor&>(t)); });
}

}  // namespace isinv
