#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isinv/core/autodiff.hpp"
#include "isinv/core/tensor.hpp"

namespace isinv {

struct MicroLMConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_layers = 8;
    std::size_t n_heads = 4;
    double ffn_mult = 2.0;
    bool qkv_bias = false;
    std::size_t max_seq_len = 256;
    std::uint64_t seed = 0;
    double norm_eps = 1e-6;
    double rope_base = 10000.0;
    double embed_std = 0.5;

    std::size_t ffn_hidden() const;
    /// Throws ConfigError when the invariants do not hold.
    void validate() const;
    bool operator==(const MicroLMConfig&) const = default;
};

struct LayerWeights {
    Tensor attn_norm;        // [d]
    Tensor wq, wk, wv, wo;   // [d x d]
    Tensor bq, bk, bv;       // [d], zero unless qkv_bias
    Tensor ffn_norm;         // [d]
    Tensor w_gate, w_up;     // [d x hidden]
    Tensor w_down;           // [hidden x d]
};

/// Llama-style decoder: RMSNorm pre-norm blocks, rotary positions, SwiGLU FFN,
/// untied output head. Treated as immutable once trained or loaded.
struct TransformerWeights {
    MicroLMConfig config;
    Tensor embed;  // [vocab x d]; row i embeds token i
    std::vector<LayerWeights> layers;
    Tensor final_norm;  // [d]
    Tensor head;        // [d x vocab]

    /// Visits (name, tensor) pairs in a fixed canonical order.
    template <typename Fn>
    void for_each(Fn&& fn) const;
    template <typename Fn>
    void for_each_mut(Fn&& fn);

    std::uint64_t fingerprint() const;
};

/// Fresh weights drawn from config.seed; every entry is binary32-representable.
TransformerWeights init_weights(const MicroLMConfig& cfg);

/// Layer-l activations for one input, as observed by the party holding the
/// remaining layers.
struct InternalStates {
    Tensor h;  // [n_tokens x d]
    std::size_t layer = 0;
    std::uint64_t model_fingerprint = 0;
};

/// Model tensors placed on a tape, either as constants or as trainable leaves.
struct BoundLayer {
    ad::Var attn_norm, wq, wk, wv, wo, bq, bk, bv, ffn_norm, w_gate, w_up, w_down;
};

struct BoundModel {
    const MicroLMConfig* config = nullptr;
    ad::Var embed;
    std::vector<BoundLayer> layers;
    ad::Var final_norm;
    ad::Var head;
    /// Trainable leaves paired with the weight tensors they borrow.
    std::vector<ad::Var> params;
    std::vector<const Tensor*> param_tensors;
};

struct BindOptions {
    /// Bind only layers 1..max_layer (0 binds none); `head` needs all layers.
    std::size_t max_layer = static_cast<std::size_t>(-1);
    bool with_head = true;
    bool train_embed = false;
    /// Layers 1..train_upto receive gradients.
    std::size_t train_upto = 0;
    bool train_head = false;
};

BoundModel bind(ad::Tape& tape, const TransformerWeights& w, const BindOptions& opts = {});

/// One transformer block (0-based index) applied to x[n x d].
ad::Var block_forward(const BoundModel& m, std::size_t index, const ad::Var& x);
/// Applies blocks from+1 .. to (1-based) to x.
ad::Var forward_layers(const BoundModel& m, const ad::Var& x, std::size_t from, std::size_t to);
/// Final norm and output projection to vocabulary logits.
ad::Var lm_logits(const BoundModel& m, const ad::Var& x);

/// psi_l(w): runs layers 1..l over embeddings w[n x d]. l = 0 returns w.
InternalStates forward_prefix(const TransformerWeights& w, const Tensor& embeddings, std::size_t layer);
/// Continues a forward pass from layer-`from` states up to layer `to`.
Tensor forward_from(const TransformerWeights& w, const Tensor& states, std::size_t from, std::size_t to);
Tensor embed_tokens(const TransformerWeights& w, std::span<const int> ids);

// ---------------------------------------------------------------------------

template <typename Fn>
void TransformerWeights::for_each(Fn&& fn) const {
    fn("embed", embed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        fn(p + "attn_norm", l.attn_norm);
        fn(p + "wq", l.wq);
        fn(p + "wk", l.wk);
        fn(p + "wv", l.wv);
        fn(p + "wo", l.wo);
        fn(p + "bq", l.bq);
        fn(p + "bk", l.bk);
        fn(p + "bv", l.bv);
        fn(p + "ffn_norm", l.ffn_norm);
        fn(p + "w_gate", l.w_gate);
        fn(p + "w_up", l.w_up);
        fn(p + "w_down", l.w_down);
    }
    fn("final_norm", final_norm);
    fn("head", head);
}

template <typename Fn>
void TransformerWeights::for_each_mut(Fn&& fn) {
    std::as_const(*this).for_each([&](const std::string& name, const Tensor& t) { fn(name, const_cast<Tensor&>(t)); });
}

}  // namespace isinv
