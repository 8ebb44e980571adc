#include "isinv/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "isinv/core/binary_io.hpp"
#include "isinv/core/errors.hpp"

namespace isinv {

std::size_t MicroLMConfig::ffn_hidden() const {
    return static_cast<std::size_t>(std::llround(ffn_mult * static_cast<double>(d_model)));
}

void MicroLMConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (n_layers == 0) throw ConfigError("n_layers must be positive");
    if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if ((d_model / n_heads) % 2 != 0) throw ConfigError("head width must be even for rotary encoding");
    if (ffn_hidden() == 0) throw ConfigError("ffn_mult too small");
    if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
    if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
}

std::uint64_t TransformerWeights::fingerprint() const {
    Fnv1a h;
    const std::uint64_t dims[] = {config.vocab_size, config.d_model, config.n_layers, config.n_heads,
                                  config.ffn_hidden(), config.qkv_bias ? 1u : 0u, config.max_seq_len};
    h.update(dims, sizeof(dims));
    for_each([&](const std::string& name, const Tensor& t) {
        h.update(name.data(), name.size());
        h.update(t.data.data(), t.data.size() * sizeof(double));
    });
    return h.digest();
}

TransformerWeights init_weights(const MicroLMConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.d_model;
    const std::size_t hidden = cfg.ffn_hidden();
    const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

    auto gaussian = [&](std::size_t r, std::size_t c, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        Tensor t = Tensor::matrix(r, c);
        for (double& v : t.data) v = dist(rng);
        round_to_float(t);
        return t;
    };
    auto ones = [](std::size_t n) { return Tensor(Shape{n}, 1.0); };
    auto zeros = [](std::size_t n) { return Tensor(Shape{n}, 0.0); };

    TransformerWeights w;
    w.config = cfg;
    w.embed = gaussian(cfg.vocab_size, d, cfg.embed_std);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        LayerWeights l;
        l.attn_norm = ones(d);
        l.wq = gaussian(d, d, sd);
        l.wk = gaussian(d, d, sd);
        l.wv = gaussian(d, d, sd);
        l.wo = gaussian(d, d, sd * depth_scale);
        l.bq = zeros(d);
        l.bk = zeros(d);
        l.bv = zeros(d);
        l.ffn_norm = ones(d);
        l.w_gate = gaussian(d, hidden, sd);
        l.w_up = gaussian(d, hidden, sd);
        l.w_down = gaussian(hidden, d, sh * depth_scale);
        w.layers.push_back(std::move(l));
    }
    w.final_norm = ones(d);
    w.head = gaussian(d, cfg.vocab_size, sd);
    return w;
}

BoundModel bind(ad::Tape& tape, const TransformerWeights& w, const BindOptions& opts) {
    BoundModel m;
    m.config = &w.config;
    auto put = [&](const Tensor& t, bool trainable) {
        if (!trainable) return tape.constant(t);
        ad::Var v = tape.parameter(t);
        m.params.push_back(v);
        m.param_tensors.push_back(&t);
        return v;
    };
    m.embed = put(w.embed, opts.train_embed);
    const std::size_t n = std::min(opts.max_layer, w.layers.size());
    const bool bias = w.config.qkv_bias;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& l = w.layers[i];
        const bool tr = i < opts.train_upto;
        BoundLayer b;
        b.attn_norm = put(l.attn_norm, tr);
        b.wq = put(l.wq, tr);
        b.wk = put(l.wk, tr);
        b.wv = put(l.wv, tr);
        b.wo = put(l.wo, tr);
        if (bias) {
            b.bq = put(l.bq, tr);
            b.bk = put(l.bk, tr);
            b.bv = put(l.bv, tr);
        }
        b.ffn_norm = put(l.ffn_norm, tr);
        b.w_gate = put(l.w_gate, tr);
        b.w_up = put(l.w_up, tr);
        b.w_down = put(l.w_down, tr);
        m.layers.push_back(b);
    }
    if (opts.with_head && n == w.layers.size()) {
        m.final_norm = put(w.final_norm, opts.train_head);
        m.head = put(w.head, opts.train_head);
    }
    return m;
}

ad::Var block_forward(const BoundModel& m, std::size_t index, const ad::Var& x) {
    const auto& cfg = *m.config;
    const BoundLayer& l = m.layers.at(index);
    const double eps = cfg.norm_eps;

    ad::Var h = ad::rmsnorm_row(x, l.attn_norm, eps);
    ad::Var q = ad::matmul(h, l.wq);
    ad::Var k = ad::matmul(h, l.wk);
    ad::Var v = ad::matmul(h, l.wv);
    if (l.bq.valid()) {
        q = ad::add(q, l.bq);
        k = ad::add(k, l.bk);
        v = ad::add(v, l.bv);
    }
    q = ad::rope(q, cfg.n_heads, cfg.rope_base);
    k = ad::rope(k, cfg.n_heads, cfg.rope_base);
    ad::Var a = ad::attention(q, k, v, cfg.n_heads, /*causal=*/true);
    ad::Var x1 = ad::add(x, ad::matmul(a, l.wo));

    ad::Var h2 = ad::rmsnorm_row(x1, l.ffn_norm, eps);
    ad::Var gate = ad::silu(ad::matmul(h2, l.w_gate));
    ad::Var up = ad::matmul(h2, l.w_up);
    return ad::add(x1, ad::matmul(ad::mul(gate, up), l.w_down));
}

ad::Var forward_layers(const BoundModel& m, const ad::Var& x, std::size_t from, std::size_t to) {
    if (to > m.config->n_layers || from > to) {
        throw ConfigError("layer range (" + std::to_string(from) + ", " + std::to_string(to) + "] outside model depth " +
                          std::to_string(m.config->n_layers));
    }
    if (to > m.layers.size()) throw ConfigError("layer " + std::to_string(to) + " was not bound");
    if (x.rows() > m.config->max_seq_len) {
        throw ConfigError("sequence of " + std::to_string(x.rows()) + " tokens exceeds max_seq_len");
    }
    ad::Var h = x;
    for (std::size_t i = from; i < to; ++i) h = block_forward(m, i, h);
    return h;
}

ad::Var lm_logits(const BoundModel& m, const ad::Var& x) {
    if (!m.head.valid()) throw ConfigError("output head not bound");
    return ad::matmul(ad::rmsnorm_row(x, m.final_norm, m.config->norm_eps), m.head);
}

InternalStates forward_prefix(const TransformerWeights& w, const Tensor& embeddings, std::size_t layer) {
    if (layer > w.config.n_layers) {
        throw ConfigError("layer " + std::to_string(layer) + " outside model depth " + std::to_string(w.config.n_layers));
    }
    if (embeddings.rank() != 2 || embeddings.cols() != w.config.d_model) {
        throw DimensionError("forward_prefix: embeddings must be [n x " + std::to_string(w.config.d_model) + "]");
    }
    InternalStates out;
    out.layer = layer;
    out.model_fingerprint = w.fingerprint();
    out.h = forward_from(w, embeddings, 0, layer);
    return out;
}

Tensor forward_from(const TransformerWeights& w, const Tensor& states, std::size_t from, std::size_t to) {
    if (from == to) {
        Tensor copy = states;
        copy.requires_grad = false;
        return copy;
    }
    ad::Tape tape;
    BindOptions opts;
    opts.max_layer = to;
    opts.with_head = false;
    BoundModel m = bind(tape, w, opts);
    return forward_layers(m, tape.constant(states), from, to).value();
}

Tensor embed_tokens(const TransformerWeights& w, std::span<const int> ids) {
    Tensor out = Tensor::matrix(ids.size(), w.config.d_model);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= w.config.vocab_size) {
            throw DimensionError("token id " + std::to_string(ids[i]) + " outside model vocabulary");
        }
        auto src = w.embed.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace isinv
