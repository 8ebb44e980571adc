#include "isinv/blackbox/inverter.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "isinv/core/adamw.hpp"
#include "isinv/core/autodiff.hpp"
#include "isinv/core/errors.hpp"
#include "isinv/lm/weight_file.hpp"

namespace isinv {

void InverterConfig::validate() const {
    if (d_in == 0 || d_enc == 0 || heads == 0) throw ConfigError("inverter widths must be positive");
    if (d_enc % heads != 0 || (d_enc / heads) % 2 != 0) throw ConfigError("d_enc must split into even-width heads");
    if (enc_layers == 0 || dec_layers == 0) throw ConfigError("inverter needs encoder and decoder layers");
    if (vocab_size < 2) throw ConfigError("inverter vocabulary too small");
    if (max_seq_len == 0) throw ConfigError("inverter max_seq_len must be positive");
    if (!(ffn_mult > 0.0)) throw ConfigError("ffn_mult must be positive");
    if (!use_projection && d_in != d_enc) throw ConfigError("identity projection requires d_in == d_enc");
}

namespace {

class Init {
public:
    explicit Init(std::uint64_t seed) : rng_(seed) {}

    Tensor gaussian(std::size_t r, std::size_t c, double sd) {
        Tensor t = Tensor::matrix(r, c);
        for (double& v : t.data) v = sd * normal_(rng_);
        round_to_float(t);
        return t;
    }
    Tensor dense(std::size_t in, std::size_t out, double gain = 1.0) {
        return gaussian(in, out, gain / std::sqrt(static_cast<double>(in)));
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

Tensor ones(std::size_t n) { return Tensor({n}, 1.0); }

std::size_t ffn_width(const InverterConfig& c) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(c.ffn_mult * static_cast<double>(c.d_enc))));
}

LayerWeights make_layer(Init& init, const InverterConfig& c, double out_gain) {
    const std::size_t d = c.d_enc, f = ffn_width(c);
    LayerWeights l;
    l.attn_norm = ones(d);
    l.wq = init.dense(d, d);
    l.wk = init.dense(d, d);
    l.wv = init.dense(d, d);
    l.wo = init.dense(d, d, out_gain);
    l.ffn_norm = ones(d);
    l.w_gate = init.dense(d, f);
    l.w_up = init.dense(d, f);
    l.w_down = init.dense(f, d, out_gain);
    return l;
}

struct BoundLayerVars {
    ad::Var attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
};
struct BoundCross {
    ad::Var norm, wq, wk, wv, wo;
};

struct BoundInverter {
    const InverterConfig* config = nullptr;
    ad::Var proj_w, proj_b, proj_norm;
    std::vector<BoundLayerVars> encoder;
    ad::Var enc_norm, tok_embed;
    std::vector<BoundLayerVars> decoder;
    std::vector<BoundCross> cross;
    ad::Var final_norm, head;
    std::vector<ad::Var> params;
    std::vector<Tensor*> targets;
};

BoundInverter bind_inverter(ad::Tape& tape, const InverterModel& m, bool trainable) {
    BoundInverter b;
    b.config = &m.config;
    auto put = [&](const Tensor& t) {
        if (!trainable) return tape.constant(t);
        ad::Var v = tape.parameter(t);
        b.params.push_back(v);
        b.targets.push_back(const_cast<Tensor*>(&t));
        return v;
    };
    auto layer = [&](const LayerWeights& l) {
        return BoundLayerVars{put(l.attn_norm), put(l.wq),     put(l.wk),   put(l.wv),    put(l.wo),
                              put(l.ffn_norm),  put(l.w_gate), put(l.w_up), put(l.w_down)};
    };
    if (m.config.use_projection) {
        b.proj_w = put(m.proj_w);
        b.proj_b = put(m.proj_b);
        b.proj_norm = put(m.proj_norm);
    }
    for (const auto& l : m.encoder) b.encoder.push_back(layer(l));
    b.enc_norm = put(m.enc_norm);
    b.tok_embed = put(m.tok_embed);
    for (std::size_t i = 0; i < m.decoder.size(); ++i) {
        b.decoder.push_back(layer(m.decoder[i]));
        const auto& c = m.cross[i];
        b.cross.push_back({put(c.norm), put(c.wq), put(c.wk), put(c.wv), put(c.wo)});
    }
    b.final_norm = put(m.final_norm);
    b.head = put(m.head);
    return b;
}

/// Attention applied independently to each segment of stacked rows.
ad::Var segment_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::span<const std::size_t> qlens,
                          std::span<const std::size_t> klens, const InverterConfig& c, bool causal, bool rotary) {
    std::vector<ad::Var> outs;
    std::size_t qo = 0, ko = 0;
    for (std::size_t s = 0; s < qlens.size(); ++s) {
        ad::Var qs = ad::slice_rows(q, qo, qlens[s]);
        ad::Var ks = ad::slice_rows(k, ko, klens[s]);
        ad::Var vs = ad::slice_rows(v, ko, klens[s]);
        if (rotary) {
            qs = ad::rope(qs, c.heads, c.rope_base);
            ks = ad::rope(ks, c.heads, c.rope_base);
        }
        outs.push_back(ad::attention(qs, ks, vs, c.heads, causal));
        qo += qlens[s];
        ko += klens[s];
    }
    return outs.size() == 1 ? outs[0] : ad::concat_rows(outs);
}

ad::Var ffn(const BoundLayerVars& l, const ad::Var& x, double eps) {
    ad::Var h = ad::rmsnorm_row(x, l.ffn_norm, eps);
    return ad::add(x, ad::matmul(ad::mul(ad::silu(ad::matmul(h, l.w_gate)), ad::matmul(h, l.w_up)), l.w_down));
}

ad::Var self_block(const BoundLayerVars& l, const ad::Var& x, std::span<const std::size_t> lens,
                   const InverterConfig& c, bool causal) {
    ad::Var h = ad::rmsnorm_row(x, l.attn_norm, c.norm_eps);
    ad::Var a = segment_attention(ad::matmul(h, l.wq), ad::matmul(h, l.wk), ad::matmul(h, l.wv), lens, lens, c, causal,
                                  /*rotary=*/true);
    return ad::add(x, ad::matmul(a, l.wo));
}

struct Encoded {
    ad::Var states;
    std::vector<std::size_t> lens;
};

Tensor truncated(const Tensor& h, std::size_t max_rows) {
    Tensor out = Tensor::matrix(std::min(h.rows(), max_rows), h.cols());
    std::copy_n(h.data.begin(), out.numel(), out.data.begin());
    return out;
}

Encoded encode(ad::Tape& tape, const BoundInverter& b, std::span<const Tensor* const> hs) {
    const InverterConfig& c = *b.config;
    Encoded e;
    std::vector<ad::Var> parts;
    for (const Tensor* h : hs) {
        if (h->rank() != 2 || h->cols() != c.d_in || h->rows() == 0) {
            throw DimensionError("inverter input must be [n x " + std::to_string(c.d_in) + "] with n > 0");
        }
        Tensor t = truncated(*h, c.max_seq_len);
        e.lens.push_back(t.rows());
        parts.push_back(tape.variable(std::move(t)));
    }
    ad::Var x = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
    if (c.use_projection) x = ad::rmsnorm_row(ad::add(ad::matmul(x, b.proj_w), b.proj_b), b.proj_norm, c.norm_eps);
    for (const auto& l : b.encoder) x = ffn(l, self_block(l, x, e.lens, c, /*causal=*/false), c.norm_eps);
    e.states = ad::rmsnorm_row(x, b.enc_norm, c.norm_eps);
    return e;
}

ad::Var decode_logits(const BoundInverter& b, const Encoded& enc, std::span<const int> inputs,
                      std::span<const std::size_t> lens) {
    const InverterConfig& c = *b.config;
    ad::Var y = ad::gather_rows(b.tok_embed, inputs);
    for (std::size_t i = 0; i < b.decoder.size(); ++i) {
        const auto& l = b.decoder[i];
        const auto& x = b.cross[i];
        y = self_block(l, y, lens, c, /*causal=*/true);
        ad::Var h = ad::rmsnorm_row(y, x.norm, c.norm_eps);
        ad::Var a = segment_attention(ad::matmul(h, x.wq), ad::matmul(enc.states, x.wk), ad::matmul(enc.states, x.wv),
                                      lens, enc.lens, c, /*causal=*/false, /*rotary=*/false);
        y = ad::add(y, ad::matmul(a, x.wo));
        y = ffn(l, y, c.norm_eps);
    }
    return ad::matmul(ad::rmsnorm_row(y, b.final_norm, c.norm_eps), b.head);
}

/// Teacher-forced loss over a batch of pairs, on `tape`.
ad::Var batch_loss(ad::Tape& tape, const BoundInverter& b, std::span<const InversionPair* const> batch) {
    const InverterConfig& c = *b.config;
    std::vector<const Tensor*> hs;
    std::vector<int> inputs, targets;
    std::vector<std::size_t> lens;
    for (const InversionPair* p : batch) {
        hs.push_back(&p->h);
        const std::size_t n = std::min(p->ids.size(), c.max_seq_len);
        inputs.push_back(static_cast<int>(c.bos()));
        for (std::size_t i = 0; i < n; ++i) {
            const int id = p->ids[i];
            if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
                throw DimensionError("inverter target id outside vocabulary");
            }
            inputs.push_back(id);
            targets.push_back(id);
        }
        targets.push_back(static_cast<int>(c.eos()));
        lens.push_back(n + 1);
    }
    Encoded enc = encode(tape, b, hs);
    return ad::cross_entropy(decode_logits(b, enc, inputs, lens), targets);
}

}  // namespace

InverterModel init_inverter(const InverterConfig& cfg) {
    cfg.validate();
    Init init(cfg.seed);
    InverterModel m;
    m.config = cfg;
    const std::size_t d = cfg.d_enc;
    if (cfg.use_projection) {
        m.proj_w = init.dense(cfg.d_in, d);
        m.proj_b = Tensor::matrix(1, d);
        m.proj_norm = ones(d);
    }
    const double enc_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.enc_layers));
    const double dec_gain = 1.0 / std::sqrt(3.0 * static_cast<double>(cfg.dec_layers));
    for (std::size_t i = 0; i < cfg.enc_layers; ++i) m.encoder.push_back(make_layer(init, cfg, enc_gain));
    m.enc_norm = ones(d);
    m.tok_embed = init.gaussian(cfg.out_vocab(), d, cfg.embed_std);
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
        m.decoder.push_back(make_layer(init, cfg, dec_gain));
        CrossWeights x;
        x.norm = ones(d);
        x.wq = init.dense(d, d);
        x.wk = init.dense(d, d);
        x.wv = init.dense(d, d);
        x.wo = init.dense(d, d, dec_gain);
        m.cross.push_back(std::move(x));
    }
    m.final_norm = ones(d);
    m.head = init.dense(d, cfg.out_vocab());
    return m;
}

double inverter_loss(const InverterModel& model, std::span<const InversionPair> pairs) {
    if (pairs.empty()) throw ConfigError("inverter_loss: no pairs");
    double total = 0.0;
    std::size_t count = 0;
    for (const InversionPair& p : pairs) {
        ad::Tape tape;
        BoundInverter b = bind_inverter(tape, model, /*trainable=*/false);
        const InversionPair* pp = &p;
        total += batch_loss(tape, b, std::span<const InversionPair* const>(&pp, 1)).value().item();
        ++count;
    }
    return total / static_cast<double>(count);
}

InverterTraining train_inverter(std::span<const InversionPair> pairs, const InverterConfig& cfg,
                                const InverterTrainOptions& opts) {
    if (pairs.empty()) throw ConfigError("train_inverter: no pairs");
    if (opts.batch == 0) throw ConfigError("train_inverter: batch must be positive");
    InverterTraining out;
    out.model = init_inverter(cfg);
    InverterModel& m = out.model;

    const std::size_t probe = std::min<std::size_t>(pairs.size(), 256);
    out.epoch_loss.push_back(inverter_loss(m, pairs.first(probe)));

    AdamW optim(AdamWParams{.lr = opts.lr});
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch) {
            std::vector<const InversionPair*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + opts.batch); ++i) {
                batch.push_back(&pairs[order[i]]);
            }
            ad::Tape tape;
            BoundInverter b = bind_inverter(tape, m, /*trainable=*/true);
            ad::Var loss = batch_loss(tape, b, batch);
            const double lv = loss.value().item();
            if (!std::isfinite(lv)) throw NumericError("inverter training diverged in epoch " + std::to_string(epoch));
            auto grads = tape.grad(loss, b.params).grads;
            optim.step(b.targets, grads);
            sum += lv;
            ++batches;
        }
        out.epoch_loss.push_back(sum / static_cast<double>(batches));
    }
    m.for_each_mut([](const std::string&, Tensor& t) { round_to_float(t); });
    return out;
}

GeneratedText invert_generate(const Tensor& h, const InverterModel& model, const Tokenizer& tok,
                              std::size_t max_out) {
    const InverterConfig& c = model.config;
    ad::Tape tape;
    BoundInverter b = bind_inverter(tape, model, /*trainable=*/false);
    const Tensor* hp = &h;
    Encoded enc = encode(tape, b, std::span<const Tensor* const>(&hp, 1));

    GeneratedText out;
    std::vector<int> inputs{static_cast<int>(c.bos())};
    const std::size_t limit = std::min(max_out, c.max_seq_len);
    while (out.ids.size() < limit) {
        const std::size_t len = inputs.size();
        ad::Var logits = decode_logits(b, enc, inputs, std::span<const std::size_t>(&len, 1));
        const auto last = logits.value().row(len - 1);
        std::size_t best = 0;
        for (std::size_t j = 1; j < last.size(); ++j) {
            if (j != c.bos() && last[j] > last[best]) best = j;
        }
        if (best == c.eos()) break;
        out.ids.push_back(static_cast<int>(best));
        inputs.push_back(static_cast<int>(best));
    }
    std::vector<int> printable;
    for (int id : out.ids) {
        if (static_cast<std::size_t>(id) < tok.vocab_size()) printable.push_back(id);
    }
    out.text = tok.decode(printable);
    return out;
}

namespace {

nlohmann::json inverter_config_json(const InverterConfig& c) {
    return {{"d_in", c.d_in},
            {"d_enc", c.d_enc},
            {"heads", c.heads},
            {"enc_layers", c.enc_layers},
            {"dec_layers", c.dec_layers},
            {"ffn_mult", c.ffn_mult},
            {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len},
            {"use_projection", c.use_projection},
            {"norm_eps", c.norm_eps},
            {"rope_base", c.rope_base},
            {"embed_std", c.embed_std},
            {"seed", c.seed}};
}

}  // namespace

void save_inverter(const std::string& path, const InverterModel& model) {
    WeightFile file;
    file.magic = kInverterMagic;
    file.config_json = inverter_config_json(model.config).dump();
    model.for_each([&](const std::string& name, const Tensor& t) {
        if (t.numel() > 0) file.add(name, t);
    });
    save_weight_file(path, file);
}

InverterModel load_inverter(const std::string& path) {
    const WeightFile file = load_weight_file(path, kInverterMagic);
    InverterConfig c;
    try {
        const auto j = nlohmann::json::parse(file.config_json);
        c.d_in = j.at("d_in");
        c.d_enc = j.at("d_enc");
        c.heads = j.at("heads");
        c.enc_layers = j.at("enc_layers");
        c.dec_layers = j.at("dec_layers");
        c.ffn_mult = j.at("ffn_mult");
        c.vocab_size = j.at("vocab_size");
        c.max_seq_len = j.at("max_seq_len");
        c.use_projection = j.at("use_projection");
        c.norm_eps = j.at("norm_eps");
        c.rope_base = j.at("rope_base");
        c.embed_std = j.at("embed_std");
        c.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("inverter config: ") + e.what());
    }
    InverterModel m = init_inverter(c);
    m.for_each_mut([&](const std::string& name, Tensor& t) {
        if (t.numel() == 0) return;
        const Tensor& src = file.get(name);
        if (src.shape != t.shape) throw FormatError("inverter tensor '" + name + "' has the wrong shape");
        t.data = src.data;
    });
    return m;
}

}  // namespace isinv
