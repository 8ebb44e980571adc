#include "isinv/blackbox/replication.hpp"

#include <cmath>
#include <random>

#include "isinv/core/adamw.hpp"
#include "isinv/core/errors.hpp"

namespace isinv {

namespace {

void check_pairs(const TransformerWeights& w, std::span<const ReplicationPair> pairs, std::size_t layer) {
    if (layer == 0 || layer > w.config.n_layers) {
        throw ConfigError("replication layer " + std::to_string(layer) + " outside model depth");
    }
    for (const auto& p : pairs) {
        if (p.h.rank() != 2 || p.h.cols() != w.config.d_model || p.h.rows() != p.ids.size()) {
            throw ConfigError("replication pair states " + shape_str(p.h.shape) + " do not fit a d=" +
                              std::to_string(w.config.d_model) + " model over " + std::to_string(p.ids.size()) +
                              " tokens");
        }
        for (int id : p.ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= w.config.vocab_size) {
                throw ConfigError("replication pair token outside model vocabulary");
            }
        }
    }
}

ad::Var pair_loss(const BoundModel& m, const ReplicationPair& p, std::size_t layer) {
    ad::Tape& tape = m.embed.tape();
    ad::Var h = forward_layers(m, ad::gather_rows(m.embed, p.ids), 0, layer);
    return ad::mse(h, tape.constant(p.h));
}

}  // namespace

double replication_mse(const TransformerWeights& w, std::span<const ReplicationPair> pairs, std::size_t layer) {
    check_pairs(w, pairs, layer);
    if (pairs.empty()) throw ConfigError("replication_mse: no pairs");
    double total = 0.0;
    for (const auto& p : pairs) {
        ad::Tape tape;
        BindOptions opts;
        opts.max_layer = layer;
        opts.with_head = false;
        BoundModel m = bind(tape, w, opts);
        total += pair_loss(m, p, layer).value().item();
    }
    return total / static_cast<double>(pairs.size());
}

ReplicationResult replicate_model(const TransformerWeights& base, std::span<const ReplicationPair> pairs,
                                  const ReplicationOptions& opts) {
    check_pairs(base, pairs, opts.layer);
    if (opts.heldout_fraction < 0.0 || opts.heldout_fraction >= 1.0) {
        throw ConfigError("heldout_fraction must be in [0, 1)");
    }
    if (opts.batch == 0 || opts.eval_interval == 0) throw ConfigError("batch and eval_interval must be positive");
    const auto n_held = static_cast<std::size_t>(std::floor(static_cast<double>(pairs.size()) * opts.heldout_fraction));
    const auto train = pairs.first(pairs.size() - n_held);
    const auto held = n_held > 0 ? pairs.last(n_held) : train;
    if (train.empty()) throw ConfigError("replication needs at least one training pair");

    ReplicationResult res;
    TransformerWeights w = base;
    res.pre_mse = replication_mse(w, held, opts.layer);

    AdamW optim(AdamWParams{.lr = opts.lr});
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    BindOptions bind_opts;
    bind_opts.max_layer = opts.layer;
    bind_opts.with_head = false;
    bind_opts.train_embed = true;
    bind_opts.train_upto = opts.layer;

    TransformerWeights best = w;
    double best_mse = replication_mse(w, train, opts.layer);
    res.eval_mse.push_back(best_mse);
    for (std::size_t step = 0; step < opts.steps; ++step) {
        ad::Tape tape;
        BoundModel m = bind(tape, w, bind_opts);
        ad::Var total;
        for (std::size_t b = 0; b < opts.batch; ++b) {
            ad::Var l = pair_loss(m, train[pick(rng)], opts.layer);
            total = total.valid() ? ad::add(total, l) : l;
        }
        ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(opts.batch));
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw NumericError("replication diverged at step " + std::to_string(step));
        res.loss_history.push_back(lv);
        auto grads = tape.grad(loss, m.params).grads;
        std::vector<Tensor*> targets;
        for (const Tensor* t : m.param_tensors) targets.push_back(const_cast<Tensor*>(t));
        optim.step(targets, grads);

        if ((step + 1) % opts.eval_interval == 0 || step + 1 == opts.steps) {
            const double e = replication_mse(w, train, opts.layer);
            res.eval_mse.push_back(e);
            if (e < best_mse) {
                best_mse = e;
                best = w;
                res.best_index = res.eval_mse.size() - 1;
            }
        }
    }
    best.for_each_mut([](const std::string&, Tensor& t) { round_to_float(t); });
    res.post_mse = replication_mse(best, held, opts.layer);
    res.weights = std::move(best);
    return res;
}

InversionResult attack_transferred(const InternalStates& target, const TransformerWeights& replica,
                                   const Tokenizer& tok, const AttackConfig& cfg) {
    InversionResult r = attack_tbs(target, replica, tok, cfg);
    r.attack = "transfer";
    r.black_box = true;
    return r;
}

TransformerWeights interpolate_weights(const TransformerWeights& a, const TransformerWeights& b, double t) {
    MicroLMConfig cb = b.config;
    cb.seed = a.config.seed;
    if (!(a.config == cb)) throw ConfigError("interpolate_weights: model architectures differ");
    TransformerWeights out = a;
    std::vector<const Tensor*> other;
    b.for_each([&](const std::string&, const Tensor& x) { other.push_back(&x); });
    std::size_t k = 0;
    out.for_each_mut([&](const std::string&, Tensor& x) {
        const Tensor& y = *other[k++];
        for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = (1.0 - t) * x.data[i] + t * y.data[i];
        round_to_float(x);
    });
    return out;
}

}  // namespace isinv
