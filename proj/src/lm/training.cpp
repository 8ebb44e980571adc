#include "isinv/lm/training.hpp"

#include <cmath>
#include <random>

#include "isinv/core/adamw.hpp"

namespace isinv {

namespace {

std::span<const int> clip(const TokenSequence& seq, std::size_t seq_len) {
    return std::span<const int>(seq).first(std::min(seq.size(), seq_len + 1));
}

ad::Var sequence_loss(const BoundModel& m, std::span<const int> ids) {
    ad::Var x = ad::gather_rows(m.embed, ids.first(ids.size() - 1));
    ad::Var h = forward_layers(m, x, 0, m.config->n_layers);
    return ad::cross_entropy(lm_logits(m, h), ids.subspan(1));
}

TrainResult run_training(TransformerWeights weights, std::span<const std::string> corpus, const Tokenizer& tok,
                         const TrainOptions& opts) {
    if (corpus.empty()) throw ConfigError("training corpus is empty");
    if (tok.vocab_size() > weights.config.vocab_size) {
        throw ConfigError("tokenizer vocabulary exceeds model vocabulary");
    }
    if (opts.batch == 0 || opts.seq_len == 0) throw ConfigError("batch and seq_len must be positive");

    TokenizedSplit split = split_corpus(corpus, tok, opts.heldout_fraction);
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        if (split.train[i].size() >= 2) usable.push_back(i);
    }
    if (usable.empty()) throw ConfigError("no training text has two or more tokens");
    const auto& eval_set = split.heldout.empty() ? split.train : split.heldout;

    TrainResult result;
    result.heldout_before = heldout_loss(weights, eval_set, opts.seq_len, opts.eval_texts);

    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    AdamW optim(AdamWParams{.lr = opts.lr, .weight_decay = opts.weight_decay});
    BindOptions bind_opts;
    bind_opts.train_embed = true;
    bind_opts.train_upto = weights.config.n_layers;
    bind_opts.train_head = true;

    auto last_good = std::make_shared<TransformerWeights>(weights);
    for (std::size_t step = 0; step < opts.steps; ++step) {
        ad::Tape tape;
        BoundModel m = bind(tape, weights, bind_opts);
        double loss_value = 0.0;
        std::vector<Tensor> grads;
        try {
            ad::Var total;
            for (std::size_t b = 0; b < opts.batch; ++b) {
                ad::Var l = sequence_loss(m, clip(split.train[usable[pick(rng)]], opts.seq_len));
                total = total.valid() ? ad::add(total, l) : l;
            }
            ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(opts.batch));
            loss_value = loss.value().item();
            if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
            grads = tape.grad(loss, m.params).grads;
        } catch (const NumericError& e) {
            throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(),
                                   std::move(last_good));
        }
        *last_good = weights;
        result.loss_history.push_back(loss_value);

        std::vector<Tensor*> targets;
        targets.reserve(m.param_tensors.size());
        for (const Tensor* t : m.param_tensors) targets.push_back(const_cast<Tensor*>(t));
        optim.step(targets, grads);
    }

    weights.for_each_mut([](const std::string&, Tensor& t) { round_to_float(t); });
    result.heldout_after = heldout_loss(weights, eval_set, opts.seq_len, opts.eval_texts);
    result.weights = std::move(weights);
    return result;
}

}  // namespace

TokenizedSplit split_corpus(std::span<const std::string> texts, const Tokenizer& tok, double heldout_fraction) {
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) throw ConfigError("heldout_fraction must be in [0, 1)");
    const auto n_held = static_cast<std::size_t>(std::floor(static_cast<double>(texts.size()) * heldout_fraction));
    TokenizedSplit out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        (i < texts.size() - n_held ? out.train : out.heldout).push_back(tok.encode(texts[i]));
    }
    return out;
}

double heldout_loss(const TransformerWeights& w, std::span<const TokenSequence> texts, std::size_t seq_len,
                    std::size_t max_texts) {
    ad::Tape tape;
    BoundModel m = bind(tape, w);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& seq : texts) {
        if (count == max_texts) break;
        if (seq.size() < 2) continue;
        total += sequence_loss(m, clip(seq, seq_len)).value().item();
        ++count;
    }
    if (count == 0) throw ConfigError("no evaluation text has two or more tokens");
    return total / static_cast<double>(count);
}

TrainResult train_lm(std::span<const std::string> corpus, const Tokenizer& tok, const MicroLMConfig& cfg,
                     const TrainOptions& opts) {
    cfg.validate();
    return run_training(init_weights(cfg), corpus, tok, opts);
}

TrainResult finetune_lm(const TransformerWeights& base, std::span<const std::string> corpus, const Tokenizer& tok,
                        const TrainOptions& opts) {
    return run_training(base, corpus, tok, opts);
}

}  // namespace isinv
