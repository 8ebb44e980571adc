#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isinv/core/errors.hpp"
#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

struct TrainOptions {
    std::size_t steps = 600;
    double lr = 3e-3;
    /// Texts per step; each text is one sequence starting at position 0.
    std::size_t batch = 4;
    std::size_t seq_len = 48;
    double weight_decay = 0.0;
    /// Fraction of texts (taken from the end) held out for evaluation.
    double heldout_fraction = 0.1;
    std::size_t eval_texts = 64;
    std::uint64_t seed = 0;
};

struct TrainResult {
    TransformerWeights weights;
    std::vector<double> loss_history;
    double heldout_before = 0.0;
    double heldout_after = 0.0;
};

/// Raised when the training loss becomes non-finite; carries the weights of
/// the last step whose loss was finite.
class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, std::shared_ptr<const TransformerWeights> last_good)
        : NumericError(what), last_good_(std::move(last_good)) {}
    const TransformerWeights& last_good() const { return *last_good_; }

private:
    std::shared_ptr<const TransformerWeights> last_good_;
};

/// Texts split into a training part and a held-out tail, already tokenized.
struct TokenizedSplit {
    std::vector<TokenSequence> train;
    std::vector<TokenSequence> heldout;
};
TokenizedSplit split_corpus(std::span<const std::string> texts, const Tokenizer& tok, double heldout_fraction);

/// Mean next-token loss over up to `max_texts` sequences (each truncated to
/// seq_len + 1 tokens). Sequences shorter than two tokens are skipped.
double heldout_loss(const TransformerWeights& w, std::span<const TokenSequence> texts, std::size_t seq_len,
                    std::size_t max_texts);

/// Trains a fresh model (init from cfg.seed) with next-token cross-entropy.
/// Final weights are rounded to binary32 so checkpoints reload bit-exactly.
TrainResult train_lm(std::span<const std::string> corpus, const Tokenizer& tok, const MicroLMConfig& cfg,
                     const TrainOptions& opts);

/// Continues training every parameter of `base` on a new corpus.
TrainResult finetune_lm(const TransformerWeights& base, std::span<const std::string> corpus, const Tokenizer& tok,
                        const TrainOptions& opts);

}  // namespace isinv
