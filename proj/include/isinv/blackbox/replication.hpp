#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "isinv/attacks/attacks.hpp"
#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

/// An adversary query and the victim's layer-l states for it.
struct ReplicationPair {
    TokenSequence ids;
    Tensor h;
};

struct ReplicationOptions {
    std::size_t layer = 1;
    std::size_t steps = 300;
    double lr = 1e-3;
    std::size_t batch = 4;
    std::size_t eval_interval = 25;
    double heldout_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct ReplicationResult {
    TransformerWeights weights;
    std::vector<double> loss_history;
    /// Full training-split MSE every eval_interval steps (index 0 = before any step).
    std::vector<double> eval_mse;
    std::size_t best_index = 0;
    double pre_mse = 0.0;
    double post_mse = 0.0;
};

/// Mean over pairs of the MSE between psi_l(E(x)) and h.
double replication_mse(const TransformerWeights& w, std::span<const ReplicationPair> pairs, std::size_t layer);

/// Finetunes the embedding and layers 1..l of `base` so its layer-l states
/// match the observed pairs. Only the pairs are consulted, never victim weights.
/// pre/post MSE are measured on the held-out tail of `pairs`.
ReplicationResult replicate_model(const TransformerWeights& base, std::span<const ReplicationPair> pairs,
                                  const ReplicationOptions& opts);

/// TBS run against a surrogate model (a replica or the raw base).
InversionResult attack_transferred(const InternalStates& target, const TransformerWeights& replica,
                                   const Tokenizer& tok, const AttackConfig& cfg);

/// Entrywise (1 - t) * a + t * b over every tensor; configs must match.
TransformerWeights interpolate_weights(const TransformerWeights& a, const TransformerWeights& b, double t);

}  // namespace isinv
