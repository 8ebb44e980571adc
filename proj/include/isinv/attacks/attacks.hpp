#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "isinv/core/autodiff.hpp"
#include "isinv/core/tensor.hpp"
#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

enum class Distance { mse, cos };
enum class BasisKind { singular, unbiased };

Distance parse_distance(const std::string& name);
const char* distance_name(Distance d);
BasisKind parse_basis_kind(const std::string& name);
const char* basis_kind_name(BasisKind k);

struct AttackConfig {
    double lr = 5e-4;
    std::size_t steps = 50000;
    double lambda = 0.0;
    Distance distance = Distance::mse;
    BasisKind basis = BasisKind::unbiased;
    double alpha = 5.0 / M_PI;
    /// Softmax temperature, TS only.
    double temperature = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    /// Random feature maps and rows per batch for the distribution-matching penalty.
    std::size_t dm_features = 4;
    std::size_t dm_batch = 8;
    std::size_t dm_hidden = 128;

    std::size_t checkpoint_interval = 100;
    /// Stop once the loss is at or below this value; 0 disables.
    double stop_loss = 0.0;
    double explode_threshold = 1e12;

    void validate() const;
};

/// Orthonormal basis of the embedding space; rows are basis vectors.
struct BasisSet {
    Tensor B;  // [d x d]
    BasisKind kind = BasisKind::unbiased;
};

/// Right-singular vectors of E. singular: B = V^T (rows are the singular
/// vectors, descending singular value). unbiased: B = V.
BasisSet compute_basis(const Tensor& E, BasisKind kind);

/// Fixed random single-hidden-layer networks x -> silu(x W1) W2.
struct DmFeatures {
    std::vector<Tensor> w1;  // [d x hidden]
    std::vector<Tensor> w2;  // [hidden x hidden]
    std::size_t batch = 0;

    static DmFeatures make(std::size_t d, std::size_t n_features, std::size_t hidden, std::size_t batch,
                           std::uint64_t seed);
};

/// Mean over feature maps of || mean phi(w_hat[I]) - mean phi(E[J]) ||_2 with
/// I, J freshly drawn batches of equal size.
ad::Var dm_penalty(const ad::Var& w_hat, const ad::Var& E, const DmFeatures& features, std::mt19937_64& rng);

/// L_im = d(psi_l(w_hat), target), plus lambda * L_dm when lambda > 0.
ad::Var inversion_loss(const BoundModel& m, const ad::Var& w_hat, const Tensor& target, std::size_t layer,
                       const AttackConfig& cfg, const ad::Var& E, const DmFeatures* features, std::mt19937_64* rng);

struct RecoveredTokens {
    TokenSequence ids;
    /// Set when some row of w_hat had zero norm (its id is 0).
    bool zero_row = false;
};

/// Per row, the token whose embedding has maximal cosine similarity; ties go
/// to the smallest id.
RecoveredTokens recover_tokens(const Tensor& w_hat, const Tensor& E);

struct InversionTrace {
    std::vector<double> loss;
    std::vector<double> grad_norm;
    std::vector<std::size_t> checkpoint_steps;
    /// Optimization variable that produced loss[checkpoint_steps[k]].
    std::vector<Tensor> checkpoints;
    std::size_t best_index = 0;
    bool exploded = false;
    bool aborted = false;
    std::string abort_reason;
};

struct InversionResult {
    std::string attack;
    std::string inverted_text;
    TokenSequence inverted_ids;
    Tensor w_hat;
    InversionTrace trace;
    double wall_time = 0.0;
    bool zero_row = false;
    bool black_box = false;

    double best_loss() const { return trace.loss.empty() ? NAN : trace.loss[trace.best_index]; }
};

InversionResult attack_ts(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                          const AttackConfig& cfg);
InversionResult attack_er(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                          const AttackConfig& cfg);
InversionResult attack_tbs(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                           const AttackConfig& cfg);

/// ER from an explicit starting point instead of zeros.
InversionResult attack_er_from(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                               const AttackConfig& cfg, Tensor init);

/// Scalar losses as plain functions of the optimization variable, for
/// gradient checks and tooling. The DM penalty is excluded.
double er_objective(const Tensor& w_hat, const InternalStates& target, const TransformerWeights& w,
                    const AttackConfig& cfg, Tensor* grad);
double tbs_objective(const Tensor& z, const InternalStates& target, const TransformerWeights& w, const BasisSet& basis,
                     const AttackConfig& cfg, Tensor* grad);

}  // namespace isinv
