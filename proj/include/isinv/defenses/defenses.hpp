#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "isinv/core/tensor.hpp"
#include "isinv/lm/model.hpp"

namespace isinv {

enum class DefenseKind { none, dropout, gaussian_embed, laplace_dp, quantize };

DefenseKind parse_defense_kind(const std::string& name);
const char* defense_kind_name(DefenseKind kind);

struct DefenseConfig {
    DefenseKind kind = DefenseKind::none;
    double p = 0.1;
    double sigma = 0.05;
    double epsilon = 1e4;
    double clip = 200.0;
    int bits = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Zeroes each entry with probability p and scales survivors by 1 / (1 - p).
InternalStates defend_dropout(const InternalStates& h, double p, std::uint64_t seed);

/// Adds i.i.d. N(0, sigma^2) noise to input embeddings.
Tensor defend_gaussian_embed(const Tensor& w, double sigma, std::uint64_t seed);

/// Clips entries to [-C, C] and adds Laplace noise of scale 2C / epsilon.
/// The uniforms behind the noise depend only on the seed, so a larger epsilon
/// yields entrywise smaller noise.
InternalStates defend_laplace_dp(const InternalStates& h, double epsilon, double clip, std::uint64_t seed);

/// Symmetric per-tensor quantize-dequantize of one tensor.
Tensor quantize_tensor(const Tensor& t, int bits);
/// Quantizes every weight matrix; norm gains and biases keep full precision.
TransformerWeights defend_quantize(const TransformerWeights& w, int bits);

/// Layer-l states the adversary observes for `ids` when the victim runs with
/// the given defense.
InternalStates defended_states(const TransformerWeights& w, std::span<const int> ids, std::size_t layer,
                               const DefenseConfig& cfg);

}  // namespace isinv
