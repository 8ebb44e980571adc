#include "isinv/defenses/defenses.hpp"

#include <cmath>
#include <random>

#include "isinv/core/errors.hpp"

namespace isinv {

DefenseKind parse_defense_kind(const std::string& name) {
    if (name == "none") return DefenseKind::none;
    if (name == "dropout") return DefenseKind::dropout;
    if (name == "gaussian_embed" || name == "gaussian") return DefenseKind::gaussian_embed;
    if (name == "laplace_dp" || name == "laplace" || name == "dp") return DefenseKind::laplace_dp;
    if (name == "quantize") return DefenseKind::quantize;
    throw ConfigError("unknown defense '" + name + "'");
}

const char* defense_kind_name(DefenseKind kind) {
    switch (kind) {
        case DefenseKind::none:
            return "none";
        case DefenseKind::dropout:
            return "dropout";
        case DefenseKind::gaussian_embed:
            return "gaussian_embed";
        case DefenseKind::laplace_dp:
            return "laplace_dp";
        case DefenseKind::quantize:
            return "quantize";
    }
    return "?";
}

void DefenseConfig::validate() const {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout p must be in [0, 1)");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(clip > 0.0)) throw ConfigError("clip bound must be positive");
    if (bits != 4 && bits != 8) throw ConfigError("quantization bits must be 4 or 8");
}

namespace {

/// Uniform in the open interval (0, 1).
double open_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

InternalStates defend_dropout(const InternalStates& h, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout p must be in [0, 1)");
    InternalStates out = h;
    if (p == 0.0) return out;
    std::mt19937_64 rng(seed);
    const double keep = 1.0 / (1.0 - p);
    for (double& v : out.h.data) v = open_uniform(rng) < p ? 0.0 : v * keep;
    return out;
}

Tensor defend_gaussian_embed(const Tensor& w, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
    Tensor out = w;
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : out.data) v += normal(rng);
    return out;
}

InternalStates defend_laplace_dp(const InternalStates& h, double epsilon, double clip, std::uint64_t seed) {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(clip > 0.0)) throw ConfigError("clip bound must be positive");
    InternalStates out = h;
    std::mt19937_64 rng(seed);
    const double b = 2.0 * clip / epsilon;
    for (double& v : out.h.data) {
        const double u = open_uniform(rng) - 0.5;
        const double noise = -b * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
        v = std::clamp(v, -clip, clip) + noise;
    }
    return out;
}

Tensor quantize_tensor(const Tensor& t, int bits) {
    if (bits != 4 && bits != 8) throw ConfigError("quantization bits must be 4 or 8");
    const double levels = static_cast<double>((1 << (bits - 1)) - 1);
    double max_abs = 0.0;
    for (double v : t.data) max_abs = std::max(max_abs, std::abs(v));
    Tensor out = t;
    if (max_abs == 0.0) return out;
    const double step = max_abs / levels;
    for (double& v : out.data) v = std::clamp(std::round(v / step), -levels, levels) * step;
    return out;
}

TransformerWeights defend_quantize(const TransformerWeights& w, int bits) {
    TransformerWeights out = w;
    out.for_each_mut([bits](const std::string&, Tensor& t) {
        if (t.rank() == 2) {
            t = quantize_tensor(t, bits);
            round_to_float(t);
        }
    });
    return out;
}

InternalStates defended_states(const TransformerWeights& w, std::span<const int> ids, std::size_t layer,
                               const DefenseConfig& cfg) {
    cfg.validate();
    switch (cfg.kind) {
        case DefenseKind::none:
            return forward_prefix(w, embed_tokens(w, ids), layer);
        case DefenseKind::dropout:
            return defend_dropout(forward_prefix(w, embed_tokens(w, ids), layer), cfg.p, cfg.seed);
        case DefenseKind::gaussian_embed:
            return forward_prefix(w, defend_gaussian_embed(embed_tokens(w, ids), cfg.sigma, cfg.seed), layer);
        case DefenseKind::laplace_dp:
            return defend_laplace_dp(forward_prefix(w, embed_tokens(w, ids), layer), cfg.epsilon, cfg.clip, cfg.seed);
        case DefenseKind::quantize: {
            const TransformerWeights q = defend_quantize(w, cfg.bits);
            return forward_prefix(q, embed_tokens(q, ids), layer);
        }
    }
    throw ConfigError("unknown defense");
}

}  // namespace isinv
