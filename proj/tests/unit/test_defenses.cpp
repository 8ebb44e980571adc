#include <doctest.h>

#include <cmath>
#include <set>

#include "isinv/core/errors.hpp"
#include "isinv/defenses/defenses.hpp"
#include "oracles.hpp"

using namespace isinv;

namespace {

MicroLMConfig tiny_config() {
    MicroLMConfig c;
    c.vocab_size = 256;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 32;
    return c;
}

InternalStates wrap(Tensor h) {
    InternalStates s;
    s.h = std::move(h);
    s.layer = 1;
    return s;
}

}  // namespace

TEST_CASE("dropout with p = 0 is the identity") {
    const InternalStates h = wrap(oracle::random_matrix(10, 16, 1));
    CHECK(max_abs_diff(defend_dropout(h, 0.0, 3).h, h.h) == 0.0);
}

TEST_CASE("dropout zeroes about p of the entries and preserves the mean") {
    const InternalStates h = wrap(Tensor::matrix(200, 100, 1.0));
    const Tensor d = defend_dropout(h, 0.3, 5).h;
    std::size_t zeros = 0;
    double total = 0.0;
    for (double v : d.data) {
        if (v == 0.0) ++zeros;
        else CHECK(v == doctest::Approx(1.0 / 0.7));
        total += v;
    }
    CHECK(static_cast<double>(zeros) / 20000.0 == doctest::Approx(0.3).epsilon(0.05));
    CHECK(total / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
    CHECK_THROWS_AS(defend_dropout(h, 1.0, 0), ConfigError);
}

TEST_CASE("Laplace noise has mean absolute deviation 2C / epsilon") {
    const InternalStates zero = wrap(Tensor::matrix(300, 100));
    for (double eps : {1.0, 10.0, 1e3}) {
        const double clip = 5.0, b = 2.0 * clip / eps;
        const Tensor n = defend_laplace_dp(zero, eps, clip, 7).h;
        double mad = 0.0, mean = 0.0;
        for (double v : n.data) {
            mad += std::abs(v);
            mean += v;
        }
        mad /= static_cast<double>(n.numel());
        mean /= static_cast<double>(n.numel());
        CHECK(mad == doctest::Approx(b).epsilon(0.03));
        CHECK(std::abs(mean) < 0.05 * b);
    }
}

TEST_CASE("Laplace release clips before adding noise and couples noise across epsilon") {
    const InternalStates h = wrap(Tensor::from_rows({{-50.0, 0.5, 50.0}}));
    const Tensor tight = defend_laplace_dp(h, 1e12, 2.0, 1).h;
    CHECK(tight.at(0, 0) == doctest::Approx(-2.0));
    CHECK(tight.at(0, 1) == doctest::Approx(0.5));
    CHECK(tight.at(0, 2) == doctest::Approx(2.0));

    const InternalStates zero = wrap(Tensor::matrix(20, 20));
    const Tensor big = defend_laplace_dp(zero, 100.0, 1.0, 9).h;
    const Tensor small = defend_laplace_dp(zero, 1.0, 1.0, 9).h;
    for (std::size_t i = 0; i < big.numel(); ++i) CHECK(std::abs(big.data[i]) <= std::abs(small.data[i]));
}

TEST_CASE("Gaussian embedding noise has the configured spread") {
    const Tensor w = Tensor::matrix(200, 100, 2.0);
    CHECK(max_abs_diff(defend_gaussian_embed(w, 0.0, 1), w) == 0.0);
    const Tensor n = defend_gaussian_embed(w, 0.1, 1);
    double ss = 0.0;
    for (double v : n.data) ss += (v - 2.0) * (v - 2.0);
    CHECK(std::sqrt(ss / static_cast<double>(n.numel())) == doctest::Approx(0.1).epsilon(0.03));
}

TEST_CASE("symmetric quantization error is at most half a step") {
    const Tensor t = oracle::random_matrix(30, 30, 4);
    for (int bits : {4, 8}) {
        const Tensor q = quantize_tensor(t, bits);
        double max_abs = 0.0;
        for (double v : t.data) max_abs = std::max(max_abs, std::abs(v));
        const double step = max_abs / ((1 << (bits - 1)) - 1);
        CHECK(max_abs_diff(q, t) <= step / 2 + 1e-12);
        std::set<double> levels(q.data.begin(), q.data.end());
        CHECK(levels.size() <= static_cast<std::size_t>((1 << bits) - 1));
        CHECK(max_abs_diff(quantize_tensor(q, bits), q) <= 1e-12);
    }
    CHECK_THROWS_AS(quantize_tensor(t, 3), ConfigError);
}

TEST_CASE("model quantization leaves norm gains untouched") {
    const TransformerWeights w = init_weights(tiny_config());
    TransformerWeights w2 = w;
    for (auto& l : w2.layers) l.attn_norm.data[0] = 1.2345;
    const TransformerWeights q = defend_quantize(w2, 8);
    CHECK(q.layers[0].attn_norm.data[0] == 1.2345);
    CHECK(max_abs_diff(q.layers[0].wq, w.layers[0].wq) > 0.0);
}

TEST_CASE("defended states dispatch on the defense kind") {
    const TransformerWeights w = init_weights(tiny_config());
    const std::vector<int> ids = {4, 8, 15, 16, 23};
    const Tensor clean = forward_prefix(w, embed_tokens(w, ids), 2).h;
    DefenseConfig cfg;
    CHECK(max_abs_diff(defended_states(w, ids, 2, cfg).h, clean) == 0.0);
    cfg.kind = DefenseKind::dropout;
    cfg.p = 0.0;
    CHECK(max_abs_diff(defended_states(w, ids, 2, cfg).h, clean) == 0.0);
    cfg.kind = DefenseKind::gaussian_embed;
    cfg.sigma = 0.0;
    CHECK(max_abs_diff(defended_states(w, ids, 2, cfg).h, clean) == 0.0);
    cfg.kind = DefenseKind::quantize;
    const Tensor q = defended_states(w, ids, 2, cfg).h;
    CHECK(max_abs_diff(q, clean) > 0.0);
    CHECK(max_abs_diff(q, clean) < 0.1 * frobenius_norm(clean));
    cfg.epsilon = -1.0;
    CHECK_THROWS_AS(defended_states(w, ids, 2, cfg), ConfigError);
    CHECK(parse_defense_kind("laplace_dp") == DefenseKind::laplace_dp);
    CHECK_THROWS_AS(parse_defense_kind("blur"), ConfigError);
}
