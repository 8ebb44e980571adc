#include <doctest.h>

#include <filesystem>
#include <random>

#include "isinv/blackbox/detector.hpp"
#include "isinv/blackbox/inverter.hpp"
#include "isinv/blackbox/replication.hpp"
#include "isinv/core/errors.hpp"
#include "oracles.hpp"

using namespace isinv;

namespace {

MicroLMConfig tiny_config(std::uint64_t seed) {
    MicroLMConfig c;
    c.vocab_size = 256;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 32;
    c.seed = seed;
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("isinv_test_" + name)).string();
}

Tensor shifted_gaussian(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
    Tensor t = oracle::random_matrix(n, d, seed);
    for (std::size_t i = 0; i < n; ++i) t.at(i, 0) += shift;
    return t;
}

/// Rows on a 2-D subspace of R^6 plus small noise; a width-2 bottleneck fits them.
Tensor low_rank(std::size_t n, std::uint64_t seed, double angle) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t = Tensor::matrix(n, 6);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = g(rng), b = g(rng);
        for (std::size_t j = 0; j < 6; ++j) {
            t.at(i, j) = a * std::cos(angle * (j + 1)) + b * std::sin(angle * (j + 2)) + 0.01 * g(rng);
        }
    }
    return t;
}

}  // namespace

TEST_CASE("percentile interpolates linearly") {
    CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
    CHECK(percentile({0, 10}, 25) == doctest::Approx(2.5));
    CHECK(percentile({4, 1, 3}, 100) == 4.0);
    CHECK_THROWS_AS(percentile({}, 50), ConfigError);
}

TEST_CASE("roc_auc counts pairwise wins with half credit for ties") {
    const std::vector<double> pos = {3, 4}, neg = {1, 3};
    CHECK(roc_auc(pos, neg) == doctest::Approx((1 + 0.5 + 1 + 1) / 4.0));
    const std::vector<double> none;
    CHECK_THROWS_AS(roc_auc(pos, none), ConfigError);
}

TEST_CASE("pooling averages token rows") {
    const Tensor h = Tensor::from_rows({{1, 2}, {3, 6}});
    const Tensor p = pool_states(h);
    CHECK(p.at(0, 0) == 2.0);
    CHECK(p.at(0, 1) == 4.0);
}

TEST_CASE("autoencoder training reduces reconstruction error") {
    AutoencoderConfig cfg;
    cfg.hidden = 16;
    cfg.bottleneck = 2;
    cfg.epochs = 60;
    cfg.seed = 3;
    const AutoencoderTraining t = train_autoencoder(low_rank(400, 1, 0.7), cfg);
    CHECK(t.final_mse < 0.5 * t.initial_mse);
    CHECK(t.epoch_loss.size() == 60);
}

TEST_CASE("ensemble detector labels in-family probes and rejects strangers") {
    AutoencoderConfig cfg;
    cfg.hidden = 16;
    cfg.bottleneck = 2;
    cfg.epochs = 60;
    EnsembleDetector det;
    for (int k = 0; k < 2; ++k) {
        cfg.seed = static_cast<std::uint64_t>(k);
        const double angle = k == 0 ? 0.7 : 2.1;
        const Autoencoder ae = train_autoencoder(low_rank(400, 10 + k, angle), cfg).model;
        det.add(k == 0 ? "alpha" : "beta", ae, EnsembleDetector::calibrate(ae, low_rank(100, 20 + k, angle), 99));
    }
    CHECK(detect_model_type(low_rank(50, 30, 0.7), det).label == "alpha");
    CHECK(detect_model_type(low_rank(50, 31, 2.1), det).label == "beta");
    CHECK(detect_model_type(shifted_gaussian(50, 6, 8.0, 32), det).label == kIndependent);
    CHECK_THROWS_AS(det.add("alpha", det.entries()[0].model, 1.0), ConfigError);

    const std::string path = temp_path("det.bin");
    save_detector(path, det);
    const EnsembleDetector back = load_detector(path);
    REQUIRE(back.entries().size() == 2);
    CHECK(back.entries()[1].label == "beta");
    CHECK(back.entries()[1].tau == det.entries()[1].tau);
    const Tensor probe = low_rank(20, 33, 2.1);
    CHECK(detect_model_type(probe, back).rmse == detect_model_type(probe, det).rmse);
    std::filesystem::remove(path);
}

TEST_CASE("replication moves a base model toward the victim's states") {
    const TransformerWeights base = init_weights(tiny_config(1));
    const TransformerWeights victim = interpolate_weights(base, init_weights(tiny_config(2)), 0.3);
    std::vector<ReplicationPair> pairs;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 30; ++i) {
        TokenSequence ids(6);
        for (int& t : ids) t = static_cast<int>(rng() % 256);
        Tensor h = forward_prefix(victim, embed_tokens(victim, ids), 1).h;
        round_to_float(h);
        pairs.push_back({ids, h});
    }
    ReplicationOptions opts;
    opts.layer = 1;
    opts.steps = 150;
    opts.lr = 3e-3;
    const ReplicationResult r = replicate_model(base, pairs, opts);
    CHECK(r.post_mse < 0.5 * r.pre_mse);
    CHECK(r.eval_mse.front() >= r.eval_mse[r.best_index]);
    CHECK(r.weights.config == base.config);
    // Layers above l are untouched.
    CHECK(max_abs_diff(r.weights.layers[1].wq, base.layers[1].wq) == 0.0);
}

TEST_CASE("interpolation endpoints and config checks") {
    const TransformerWeights a = init_weights(tiny_config(1)), b = init_weights(tiny_config(2));
    CHECK(interpolate_weights(a, b, 0.0).fingerprint() == a.fingerprint());
    const TransformerWeights end = interpolate_weights(a, b, 1.0);
    CHECK(max_abs_diff(end.layers[1].w_down, b.layers[1].w_down) == 0.0);
    CHECK(max_abs_diff(end.embed, b.embed) == 0.0);
    MicroLMConfig other = tiny_config(3);
    other.n_layers = 1;
    CHECK_THROWS_AS(interpolate_weights(a, init_weights(other), 0.5), ConfigError);
}

TEST_CASE("inverter memorizes a handful of pairs and decodes greedily") {
    const TransformerWeights w = init_weights(tiny_config(5));
    const Tokenizer tok;
    const std::vector<std::string> texts = {"abc", "hello", "xyz", "cab"};
    std::vector<InversionPair> pairs;
    for (const auto& t : texts) {
        const TokenSequence ids = tok.encode(t);
        pairs.push_back({forward_prefix(w, embed_tokens(w, ids), 1).h, ids});
    }
    InverterConfig cfg;
    cfg.d_in = 16;
    cfg.d_enc = 32;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.vocab_size = 256;
    cfg.seed = 2;
    InverterTrainOptions opts;
    opts.epochs = 150;
    opts.lr = 3e-3;
    opts.batch = 4;
    const InverterTraining t = train_inverter(pairs, cfg, opts);
    CHECK(t.epoch_loss.size() == 151);
    CHECK(t.epoch_loss.back() < 0.1 * t.epoch_loss.front());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        CHECK(invert_generate(pairs[i].h, t.model, tok, 16).text == texts[i]);
    }
    CHECK(invert_generate(pairs[0].h, t.model, tok, 2).ids.size() <= 2);

    const std::string path = temp_path("inv.bin");
    save_inverter(path, t.model);
    const InverterModel back = load_inverter(path);
    CHECK(back.config == t.model.config);
    CHECK(inverter_loss(back, pairs) == doctest::Approx(inverter_loss(t.model, pairs)).epsilon(1e-6));
    std::filesystem::remove(path);
}

TEST_CASE("inverter configuration checks") {
    InverterConfig cfg;
    cfg.use_projection = false;
    cfg.d_in = 64;
    cfg.d_enc = 128;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.d_enc = 64;
    CHECK_NOTHROW(cfg.validate());
    const InverterModel m = init_inverter(cfg);
    CHECK(m.proj_w.numel() == 0);
    CHECK(m.head.cols() == cfg.out_vocab());
}
