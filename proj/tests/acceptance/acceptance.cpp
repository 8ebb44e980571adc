// Acceptance suite for the desk-scale reproduction. Prints one PASS/FAIL line
// per criterion and exits nonzero if any criterion fails.
//
// Usage: acceptance [work_dir] [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "isinv/attacks/attacks.hpp"
#include "isinv/blackbox/detector.hpp"
#include "isinv/blackbox/inverter.hpp"
#include "isinv/blackbox/replication.hpp"
#include "isinv/defenses/defenses.hpp"
#include "isinv/harness/corpus_io.hpp"
#include "isinv/harness/experiment.hpp"
#include "isinv/harness/split.hpp"
#include "isinv/lm/capture.hpp"
#include "isinv/lm/checkpoint.hpp"
#include "isinv/lm/synthetic_corpus.hpp"
#include "isinv/lm/training.hpp"
#include "isinv/metrics/metrics.hpp"

namespace fs = std::filesystem;
using namespace isinv;

namespace {

using Clock = std::chrono::steady_clock;

void log(const char* fmt, auto... args) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

InternalStates observe(const TransformerWeights& w, std::span<const int> ids, std::size_t layer) {
    InternalStates s = forward_prefix(w, embed_tokens(w, ids), layer);
    round_to_float(s.h);
    return s;
}

TrainResult train_family(const std::vector<std::string>& corpus, const Tokenizer& tok, std::uint64_t seed,
                         std::size_t steps) {
    MicroLMConfig cfg;
    cfg.seed = seed;
    TrainOptions opts;
    opts.steps = steps;
    opts.seed = seed;
    return train_lm(corpus, tok, cfg, opts);
}

/// The shared victim model and corpora, built once.
struct Fixture {
    fs::path work;
    std::vector<std::string> corpus;
    Tokenizer tok;
    TransformerWeights victim;
    std::vector<TokenSequence> eval_inputs;  // held-out texts cut to 8..16 tokens

    std::optional<InverterModel> inverter;
    std::vector<InversionPair> inv_train, inv_heldout, inv_ood;
    std::vector<TokenSequence> heldout_ids;
    std::size_t inv_layer = 4;

    explicit Fixture(fs::path dir) : work(std::move(dir)) {
        fs::create_directories(work);
        corpus = generate_corpus(CorpusStyle::mixed, 3000, 1);
        tok = Tokenizer::train(corpus, 512);
        const auto t0 = Clock::now();
        const TrainResult r = train_family(corpus, tok, 1, 600);
        victim = r.weights;
        log("victim LM: held-out loss %.3f -> %.3f (%.0f s)", r.heldout_before, r.heldout_after,
            std::chrono::duration<double>(Clock::now() - t0).count());
        std::size_t k = 0;
        for (const auto& t : generate_corpus(CorpusStyle::mixed, 400, 777)) {
            TokenSequence ids = tok.encode(t);
            if (ids.size() < 8) continue;
            ids.resize(std::min<std::size_t>(ids.size(), 8 + k++ % 9));
            eval_inputs.push_back(std::move(ids));
        }
    }

    std::vector<InversionPair> pairs_for(const std::vector<std::string>& texts, const TransformerWeights& w) const {
        std::vector<InversionPair> out;
        for (auto& c : capture_is(texts, inv_layer, w, tok)) out.push_back({std::move(c.states.h), std::move(c.ids)});
        return out;
    }

    const InverterModel& trained_inverter() {
        if (inverter) return *inverter;
        inv_train = pairs_for(generate_corpus(CorpusStyle::medical, 2000, 21), victim);
        const auto held_texts = generate_corpus(CorpusStyle::medical, 100, 22);
        inv_heldout = pairs_for(held_texts, victim);
        for (const auto& p : inv_heldout) heldout_ids.push_back(p.ids);
        inv_ood = pairs_for(generate_corpus(CorpusStyle::code, 100, 23), victim);
        InverterConfig cfg;
        cfg.d_in = victim.config.d_model;
        cfg.vocab_size = victim.config.vocab_size;
        cfg.seed = 5;
        InverterTrainOptions opts;
        opts.epochs = 8;
        opts.lr = 2e-3;
        opts.batch = 16;
        opts.seed = 5;
        const auto t0 = Clock::now();
        InverterTraining t = train_inverter(inv_train, cfg, opts);
        log("inverter: loss %.3f -> %.3f (%.0f s)", t.epoch_loss.front(), t.epoch_loss.back(),
            std::chrono::duration<double>(Clock::now() - t0).count());
        inverter = std::move(t.model);
        return *inverter;
    }

    /// Mean generative-inversion token F1 (percent) over states paired with true ids.
    double inversion_f1(std::span<const Tensor> states, std::span<const TokenSequence> ids) {
        const InverterModel& m = trained_inverter();
        std::vector<double> f;
        for (std::size_t i = 0; i < states.size(); ++i) {
            f.push_back(100.0 * token_f1(invert_generate(states[i], m, tok, 64).ids, ids[i]));
        }
        return mean_of(f);
    }
};

double ids_f1(const InversionResult& r, const TokenSequence& truth) { return 100.0 * token_f1(r.inverted_ids, truth); }

// 1. Gradient correctness through two transformer layers.
Outcome gradient_correctness(Fixture& fx) {
    const std::size_t layer = 2, probes = 20;
    const BasisSet basis = compute_basis(fx.victim.embed, BasisKind::unbiased);
    AttackConfig cfg;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const TokenSequence& ids = fx.eval_inputs[i];
        const InternalStates target = observe(fx.victim, ids, layer);
        for (int which = 0; which < 2; ++which) {
            Tensor x = Tensor::matrix(ids.size(), fx.victim.config.d_model);
            for (double& v : x.data) v = (which == 0 ? 0.5 : 0.3) * normal(rng);
            auto f = [&](const Tensor& t, Tensor* g) {
                return which == 0 ? er_objective(t, target, fx.victim, cfg, g)
                                  : tbs_objective(t, target, fx.victim, basis, cfg, g);
            };
            Tensor grad;
            f(x, &grad);
            for (std::size_t k = 0; k < probes; ++k) {
                const std::size_t c = rng() % x.numel();
                const double h = 1e-5;
                Tensor xp = x, xm = x;
                xp.data[c] += h;
                xm.data[c] -= h;
                const double num = (f(xp, nullptr) - f(xm, nullptr)) / (2.0 * h);
                const double denom = std::max({std::abs(num), std::abs(grad.data[c]), 1e-8});
                worst = std::max(worst, std::abs(num - grad.data[c]) / denom);
            }
        }
    }
    return {worst <= 1e-4, fmt("max rel err %.2e over 10 inputs x 20 coords x {ER, TBS} at l=2 (need <= 1e-4)", worst)};
}

// 2. ER at layer 1 recovers random short inputs exactly.
Outcome shallow_exact_inversion(Fixture& fx) {
    std::mt19937_64 rng(77);
    AttackConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = 50000;
    cfg.stop_loss = 1e-9;
    double em = 0.0;
    std::vector<double> f1;
    std::size_t max_steps = 0;
    for (int i = 0; i < 50; ++i) {
        TokenSequence ids(8 + rng() % 9);
        for (int& t : ids) t = static_cast<int>(rng() % fx.tok.vocab_size());
        const InversionResult r = attack_er(observe(fx.victim, ids, 1), fx.victim, fx.tok, cfg);
        em += exact_match(r.inverted_text, fx.tok.decode(ids));
        f1.push_back(ids_f1(r, ids));
        max_steps = std::max(max_steps, r.trace.loss.size());
    }
    const double em_pct = 100.0 * em / 50.0, f = mean_of(f1);
    return {em_pct >= 90.0 && f >= 95.0,
            fmt("ER l=1, 50 random inputs: EM %.1f%% (need >= 90), F1 %.2f (need >= 95), at most %zu steps", em_pct, f,
                max_steps)};
}

// 3. Depth contrast at layer 6: TBS far above TS.
Outcome depth_contrast(Fixture& fx) {
    AttackConfig tbs;
    tbs.steps = 5000;
    AttackConfig ts;
    ts.steps = 5000;
    std::vector<double> f_tbs, f_ts;
    for (std::size_t i = 0; i < 25; ++i) {
        const TokenSequence& ids = fx.eval_inputs[i];
        const InternalStates target = observe(fx.victim, ids, 6);
        f_tbs.push_back(ids_f1(attack_tbs(target, fx.victim, fx.tok, tbs), ids));
        f_ts.push_back(ids_f1(attack_ts(target, fx.victim, fx.tok, ts), ids));
    }
    const double a = mean_of(f_tbs), b = mean_of(f_ts);
    return {a - b >= 30.0 && b <= 10.0,
            fmt("l=6, 25 inputs: TBS F1 %.2f, TS F1 %.2f, gap %.2f (need gap >= 30, TS <= 10)", a, b, a - b)};
}

// 4. ER gradients dwarf TBS gradients at depth.
Outcome gradient_explosion(Fixture& fx) {
    AttackConfig cfg;
    cfg.steps = 100;
    std::vector<double> g_er, g_tbs;
    for (std::size_t i = 0; i < 10; ++i) {
        const InternalStates target = observe(fx.victim, fx.eval_inputs[i], 6);
        const auto er = attack_er(target, fx.victim, fx.tok, cfg).trace.grad_norm;
        const auto tb = attack_tbs(target, fx.victim, fx.tok, cfg).trace.grad_norm;
        g_er.insert(g_er.end(), er.begin(), er.end());
        g_tbs.insert(g_tbs.end(), tb.begin(), tb.end());
    }
    const double a = median_of(g_er), b = median_of(g_tbs);
    return {a >= 10.0 * b, fmt("l=6, 10 inputs x 100 steps: median |grad| ER %.3g, TBS %.3g, ratio %.1f (need >= 10)",
                               a, b, a / b)};
}

// 5. Decoding and basis oracles.
Outcome oracles(Fixture& fx) {
    const Tensor& E = fx.victim.embed;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t agree = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor w_hat = Tensor::matrix(8, E.cols());
        for (double& v : w_hat.data) v = normal(rng);
        const TokenSequence got = recover_tokens(w_hat, E).ids;
        for (std::size_t r = 0; r < w_hat.rows(); ++r) {
            double best = -2.0;
            int arg = 0;
            for (std::size_t t = 0; t < E.rows(); ++t) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t c = 0; c < E.cols(); ++c) {
                    dot += w_hat.at(r, c) * E.at(t, c);
                    na += w_hat.at(r, c) * w_hat.at(r, c);
                    nb += E.at(t, c) * E.at(t, c);
                }
                const double cs = dot / std::sqrt(na * nb);
                if (cs > best) {
                    best = cs;
                    arg = static_cast<int>(t);
                }
            }
            agree += got[r] == arg;
            ++total;
        }
    }
    double ortho = 0.0;
    double max_proj[2] = {0.0, 0.0};
    for (BasisKind k : {BasisKind::singular, BasisKind::unbiased}) {
        const BasisSet b = compute_basis(E, k);
        const auto B = as_matrix(b.B);
        ortho = std::max(ortho, (B * B.transpose() - RowMatrix::Identity(B.rows(), B.rows())).cwiseAbs().maxCoeff());
        max_proj[k == BasisKind::singular ? 0 : 1] = (as_matrix(E) * B.transpose()).cwiseAbs().maxCoeff();
    }
    const bool pass = agree == total && ortho <= 1e-6 && max_proj[0] > max_proj[1];
    return {pass, fmt("recover_tokens agreement %zu/%zu; |BB^T - I|max %.1e (need <= 1e-6); max |proj| singular %.3f > "
                      "unbiased %.3f",
                      agree, total, ortho, max_proj[0], max_proj[1])};
}

// 6. Model-type identification across three families with finetuned variants.
Outcome model_identification(Fixture& fx) {
    const std::size_t layer = 2;
    const auto fit_texts = generate_corpus(CorpusStyle::mixed, 800, 31);
    const auto probe_texts = generate_corpus(CorpusStyle::mixed, 200, 32);
    const auto med = generate_corpus(CorpusStyle::medical, 400, 33);
    const auto code = generate_corpus(CorpusStyle::code, 400, 34);
    auto pooled = [&](const TransformerWeights& w, std::span<const std::string> texts) {
        std::vector<Tensor> states;
        for (const auto& c : capture_is(texts, layer, w, fx.tok)) states.push_back(c.states.h);
        return pool_dataset(states);
    };
    auto rows = [](const Tensor& x, std::size_t b, std::size_t e) {
        Tensor out = Tensor::matrix(e - b, x.cols());
        for (std::size_t i = b; i < e; ++i) std::copy(x.row(i).begin(), x.row(i).end(), out.row(i - b).begin());
        return out;
    };

    struct Member {
        std::size_t family;
        bool variant;
        TransformerWeights w;
    };
    std::vector<Member> members;
    EnsembleDetector det;
    const std::uint64_t seeds[] = {11, 12, 13};
    for (std::size_t f = 0; f < 3; ++f) {
        const TransformerWeights base = train_family(fx.corpus, fx.tok, seeds[f], 400).weights;
        TrainOptions ft;
        ft.steps = 100;
        ft.lr = 1e-3;
        ft.seed = seeds[f] + 100;
        members.push_back({f, false, base});
        members.push_back({f, true, finetune_lm(base, med, fx.tok, ft).weights});
        members.push_back({f, true, finetune_lm(base, code, fx.tok, ft).weights});
        const Tensor data = pooled(base, fit_texts);
        AutoencoderConfig ae_cfg;
        ae_cfg.epochs = 40;
        ae_cfg.seed = seeds[f];
        const Autoencoder ae = train_autoencoder(rows(data, 0, 600), ae_cfg).model;
        det.add("family" + std::to_string(f), ae, EnsembleDetector::calibrate(ae, rows(data, 600, 800), 99.0));
    }

    std::vector<double> pos, neg;
    std::size_t correct = 0, decisions = 0;
    for (const Member& m : members) {
        const Tensor probe = pooled(m.w, probe_texts);
        for (std::size_t k = 0; k < 3; ++k) {
            const auto r = det.entries()[k].model.row_rmse(probe);
            (k == m.family ? neg : pos).insert((k == m.family ? neg : pos).end(), r.begin(), r.end());
        }
        if (!m.variant) continue;
        for (std::size_t b = 0; b < 5; ++b) {
            const Detection d = detect_model_type(rows(probe, 40 * b, 40 * (b + 1)), det);
            correct += d.label == "family" + std::to_string(m.family);
            ++decisions;
        }
    }
    const double auc = roc_auc(pos, neg);
    const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(decisions);
    return {auc >= 0.95 && acc >= 90.0,
            fmt("3 families x (base + 2 finetunes): AUC %.4f (need >= 0.95), variant labeling %.1f%% of %zu probes "
                "(need >= 90)",
                auc, acc, decisions)};
}

// 7. Replication beats attacking the raw base model.
Outcome replication_advantage(Fixture& fx) {
    const std::size_t layer = 2;
    TrainOptions ft;
    ft.steps = 300;
    ft.lr = 1e-3;
    ft.seed = 70;
    const TransformerWeights victim =
        finetune_lm(fx.victim, generate_corpus(CorpusStyle::medical, 1000, 71), fx.tok, ft).weights;
    std::vector<ReplicationPair> pairs;
    for (auto& c : capture_is(generate_corpus(CorpusStyle::mixed, 400, 72), layer, victim, fx.tok)) {
        pairs.push_back({std::move(c.ids), std::move(c.states.h)});
    }
    ReplicationOptions ro;
    ro.layer = layer;
    ro.steps = 400;
    ro.lr = 1e-3;
    ro.seed = 73;
    const ReplicationResult rep = replicate_model(fx.victim, pairs, ro);
    log("replication: held-out state MSE %.4g -> %.4g", rep.pre_mse, rep.post_mse);

    AttackConfig cfg;
    cfg.steps = 3000;
    cfg.lr = 1e-3;
    std::vector<double> f_rep, f_raw;
    std::size_t k = 0;
    for (const auto& t : generate_corpus(CorpusStyle::medical, 200, 74)) {
        TokenSequence ids = fx.tok.encode(t);
        if (ids.size() < 8) continue;
        ids.resize(std::min<std::size_t>(ids.size(), 8 + k % 9));
        const InternalStates target = observe(victim, ids, layer);
        f_rep.push_back(ids_f1(attack_transferred(target, rep.weights, fx.tok, cfg), ids));
        f_raw.push_back(ids_f1(attack_transferred(target, fx.victim, fx.tok, cfg), ids));
        if (++k == 25) break;
    }
    const double a = mean_of(f_rep), b = mean_of(f_raw);
    return {a > b, fmt("finetuned victim, l=2, 25 inputs: replicated-TBS F1 %.2f vs raw-base transfer F1 %.2f", a, b)};
}

// 8. Generative inversion in and out of distribution.
Outcome generative_inversion(Fixture& fx) {
    fx.trained_inverter();
    auto f1_of = [&](const std::vector<InversionPair>& pairs, std::size_t n) {
        std::vector<Tensor> h;
        std::vector<TokenSequence> ids;
        for (std::size_t i = 0; i < std::min(n, pairs.size()); ++i) {
            h.push_back(pairs[i].h);
            ids.push_back(pairs[i].ids);
        }
        return fx.inversion_f1(h, ids);
    };
    const double train = f1_of(fx.inv_train, 100), held = f1_of(fx.inv_heldout, 100), ood = f1_of(fx.inv_ood, 100);
    return {held >= 60.0 && train >= 80.0 && ood < held,
            fmt("l=4 inverter on 2000 medical pairs: held-out F1 %.2f (need >= 60), train F1 %.2f (need >= 80), OOD "
                "code F1 %.2f (need < held-out)",
                held, train, ood)};
}

// 9. Defense sanity checks.
Outcome defense_sanity(Fixture& fx) {
    const TokenSequence& ids0 = fx.eval_inputs[0];
    const InternalStates clean = observe(fx.victim, ids0, 4);
    const bool dropout_identity = max_abs_diff(defend_dropout(clean, 0.0, 1).h, clean.h) == 0.0;

    InternalStates zero;
    zero.h = Tensor::matrix(1000, 200);
    double worst_scale = 0.0;
    for (double eps : {1e6, 1e4, 1e2}) {
        const double clip = 200.0, b = 2.0 * clip / eps;
        const Tensor n = defend_laplace_dp(zero, eps, clip, 9).h;
        double mad = 0.0;
        for (double v : n.data) mad += std::abs(v);
        mad /= static_cast<double>(n.numel());
        worst_scale = std::max(worst_scale, std::abs(mad / b - 1.0));
    }

    fx.trained_inverter();
    std::vector<Tensor> plain, quant;
    const TransformerWeights q = defend_quantize(fx.victim, 8);
    for (const auto& ids : fx.heldout_ids) {
        plain.push_back(observe(fx.victim, ids, fx.inv_layer).h);
        quant.push_back(observe(q, ids, fx.inv_layer).h);
    }
    const double f_plain = fx.inversion_f1(plain, fx.heldout_ids);
    const double f_quant = fx.inversion_f1(quant, fx.heldout_ids);

    std::vector<double> f_eps;
    for (double eps : {1e6, 1e4, 1e2}) {
        std::vector<Tensor> noisy;
        for (std::size_t i = 0; i < fx.heldout_ids.size(); ++i) {
            InternalStates s;
            s.h = plain[i];
            Tensor h = defend_laplace_dp(s, eps, 200.0, 1000 + i).h;
            round_to_float(h);
            noisy.push_back(std::move(h));
        }
        f_eps.push_back(fx.inversion_f1(noisy, fx.heldout_ids));
    }
    const bool monotone = f_eps[1] <= f_eps[0] + 1.0 && f_eps[2] <= f_eps[1] + 1.0;
    const bool pass = dropout_identity && worst_scale <= 0.03 && std::abs(f_quant - f_plain) <= 2.0 && monotone;
    return {pass, fmt("dropout p=0 identity %s; Laplace scale error %.2f%% (need <= 3%%); 8-bit F1 %.2f vs %.2f (need "
                      "|diff| <= 2); F1 over eps 1e6/1e4/1e2: %.2f/%.2f/%.2f (need non-increasing, 1 pt slack)",
                      dropout_identity ? "yes" : "no", 100.0 * worst_scale, f_quant, f_plain, f_eps[0], f_eps[1],
                      f_eps[2])};
}

// 10. Frames persisted by a curious server attack identically to offline capture.
Outcome wire_transparency(Fixture& fx) {
    const fs::path dir = fx.work / "wire";
    fs::create_directories(dir);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < 5; ++i) texts.push_back(fx.tok.decode(fx.eval_inputs[i]));
    save_checkpoint((dir / "victim.bin").string(), fx.victim, fx.tok);
    export_corpus((dir / "texts.jsonl").string(), texts);

    SplitServerOptions so;
    so.l_split = 2;
    so.curious = true;
    so.persist_path = (dir / "persisted.isc").string();
    so.max_sessions = 1;
    SplitServer server(fx.victim, so);
    std::thread th([&] { server.run(); });
    const ClientSession session = split_client("127.0.0.1", server.port(), texts, fx.victim, fx.tok, 2);
    th.join();
    std::size_t accepted = 0;
    for (const auto& r : session.replies) accepted += r.accepted;

    ExperimentConfig cfg;
    cfg.model_path = (dir / "victim.bin").string();
    cfg.dataset_path = (dir / "texts.jsonl").string();
    cfg.layer = 2;
    cfg.attack = AttackKind::tbs;
    cfg.attack_cfg.steps = 300;
    cfg.attack_cfg.seed = 4;
    cfg.output_dir = (dir / "offline").string();
    const ExperimentReport offline = run_experiment(cfg);
    cfg.is_path = so.persist_path;
    cfg.output_dir = (dir / "wire").string();
    const ExperimentReport wire = run_experiment(cfg);
    const bool same = report_csv(offline) == report_csv(wire);
    const bool clean = !offline.has_errors() && !wire.has_errors() && offline.rows.size() == texts.size();
    return {same && clean && accepted == texts.size(),
            fmt("%zu/%zu frames accepted; %zu report rows, offline and wire-persisted reports %s", accepted,
                texts.size(), offline.rows.size(), same ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "isinv_acceptance";
    std::set<int> only;
    for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));

    const std::vector<std::pair<const char*, std::function<Outcome(Fixture&)>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"shallow exact inversion", shallow_exact_inversion},
        {"depth contrast", depth_contrast},
        {"gradient explosion trend", gradient_explosion},
        {"oracles", oracles},
        {"model-type identification", model_identification},
        {"replication advantage", replication_advantage},
        {"generative inversion", generative_inversion},
        {"defense sanity", defense_sanity},
        {"wire transparency", wire_transparency},
    };

    Fixture fx(work);
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second(fx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s (%.0f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                    dt);
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
