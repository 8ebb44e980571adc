#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "isinv/blackbox/detector.hpp"
#include "isinv/blackbox/inverter.hpp"
#include "isinv/blackbox/replication.hpp"
#include "isinv/core/errors.hpp"
#include "isinv/defenses/defenses.hpp"
#include "isinv/harness/config.hpp"
#include "isinv/harness/corpus_io.hpp"
#include "isinv/harness/experiment.hpp"
#include "isinv/harness/is_format.hpp"
#include "isinv/harness/split.hpp"
#include "isinv/lm/capture.hpp"
#include "isinv/lm/checkpoint.hpp"
#include "isinv/lm/synthetic_corpus.hpp"
#include "isinv/lm/training.hpp"

namespace {

using namespace isinv;

constexpr int kExitFatal = 2;

std::vector<std::string> read_texts(const std::string& path) {
    IngestResult in = ingest_corpus(path);
    if (in.skipped > 0) std::cerr << "skipped " << in.skipped << " malformed lines in " << path << "\n";
    return std::move(in.texts);
}

void print_training(const TrainResult& r) {
    std::printf("held-out loss %.4f -> %.4f over %zu steps\n", r.heldout_before, r.heldout_after,
                r.loss_history.size());
}

/// Options shared by the experiment-running subcommands: a TOML file plus one
/// flag per config key, applied in command-line order after the file.
struct ExperimentFlags {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "TOML experiment config")->check(CLI::ExistingFile);
        for (const std::string& key : config_keys()) {
            app->add_option_function<std::string>(
                "--" + key, [this, key](const std::string& v) { overrides.emplace_back(key, v); },
                "overrides " + key);
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_experiment_config(config_path);
        for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
        return cfg;
    }
};

int run_and_report(const ExperimentConfig& cfg) {
    const ExperimentReport report = run_experiment(cfg);
    write_report(report, cfg);
    for (const auto& s : report.summary) {
        std::printf("%s %s l=%zu n=%zu F1 %.2f +- %.2f EM %.2f BLEU %.2f success %.2f errors %zu\n", s.attack.c_str(),
                    s.defense.c_str(), s.layer, s.n, s.f1.mean, s.f1.sem, s.em.mean, s.bleu.mean,
                    100.0 * s.success_rate, s.errors);
    }
    std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return report.exit_code();
}

std::map<std::string, std::string> parse_labelled(const std::vector<std::string>& items) {
    std::map<std::string, std::string> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("expected label=path, got '" + item + "'");
        out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

Tensor pooled_states(const TransformerWeights& w, const Tokenizer& tok, std::span<const std::string> texts,
                     std::size_t layer) {
    std::vector<Tensor> states;
    for (const auto& c : capture_is(texts, layer, w, tok)) states.push_back(c.states.h);
    return pool_dataset(states);
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
    Tensor out = Tensor::matrix(end - begin, x.cols());
    for (std::size_t i = begin; i < end; ++i) {
        std::copy(x.row(i).begin(), x.row(i).end(), out.row(i - begin).begin());
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Internal-state inversion toolkit"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic JSONL corpus");
    std::string gen_style = "mixed", gen_out;
    std::size_t gen_count = 1000;
    std::uint64_t gen_seed = 0;
    gen->add_option("--style", gen_style, "medical, code or mixed");
    gen->add_option("--count", gen_count);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out)->required();

    // train-lm
    auto* train = app.add_subcommand("train-lm", "Train a tokenizer and micro-LM from scratch");
    std::string train_corpus, train_out;
    MicroLMConfig lm_cfg;
    TrainOptions train_opts;
    train->add_option("--corpus", train_corpus)->required()->check(CLI::ExistingFile);
    train->add_option("--out", train_out)->required();
    train->add_option("--vocab", lm_cfg.vocab_size);
    train->add_option("--d-model", lm_cfg.d_model);
    train->add_option("--layers", lm_cfg.n_layers);
    train->add_option("--heads", lm_cfg.n_heads);
    train->add_option("--qkv-bias", lm_cfg.qkv_bias);
    train->add_option("--max-seq-len", lm_cfg.max_seq_len);
    train->add_option("--embed-std", lm_cfg.embed_std);
    train->add_option("--steps", train_opts.steps);
    train->add_option("--lr", train_opts.lr);
    train->add_option("--batch", train_opts.batch);
    train->add_option("--seq-len", train_opts.seq_len);
    train->add_option("--weight-decay", train_opts.weight_decay);
    train->add_option("--seed", train_opts.seed);

    // finetune-lm
    auto* ft = app.add_subcommand("finetune-lm", "Continue training a checkpoint on another corpus");
    std::string ft_model, ft_corpus, ft_out;
    TrainOptions ft_opts;
    ft_opts.steps = 200;
    ft_opts.lr = 1e-3;
    ft->add_option("--model", ft_model)->required()->check(CLI::ExistingFile);
    ft->add_option("--corpus", ft_corpus)->required()->check(CLI::ExistingFile);
    ft->add_option("--out", ft_out)->required();
    ft->add_option("--steps", ft_opts.steps);
    ft->add_option("--lr", ft_opts.lr);
    ft->add_option("--batch", ft_opts.batch);
    ft->add_option("--seq-len", ft_opts.seq_len);
    ft->add_option("--seed", ft_opts.seed);

    // capture-is
    auto* cap = app.add_subcommand("capture-is", "Capture layer-l states of a corpus into an IS container");
    std::string cap_model, cap_corpus, cap_out;
    std::size_t cap_layer = 1;
    cap->add_option("--model", cap_model)->required()->check(CLI::ExistingFile);
    cap->add_option("--corpus", cap_corpus)->required()->check(CLI::ExistingFile);
    cap->add_option("--layer", cap_layer);
    cap->add_option("--out", cap_out)->required();

    // attack
    auto* atk = app.add_subcommand("attack", "Run an inversion attack over a dataset and write reports");
    std::string atk_kind;
    ExperimentFlags atk_flags;
    atk->add_option("kind", atk_kind, "ts, er, tbs, transfer or generate")
        ->required()
        ->check(CLI::IsMember({"ts", "er", "tbs", "transfer", "generate"}));
    atk_flags.attach(atk);

    // report
    auto* rep = app.add_subcommand("report", "Run the experiment described by a config and write reports");
    ExperimentFlags rep_flags;
    rep_flags.attach(rep);
    bool rep_print = false;
    rep->add_flag("--print-config", rep_print, "print the resolved config and exit");

    // identify
    auto* idf = app.add_subcommand("identify", "Train or query a model-type detector");
    std::vector<std::string> idf_bases;
    std::string idf_detector, idf_model, idf_corpus, idf_out;
    std::size_t idf_layer = 1;
    double idf_q = 99.0;
    AutoencoderConfig ae_cfg;
    idf->add_option("--base", idf_bases, "label=checkpoint, repeatable; trains a detector");
    idf->add_option("--detector", idf_detector, "detector file to query");
    idf->add_option("--model", idf_model, "model to identify");
    idf->add_option("--corpus", idf_corpus)->required()->check(CLI::ExistingFile);
    idf->add_option("--layer", idf_layer);
    idf->add_option("--out", idf_out, "where to save a trained detector");
    idf->add_option("--percentile", idf_q);
    idf->add_option("--epochs", ae_cfg.epochs);
    idf->add_option("--seed", ae_cfg.seed);

    // replicate
    auto* repl = app.add_subcommand("replicate", "Finetune a base model to match observed states");
    std::string repl_base, repl_pairs, repl_out;
    ReplicationOptions repl_opts;
    repl->add_option("--base", repl_base)->required()->check(CLI::ExistingFile);
    repl->add_option("--pairs", repl_pairs, "IS container whose records carry their texts")
        ->required()
        ->check(CLI::ExistingFile);
    repl->add_option("--out", repl_out)->required();
    repl->add_option("--layer", repl_opts.layer);
    repl->add_option("--steps", repl_opts.steps);
    repl->add_option("--lr", repl_opts.lr);
    repl->add_option("--batch", repl_opts.batch);
    repl->add_option("--seed", repl_opts.seed);

    // train-inverter
    auto* tinv = app.add_subcommand("train-inverter", "Train a generative inverter on captured states");
    std::string tinv_model, tinv_corpus, tinv_out;
    std::size_t tinv_layer = 1;
    InverterConfig inv_cfg;
    InverterTrainOptions inv_opts;
    bool tinv_identity = false;
    tinv->add_option("--model", tinv_model)->required()->check(CLI::ExistingFile);
    tinv->add_option("--corpus", tinv_corpus)->required()->check(CLI::ExistingFile);
    tinv->add_option("--out", tinv_out)->required();
    tinv->add_option("--layer", tinv_layer);
    tinv->add_option("--d-enc", inv_cfg.d_enc);
    tinv->add_option("--enc-layers", inv_cfg.enc_layers);
    tinv->add_option("--dec-layers", inv_cfg.dec_layers);
    tinv->add_flag("--identity-projection", tinv_identity);
    tinv->add_option("--epochs", inv_opts.epochs);
    tinv->add_option("--lr", inv_opts.lr);
    tinv->add_option("--batch", inv_opts.batch);
    tinv->add_option("--seed", inv_opts.seed);

    // defend
    auto* dfd = app.add_subcommand("defend", "Capture defended states into an IS container");
    std::string dfd_model, dfd_corpus, dfd_out, dfd_kind = "none";
    std::size_t dfd_layer = 1;
    DefenseConfig dfd_cfg;
    dfd->add_option("--model", dfd_model)->required()->check(CLI::ExistingFile);
    dfd->add_option("--corpus", dfd_corpus)->required()->check(CLI::ExistingFile);
    dfd->add_option("--out", dfd_out)->required();
    dfd->add_option("--layer", dfd_layer);
    dfd->add_option("--kind", dfd_kind);
    dfd->add_option("--p", dfd_cfg.p);
    dfd->add_option("--sigma", dfd_cfg.sigma);
    dfd->add_option("--epsilon", dfd_cfg.epsilon);
    dfd->add_option("--clip", dfd_cfg.clip);
    dfd->add_option("--bits", dfd_cfg.bits);
    dfd->add_option("--seed", dfd_cfg.seed);

    // serve
    auto* srv = app.add_subcommand("serve", "Run the server half of split inference");
    std::string srv_model;
    SplitServerOptions srv_opts;
    srv->add_option("--model", srv_model)->required()->check(CLI::ExistingFile);
    srv->add_option("--host", srv_opts.host);
    srv->add_option("--port", srv_opts.port);
    srv->add_option("--layer", srv_opts.l_split);
    srv->add_flag("--curious", srv_opts.curious);
    srv->add_option("--persist", srv_opts.persist_path);
    srv->add_option("--max-sessions", srv_opts.max_sessions);

    // client
    auto* cli = app.add_subcommand("client", "Run the client half of split inference over a corpus");
    std::string cli_model, cli_corpus, cli_host = "127.0.0.1";
    std::uint16_t cli_port = 0;
    std::size_t cli_layer = 1;
    cli->add_option("--model", cli_model)->required()->check(CLI::ExistingFile);
    cli->add_option("--corpus", cli_corpus)->required()->check(CLI::ExistingFile);
    cli->add_option("--host", cli_host);
    cli->add_option("--port", cli_port)->required();
    cli->add_option("--layer", cli_layer);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitFatal;
    }

    try {
        if (*gen) {
            export_corpus(gen_out, generate_corpus(parse_corpus_style(gen_style), gen_count, gen_seed));
            return 0;
        }
        if (*train) {
            const auto texts = read_texts(train_corpus);
            lm_cfg.seed = train_opts.seed;
            const Tokenizer tok = Tokenizer::train(texts, lm_cfg.vocab_size);
            const TrainResult r = train_lm(texts, tok, lm_cfg, train_opts);
            save_checkpoint(train_out, r.weights, tok);
            print_training(r);
            return 0;
        }
        if (*ft) {
            const Checkpoint base = load_checkpoint(ft_model);
            const TrainResult r = finetune_lm(base.weights, read_texts(ft_corpus), base.tokenizer, ft_opts);
            save_checkpoint(ft_out, r.weights, base.tokenizer);
            print_training(r);
            return 0;
        }
        if (*cap) {
            const Checkpoint ck = load_checkpoint(cap_model);
            const auto captured = capture_is(read_texts(cap_corpus), cap_layer, ck.weights, ck.tokenizer);
            export_is(cap_out, records_from_capture(captured));
            std::printf("captured %zu texts at layer %zu\n", captured.size(), cap_layer);
            return 0;
        }
        if (*atk) {
            ExperimentConfig cfg = atk_flags.resolve();
            cfg.attack = parse_attack_kind(atk_kind);
            return run_and_report(cfg);
        }
        if (*rep) {
            const ExperimentConfig cfg = rep_flags.resolve();
            if (rep_print) {
                std::cout << to_toml(cfg);
                return 0;
            }
            return run_and_report(cfg);
        }
        if (*idf) {
            const auto texts = read_texts(idf_corpus);
            if (!idf_bases.empty()) {
                if (idf_out.empty()) throw ConfigError("--out is required when training a detector");
                EnsembleDetector det;
                for (const auto& [label, path] : parse_labelled(idf_bases)) {
                    const Checkpoint ck = load_checkpoint(path);
                    const Tensor pooled = pooled_states(ck.weights, ck.tokenizer, texts, idf_layer);
                    const std::size_t n_train = std::max<std::size_t>(1, pooled.rows() * 4 / 5);
                    const Tensor train_rows = slice(pooled, 0, n_train);
                    const Tensor held = n_train < pooled.rows() ? slice(pooled, n_train, pooled.rows()) : train_rows;
                    Autoencoder ae = train_autoencoder(train_rows, ae_cfg).model;
                    const double tau = EnsembleDetector::calibrate(ae, held, idf_q);
                    std::printf("%s: tau %.6f\n", label.c_str(), tau);
                    det.add(label, std::move(ae), tau);
                }
                save_detector(idf_out, det);
                return 0;
            }
            if (idf_detector.empty() || idf_model.empty()) {
                throw ConfigError("identify needs --base to train, or --detector and --model to query");
            }
            const EnsembleDetector det = load_detector(idf_detector);
            const Checkpoint ck = load_checkpoint(idf_model);
            const Detection d = detect_model_type(pooled_states(ck.weights, ck.tokenizer, texts, idf_layer), det);
            for (std::size_t i = 0; i < d.rmse.size(); ++i) {
                std::printf("%s rmse %.6f tau %.6f\n", det.entries()[i].label.c_str(), d.rmse[i],
                            det.entries()[i].tau);
            }
            std::printf("label %s\n", d.label.c_str());
            return 0;
        }
        if (*repl) {
            const Checkpoint base = load_checkpoint(repl_base);
            std::vector<ReplicationPair> pairs;
            for (const auto& rec : decode_records(import_is(repl_pairs))) {
                if (rec.text.empty()) throw ConfigError("replication pairs need texts in the container");
                if (rec.frame.layer != repl_opts.layer) throw ConfigError("container layer differs from --layer");
                TokenSequence ids = base.tokenizer.encode(rec.text);
                if (ids.size() > rec.frame.h.rows()) ids.resize(rec.frame.h.rows());
                pairs.push_back({std::move(ids), rec.frame.h});
            }
            const ReplicationResult r = replicate_model(base.weights, pairs, repl_opts);
            save_checkpoint(repl_out, r.weights, base.tokenizer);
            std::printf("held-out state MSE %.6g -> %.6g\n", r.pre_mse, r.post_mse);
            return 0;
        }
        if (*tinv) {
            const Checkpoint ck = load_checkpoint(tinv_model);
            std::vector<InversionPair> pairs;
            for (auto& c : capture_is(read_texts(tinv_corpus), tinv_layer, ck.weights, ck.tokenizer)) {
                pairs.push_back({std::move(c.states.h), std::move(c.ids)});
            }
            inv_cfg.d_in = ck.weights.config.d_model;
            inv_cfg.vocab_size = ck.weights.config.vocab_size;
            inv_cfg.use_projection = !tinv_identity;
            if (tinv_identity) inv_cfg.d_enc = inv_cfg.d_in;
            inv_cfg.seed = inv_opts.seed;
            const InverterTraining r = train_inverter(pairs, inv_cfg, inv_opts);
            save_inverter(tinv_out, r.model);
            std::printf("loss %.4f -> %.4f\n", r.epoch_loss.front(), r.epoch_loss.back());
            return 0;
        }
        if (*dfd) {
            const Checkpoint ck = load_checkpoint(dfd_model);
            dfd_cfg.kind = parse_defense_kind(dfd_kind);
            std::vector<ISRecord> records;
            const auto texts = read_texts(dfd_corpus);
            for (std::size_t i = 0; i < texts.size(); ++i) {
                TokenSequence ids = ck.tokenizer.encode(texts[i]);
                if (ids.size() > ck.weights.config.max_seq_len) ids.resize(ck.weights.config.max_seq_len);
                DefenseConfig c = dfd_cfg;
                c.seed = dfd_cfg.seed + i;
                const InternalStates st = defended_states(ck.weights, ids, dfd_layer, c);
                records.push_back({ck.tokenizer.decode(ids), encode_frame(st.h, dfd_layer)});
            }
            export_is(dfd_out, records);
            return 0;
        }
        if (*srv) {
            const Checkpoint ck = load_checkpoint(srv_model);
            SplitServer server(ck.weights, srv_opts);
            std::printf("listening on %s:%u\n", srv_opts.host.c_str(), static_cast<unsigned>(server.port()));
            std::fflush(stdout);
            server.run();
            const ServerStats s = server.stats();
            std::printf("sessions %zu accepted %zu rejected %zu\n", s.sessions, s.frames_accepted,
                        s.frames_rejected);
            return 0;
        }
        if (*cli) {
            const Checkpoint ck = load_checkpoint(cli_model);
            const ClientSession s =
                split_client(cli_host, cli_port, read_texts(cli_corpus), ck.weights, ck.tokenizer, cli_layer);
            std::size_t rejected = 0;
            for (const auto& r : s.replies) {
                if (!r.accepted) {
                    ++rejected;
                    std::cerr << "frame rejected: " << r.error << "\n";
                }
            }
            std::printf("sent %zu frames, %zu rejected\n", s.sent.size(), rejected);
            return rejected == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFatal;
    }
    return 0;
}
