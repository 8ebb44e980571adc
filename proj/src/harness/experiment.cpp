#include "isinv/harness/experiment.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "isinv/attacks/attacks.hpp"
#include "isinv/blackbox/inverter.hpp"
#include "isinv/blackbox/replication.hpp"
#include "isinv/core/errors.hpp"
#include "isinv/defenses/defenses.hpp"
#include "isinv/harness/corpus_io.hpp"
#include "isinv/harness/is_format.hpp"
#include "isinv/lm/checkpoint.hpp"

namespace isinv {

bool ExperimentReport::has_errors() const {
    for (const auto& r : rows) {
        if (!r.error.empty()) return true;
    }
    return false;
}

int ExperimentReport::exit_code() const { return has_errors() ? 1 : 0; }

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string fmt_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

struct Sample {
    std::string id;
    std::string reference;
    TokenSequence ids;
    /// Observed states read from a container; empty when computed locally.
    std::optional<Tensor> observed;
};

struct Resources {
    Checkpoint victim;
    std::optional<Checkpoint> surrogate;
    std::optional<InverterModel> inverter;
};

std::vector<Sample> load_samples(const ExperimentConfig& cfg, const Resources& res, std::size_t& skipped) {
    const Tokenizer& tok = res.victim.tokenizer;
    const std::size_t max_len = res.victim.weights.config.max_seq_len;
    std::vector<std::string> texts;
    if (!cfg.dataset_path.empty()) {
        IngestResult in = ingest_corpus(cfg.dataset_path);
        skipped = in.skipped;
        texts = std::move(in.texts);
    }
    std::vector<DecodedRecord> frames;
    if (!cfg.is_path.empty()) {
        frames = decode_records(import_is(cfg.is_path));
        if (!texts.empty() && texts.size() != frames.size()) {
            throw ConfigError("dataset has " + std::to_string(texts.size()) + " texts but the IS container has " +
                              std::to_string(frames.size()) + " frames");
        }
        if (texts.empty()) {
            for (std::size_t i = 0; i < frames.size(); ++i) {
                if (frames[i].text.empty()) {
                    throw ConfigError("IS container frame " + std::to_string(i) +
                                      " carries no text; set experiment.dataset for references");
                }
                texts.push_back(frames[i].text);
            }
        }
    }
    std::size_t n = texts.size();
    if (cfg.max_samples > 0) n = std::min(n, cfg.max_samples);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.id = std::to_string(i);
        s.ids = tok.encode(texts[i]);
        if (s.ids.size() > max_len) s.ids.resize(max_len);
        s.reference = tok.decode(s.ids);
        if (!frames.empty()) {
            const ISFrame& f = frames[i].frame;
            if (f.layer != cfg.layer) {
                throw ConfigError("IS container frame " + std::to_string(i) + " is from layer " +
                                  std::to_string(f.layer) + ", expected " + std::to_string(cfg.layer));
            }
            s.observed = f.h;
        }
        out.push_back(std::move(s));
    }
    return out;
}

Resources load_resources(const ExperimentConfig& cfg) {
    Resources res{load_checkpoint(cfg.model_path), std::nullopt, std::nullopt};
    if (cfg.layer > res.victim.weights.config.n_layers) {
        throw ConfigError("experiment.layer " + std::to_string(cfg.layer) + " exceeds model depth " +
                          std::to_string(res.victim.weights.config.n_layers));
    }
    if (cfg.attack == AttackKind::transfer) {
        res.surrogate = load_checkpoint(cfg.surrogate_path);
        if (res.surrogate->weights.config.d_model != res.victim.weights.config.d_model) {
            throw ConfigError("surrogate width differs from the victim");
        }
    }
    if (cfg.attack == AttackKind::generate) {
        res.inverter = load_inverter(cfg.inverter_path);
        if (res.inverter->config.d_in != res.victim.weights.config.d_model) {
            throw ConfigError("inverter input width differs from the victim");
        }
    }
    return res;
}

InternalStates observe(const Sample& s, const TransformerWeights& w, std::size_t layer, const DefenseConfig& def) {
    InternalStates st;
    if (s.observed) {
        if (s.observed->rows() != s.ids.size()) {
            throw DimensionError("observed states have " + std::to_string(s.observed->rows()) + " rows for " +
                                 std::to_string(s.ids.size()) + " reference tokens");
        }
        st.h = *s.observed;
        st.layer = layer;
        st.model_fingerprint = w.fingerprint();
        switch (def.kind) {
            case DefenseKind::none:
                break;
            case DefenseKind::dropout:
                st = defend_dropout(st, def.p, def.seed);
                break;
            case DefenseKind::laplace_dp:
                st = defend_laplace_dp(st, def.epsilon, def.clip, def.seed);
                break;
            default:
                throw ConfigError(std::string(defense_kind_name(def.kind)) +
                                  " acts inside the model and cannot be applied to recorded states");
        }
    } else {
        st = defended_states(w, s.ids, layer, def);
    }
    round_to_float(st.h);
    return st;
}

void fill_from_inversion(ReportRow& row, const InversionResult& r) {
    row.candidate = r.inverted_text;
    row.exploded = r.trace.exploded;
    row.steps_run = r.trace.loss.size();
    if (!r.trace.loss.empty()) row.loss_final = r.best_loss();
    if (r.trace.aborted) row.error = "aborted: " + r.trace.abort_reason;
    const std::size_t n = r.trace.loss.size();
    const std::size_t stride = std::max<std::size_t>(1, (n + kTracePoints - 1) / kTracePoints);
    for (std::size_t i = 0; i < n; i += stride) row.loss_trace.emplace_back(i, r.trace.loss[i]);
    if (n > 0 && (n - 1) % stride != 0) row.loss_trace.emplace_back(n - 1, r.trace.loss[n - 1]);
}

ReportRow run_one(const ExperimentConfig& cfg, const Resources& res, const Sample& s, std::size_t index,
                  const DefenseConfig& def_base) {
    ReportRow row;
    row.sample_id = s.id;
    row.attack = attack_kind_name(cfg.attack);
    row.layer = cfg.layer;
    row.reference = s.reference;
    DefenseConfig def = def_base;
    def.seed = def_base.seed + cfg.seed + index;
    row.defense = defense_label(def);
    const Tokenizer& tok = res.victim.tokenizer;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const TransformerWeights quantized =
            def.kind == DefenseKind::quantize ? defend_quantize(res.victim.weights, def.bits) : TransformerWeights{};
        const TransformerWeights& deployed = def.kind == DefenseKind::quantize ? quantized : res.victim.weights;
        AttackConfig acfg = cfg.attack_cfg;
        acfg.seed = cfg.attack_cfg.seed + cfg.seed + index;
        switch (cfg.attack) {
            case AttackKind::none: {
                const RecoveredTokens rec = recover_tokens(embed_tokens(deployed, s.ids), deployed.embed);
                TokenSequence ids;
                for (int id : rec.ids) {
                    if (static_cast<std::size_t>(id) < tok.vocab_size()) ids.push_back(id);
                }
                row.candidate = tok.decode(ids);
                break;
            }
            case AttackKind::ts:
                fill_from_inversion(row, attack_ts(observe(s, res.victim.weights, cfg.layer, def), deployed, tok, acfg));
                break;
            case AttackKind::er:
                fill_from_inversion(row, attack_er(observe(s, res.victim.weights, cfg.layer, def), deployed, tok, acfg));
                break;
            case AttackKind::tbs:
                fill_from_inversion(row,
                                    attack_tbs(observe(s, res.victim.weights, cfg.layer, def), deployed, tok, acfg));
                break;
            case AttackKind::transfer:
                fill_from_inversion(row, attack_transferred(observe(s, res.victim.weights, cfg.layer, def),
                                                            res.surrogate->weights, tok, acfg));
                break;
            case AttackKind::generate: {
                const InternalStates st = observe(s, res.victim.weights, cfg.layer, def);
                row.candidate = invert_generate(st.h, *res.inverter, tok, cfg.max_out).text;
                break;
            }
        }
        row.scores = score_text(row.candidate, row.reference, tok, cfg.metrics);
    } catch (const std::exception& e) {
        row.error = e.what();
        row.scores = ScoreRow{};
    }
    if (cfg.record_wall_time) {
        row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return row;
}

}  // namespace

std::string defense_label(const DefenseConfig& cfg) {
    const std::string name = defense_kind_name(cfg.kind);
    switch (cfg.kind) {
        case DefenseKind::none:
            return name;
        case DefenseKind::dropout:
            return name + "(p=" + fmt_g(cfg.p) + ")";
        case DefenseKind::gaussian_embed:
            return name + "(sigma=" + fmt_g(cfg.sigma) + ")";
        case DefenseKind::laplace_dp:
            return name + "(epsilon=" + fmt_g(cfg.epsilon) + ";clip=" + fmt_g(cfg.clip) + ")";
        case DefenseKind::quantize:
            return name + "(bits=" + std::to_string(cfg.bits) + ")";
    }
    return name;
}

DefenseConfig with_sweep_value(DefenseConfig cfg, double value) {
    switch (cfg.kind) {
        case DefenseKind::none:
            throw ConfigError("defense.sweep needs a defense kind other than none");
        case DefenseKind::dropout:
            cfg.p = value;
            break;
        case DefenseKind::gaussian_embed:
            cfg.sigma = value;
            break;
        case DefenseKind::laplace_dp:
            cfg.epsilon = value;
            break;
        case DefenseKind::quantize:
            if (value != std::floor(value)) throw ConfigError("quantize sweep values must be integers");
            cfg.bits = static_cast<int>(value);
            break;
    }
    cfg.validate();
    return cfg;
}

std::vector<ConditionSummary> summarize(const std::vector<ReportRow>& rows) {
    std::vector<ConditionSummary> out;
    std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<const ReportRow*>> groups;
    std::vector<std::tuple<std::string, std::string, std::size_t>> order;
    for (const auto& r : rows) {
        auto key = std::make_tuple(r.attack, r.defense, r.layer);
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) order.push_back(key);
        it->second.push_back(&r);
    }
    for (const auto& key : order) {
        const auto& g = groups.at(key);
        ConditionSummary s;
        std::tie(s.attack, s.defense, s.layer) = key;
        s.n = g.size();
        std::vector<double> cs, bl, rg, em, f1;
        double succ = 0.0;
        for (const ReportRow* r : g) {
            if (!r->error.empty()) ++s.errors;
            cs.push_back(100.0 * r->scores.cs);
            bl.push_back(100.0 * r->scores.bleu);
            rg.push_back(100.0 * r->scores.rouge);
            em.push_back(100.0 * r->scores.em);
            f1.push_back(100.0 * r->scores.f1);
            succ += r->scores.success ? 1.0 : 0.0;
        }
        s.cs = mean_sem(cs);
        s.bleu = mean_sem(bl);
        s.rouge = mean_sem(rg);
        s.em = mean_sem(em);
        s.f1 = mean_sem(f1);
        s.success_rate = succ / static_cast<double>(g.size());
        out.push_back(std::move(s));
    }
    return out;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    cfg.check_paths();
    const Resources res = load_resources(cfg);
    ExperimentReport report;
    const std::vector<Sample> samples = load_samples(cfg, res, report.skipped_lines);

    std::vector<DefenseConfig> conditions;
    if (cfg.defense_sweep.empty()) {
        conditions.push_back(cfg.defense);
    } else {
        for (double v : cfg.defense_sweep) conditions.push_back(with_sweep_value(cfg.defense, v));
    }

    const std::size_t total = samples.size() * conditions.size();
    report.rows.resize(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < total; k = next++) {
            const std::size_t i = k / conditions.size();
            report.rows[k] = run_one(cfg, res, samples[i], i, conditions[k % conditions.size()]);
        }
    };
    const std::size_t n_workers = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(total, 1));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    report.summary = summarize(report.rows);
    return report;
}

std::string report_csv(const ExperimentReport& report) {
    std::string out = std::string(kReportColumns) + "\n";
    for (const auto& r : report.rows) {
        out += csv_field(r.sample_id) + "," + csv_field(r.attack) + "," + csv_field(r.defense) + "," +
               std::to_string(r.layer) + "," + fmt_fixed(100.0 * r.scores.cs) + "," +
               fmt_fixed(100.0 * r.scores.bleu) + "," + fmt_fixed(100.0 * r.scores.rouge) + "," +
               fmt_fixed(100.0 * r.scores.em) + "," + fmt_fixed(100.0 * r.scores.f1) + "," +
               fmt_fixed(r.wall_time) + "," + (r.loss_final ? fmt_full(*r.loss_final) : std::string()) + "," +
               (r.scores.success ? "1" : "0") + "," + csv_field(r.error) + "\n";
    }
    return out;
}

std::string report_json(const ExperimentReport& report, const ExperimentConfig& cfg) {
    using nlohmann::json;
    auto ms = [](const MeanSem& m) { return json{{"mean", m.mean}, {"sem", m.sem}}; };
    json rows = json::array();
    for (const auto& r : report.rows) {
        json trace = json::array();
        for (const auto& [step, loss] : r.loss_trace) trace.push_back({step, loss});
        rows.push_back({{"sample_id", r.sample_id},
                        {"attack", r.attack},
                        {"defense", r.defense},
                        {"layer", r.layer},
                        {"cs", 100.0 * r.scores.cs},
                        {"bleu", 100.0 * r.scores.bleu},
                        {"rouge", 100.0 * r.scores.rouge},
                        {"em", 100.0 * r.scores.em},
                        {"f1", 100.0 * r.scores.f1},
                        {"success", r.scores.success},
                        {"wall_time", r.wall_time},
                        {"loss_final", r.loss_final ? json(*r.loss_final) : json(nullptr)},
                        {"error", r.error},
                        {"candidate", r.candidate},
                        {"reference", r.reference},
                        {"exploded", r.exploded},
                        {"steps_run", r.steps_run},
                        {"loss_trace", trace}});
    }
    json summary = json::array();
    for (const auto& s : report.summary) {
        summary.push_back({{"attack", s.attack},
                           {"defense", s.defense},
                           {"layer", s.layer},
                           {"n", s.n},
                           {"errors", s.errors},
                           {"cs", ms(s.cs)},
                           {"bleu", ms(s.bleu)},
                           {"rouge", ms(s.rouge)},
                           {"em", ms(s.em)},
                           {"f1", ms(s.f1)},
                           {"success_rate", s.success_rate}});
    }
    json doc = {{"config", to_toml(cfg)},
                {"skipped_lines", report.skipped_lines},
                {"exit_code", report.exit_code()},
                {"summary", summary},
                {"rows", rows}};
    return doc.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

void write_report(const ExperimentReport& report, const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    auto put = [](const fs::path& p, const std::string& body) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << body;
        if (!out) throw IoError("cannot write '" + p.string() + "'");
    };
    put(fs::path(cfg.output_dir) / "report.csv", report_csv(report));
    put(fs::path(cfg.output_dir) / "report.json", report_json(report, cfg));
}

}  // namespace isinv
