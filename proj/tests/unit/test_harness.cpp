#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>

#include "isinv/core/errors.hpp"
#include "isinv/harness/config.hpp"
#include "isinv/harness/corpus_io.hpp"
#include "isinv/harness/experiment.hpp"
#include "isinv/harness/is_format.hpp"
#include "isinv/harness/split.hpp"
#include "isinv/lm/checkpoint.hpp"
#include "oracles.hpp"

using namespace isinv;
namespace fs = std::filesystem;

namespace {

MicroLMConfig tiny_config() {
    MicroLMConfig c;
    c.vocab_size = 256;
    c.d_model = 16;
    c.n_layers = 3;
    c.n_heads = 2;
    c.max_seq_len = 32;
    c.seed = 8;
    return c;
}

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("isinv_harness_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string path(const std::string& f) const { return (dir / f).string(); }
    void write(const std::string& f, const std::string& body) const { std::ofstream(dir / f, std::ios::binary) << body; }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ExperimentConfig experiment_in(const Workspace& ws, const std::vector<std::string>& texts) {
    save_checkpoint(ws.path("model.bin"), init_weights(tiny_config()), Tokenizer{});
    export_corpus(ws.path("data.jsonl"), texts);
    ExperimentConfig cfg;
    cfg.model_path = ws.path("model.bin");
    cfg.dataset_path = ws.path("data.jsonl");
    cfg.output_dir = ws.path("out");
    cfg.layer = 1;
    return cfg;
}

}  // namespace

TEST_CASE("frames round-trip bit-exactly in both precisions") {
    Tensor h = oracle::random_matrix(5, 16, 3);
    const ISFrame f64 = decode_frame(encode_frame(h, 4, FrameDtype::f64));
    CHECK(f64.layer == 4);
    CHECK(max_abs_diff(f64.h, h) == 0.0);
    const ISFrame f32 = decode_frame(encode_frame(h, 4));
    round_to_float(h);
    CHECK(max_abs_diff(f32.h, h) == 0.0);
    CHECK(encode_frame(f32.h, 4) == encode_frame(h, 4));
}

TEST_CASE("frame header layout and corruption detection") {
    const Tensor h = oracle::random_matrix(2, 3, 1);
    const Bytes b = encode_frame(h, 7);
    REQUIRE(b.size() == 4 + 2 + 2 + 4 + 4 + 1 + 2 * 3 * 4 + 4);
    CHECK(std::string(b.begin(), b.begin() + 4) == "ISF1");
    CHECK(b[6] == 7);
    CHECK(b[8] == 2);
    CHECK(b[12] == 3);

    Bytes flipped = b;
    flipped[20] ^= 0x01;
    CHECK_THROWS_WITH_AS(decode_frame(flipped), doctest::Contains("checksum"), FormatError);
    Bytes magic = b;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_frame(magic), FormatError);
    Bytes version = b;
    version[4] = 9;
    CHECK_THROWS_AS(decode_frame(version), FormatError);
    const Bytes short_b(b.begin(), b.end() - 5);
    CHECK_THROWS_AS(decode_frame(short_b), FormatError);
}

TEST_CASE("containers round-trip and name the failing frame") {
    Workspace ws("container");
    std::vector<ISRecord> recs;
    for (int i = 0; i < 4; ++i) {
        recs.push_back({"text " + std::to_string(i), encode_frame(oracle::random_matrix(3, 4, i), 2)});
    }
    export_is(ws.path("a.isc"), recs);
    export_is(ws.path("b.isc"), import_is(ws.path("a.isc")));
    CHECK(slurp(ws.path("a.isc")) == slurp(ws.path("b.isc")));

    const Bytes all = encode_container(recs);
    const std::size_t per = 4 + 6 + 4 + recs[0].frame.size();
    const Bytes cut(all.begin(), all.begin() + static_cast<long>(10 + 2 * per + per / 2));
    CHECK_THROWS_WITH_AS(decode_container(cut), doctest::Contains("frame 2"), FormatError);

    Bytes corrupt = all;
    corrupt[10 + per + 4 + 6 + 4 + 20] ^= 0x40;
    CHECK_THROWS_WITH_AS(decode_records(decode_container(corrupt)), doctest::Contains("frame 1"), FormatError);
}

TEST_CASE("corpus ingestion counts malformed lines") {
    Workspace ws("ingest");
    ws.write("empty.jsonl", "");
    CHECK(ingest_corpus(ws.path("empty.jsonl")).texts.empty());
    ws.write("mixed.jsonl", "{\"text\": \"a\"}\n{\"text\": 3}\n\n{\"text\": \"b\"}\n{\"text\": \"c\", \"x\": 1}\n");
    const IngestResult r = ingest_corpus(ws.path("mixed.jsonl"));
    CHECK(r.texts == std::vector<std::string>{"a", "b", "c"});
    CHECK(r.skipped == 1);
    CHECK_THROWS_AS(ingest_corpus(ws.path("missing.jsonl")), IoError);

    const std::vector<std::string> texts = {"line one", "quote \" and\nnewline", "", "unicode é"};
    export_corpus(ws.path("rt.jsonl"), texts);
    CHECK(ingest_corpus(ws.path("rt.jsonl")).texts == texts);
}

TEST_CASE("TOML config parsing, overrides and canonical rendering") {
    const ExperimentConfig cfg = parse_experiment_config(R"(
[model]
path = "m.bin"
[experiment]
layer = 4
dataset = "d.jsonl"
workers = 2
[attack]
kind = "er"
lr = 1e-3
steps = 100
[defense]
kind = "laplace_dp"
sweep = [1e6, 1e4, 100]
[metrics]
tau_s = 0.8
)");
    CHECK(cfg.layer == 4);
    CHECK(cfg.attack == AttackKind::er);
    CHECK(cfg.attack_cfg.lr == 1e-3);
    CHECK(cfg.defense.kind == DefenseKind::laplace_dp);
    CHECK(cfg.defense_sweep == std::vector<double>{1e6, 1e4, 100});
    CHECK(cfg.metrics.tau_s == 0.8);
    const std::string text = to_toml(cfg);
    CHECK(to_toml(parse_experiment_config(text)) == text);

    ExperimentConfig over = cfg;
    set_config_value(over, "attack.steps", "7");
    CHECK(over.attack_cfg.steps == 7);
    CHECK_THROWS_AS(set_config_value(over, "attack.nope", "1"), ConfigError);
    CHECK_THROWS_AS(set_config_value(over, "experiment.layer", "two"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[attack]\nsteps = \n"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[attack]\nbogus = 1\n"), ConfigError);
    CHECK(config_keys().size() > 30);
}

TEST_CASE("config validation and path checks") {
    ExperimentConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.model_path = "/nonexistent/model.bin";
    cfg.dataset_path = "/nonexistent/data.jsonl";
    CHECK_NOTHROW(cfg.validate());
    CHECK_THROWS_WITH_AS(cfg.check_paths(), doctest::Contains("model.path"), ConfigError);
    cfg.attack = AttackKind::transfer;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("experiment rejects a layer beyond model depth") {
    Workspace ws("depth");
    ExperimentConfig cfg = experiment_in(ws, {"abc"});
    cfg.layer = 4;
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("identity path decodes every sample exactly") {
    Workspace ws("identity");
    ExperimentConfig cfg = experiment_in(ws, {"the patient", "def f(x):", "a"});
    cfg.attack = AttackKind::none;
    const ExperimentReport r = run_experiment(cfg);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
        CHECK(row.scores.em == 1.0);
        CHECK(row.error.empty());
        CHECK_FALSE(row.loss_final.has_value());
    }
    CHECK(r.exit_code() == 0);
}

TEST_CASE("reports are byte-identical across runs and worker counts") {
    Workspace ws("determinism");
    ExperimentConfig cfg = experiment_in(ws, {"abc", "hello there", "xyz", "q"});
    cfg.attack = AttackKind::er;
    cfg.attack_cfg.steps = 40;
    cfg.attack_cfg.lr = 1e-2;
    cfg.attack_cfg.lambda = 0.1;
    cfg.attack_cfg.dm_batch = 2;
    const ExperimentReport a = run_experiment(cfg);
    cfg.workers = 3;
    const ExperimentReport b = run_experiment(cfg);
    CHECK(report_csv(a) == report_csv(b));
    CHECK(report_json(a, cfg) == report_json(b, cfg));
    CHECK(report_csv(a).rfind(std::string(kReportColumns) + "\n", 0) == 0);

    write_report(a, cfg);
    CHECK(slurp(ws.path("out/report.csv")) == report_csv(a));
    const auto doc = nlohmann::json::parse(slurp(ws.path("out/report.json")));
    double sum = 0.0;
    for (const auto& row : doc.at("rows")) sum += row.at("f1").get<double>();
    CHECK(std::abs(doc.at("summary")[0].at("f1").at("mean").get<double>() - sum / 4.0) <= 1e-9);
    CHECK(doc.at("rows")[0].at("loss_trace").size() == 40);
}

TEST_CASE("a defense sweep emits one row per sample and value") {
    Workspace ws("sweep");
    ExperimentConfig cfg = experiment_in(ws, {"one", "two"});
    cfg.attack = AttackKind::ts;
    cfg.attack_cfg.steps = 3;
    cfg.defense.kind = DefenseKind::laplace_dp;
    cfg.defense_sweep = {1e6, 1e4, 1e2};
    const ExperimentReport r = run_experiment(cfg);
    REQUIRE(r.rows.size() == 6);
    CHECK(r.rows[0].sample_id == "0");
    CHECK(r.rows[2].sample_id == "0");
    CHECK(r.rows[3].sample_id == "1");
    CHECK(r.rows[1].defense == "laplace_dp(epsilon=10000;clip=200)");
    CHECK(r.summary.size() == 3);
    CHECK(r.summary[0].n == 2);
}

TEST_CASE("per-sample failures become annotated rows") {
    Workspace ws("partial");
    ExperimentConfig cfg = experiment_in(ws, {"ok", "fine"});
    cfg.attack = AttackKind::er;
    cfg.attack_cfg.steps = 2;
    cfg.layer = 1;
    std::vector<ISRecord> recs = {{"ok", encode_frame(Tensor::matrix(2, 16), 1)},
                                  {"fine", encode_frame(Tensor::matrix(1, 16), 1)}};
    export_is(ws.path("bad.isc"), recs);
    cfg.is_path = ws.path("bad.isc");
    const ExperimentReport r = run_experiment(cfg);
    CHECK(r.rows[0].error.empty());
    CHECK_FALSE(r.rows[1].error.empty());
    CHECK(r.exit_code() == 1);
    CHECK(report_csv(r).find("observed states have 1 rows") != std::string::npos);
}

TEST_CASE("split inference: loopback transparency, NACK on corruption, version check") {
    Workspace ws("split");
    const TransformerWeights w = init_weights(tiny_config());
    const Tokenizer tok;
    SplitServerOptions opts;
    opts.l_split = 2;
    opts.curious = true;
    opts.persist_path = ws.path("persisted.isc");
    opts.max_sessions = 3;
    SplitServer server(w, opts);
    std::thread th([&] { server.run(); });

    const std::vector<std::string> texts = {"hello split world"};
    const ClientSession s = split_client("127.0.0.1", server.port(), texts, w, tok, 2);
    REQUIRE(s.replies.size() == 1);
    CHECK(s.replies[0].accepted);
    const auto captured = capture_is(texts, 2, w, tok);
    const Tensor full = forward_from(w, captured[0].states.h, 2, 3);
    ad::Tape tape;
    const BoundModel bound = bind(tape, w);
    const Tensor logits = lm_logits(bound, tape.constant(full)).value();
    const auto last = logits.row(logits.rows() - 1);
    CHECK(s.replies[0].next_token == std::max_element(last.begin(), last.end()) - last.begin());

    {
        SplitClient c("127.0.0.1", server.port());
        c.handshake(2, 16);
        Bytes bad = encode_frame(captured[0].states.h, 2);
        bad[30] ^= 0x10;
        const FrameReply r = c.send_frame(bad);
        CHECK_FALSE(r.accepted);
        CHECK(r.error.find("checksum") != std::string::npos);
        c.close();
    }
    {
        SplitClient c("127.0.0.1", server.port());
        CHECK_THROWS_AS(c.handshake(2, 16, kProtocolVersion + 1), IoError);
    }
    th.join();

    const auto persisted = server.persisted();
    REQUIRE(persisted.size() == 1);
    CHECK(persisted[0].frame == s.sent[0]);
    CHECK(max_abs_diff(decode_frame(persisted[0].frame).h, captured[0].states.h) == 0.0);
    const auto on_disk = import_is(ws.path("persisted.isc"));
    REQUIRE(on_disk.size() == 1);
    CHECK(on_disk[0].frame == s.sent[0]);
    const ServerStats st = server.stats();
    CHECK(st.frames_accepted == 1);
    CHECK(st.frames_rejected == 1);
    CHECK(st.handshakes_rejected == 1);
}

TEST_CASE("attacking persisted frames reproduces the offline report") {
    Workspace ws("wire");
    const std::vector<std::string> texts = {"abc", "hi there"};
    ExperimentConfig cfg = experiment_in(ws, texts);
    const Checkpoint ck = load_checkpoint(cfg.model_path);
    SplitServerOptions opts;
    opts.l_split = 1;
    opts.curious = true;
    opts.persist_path = ws.path("wire.isc");
    opts.max_sessions = 1;
    SplitServer server(ck.weights, opts);
    std::thread th([&] { server.run(); });
    split_client("127.0.0.1", server.port(), texts, ck.weights, ck.tokenizer, 1);
    th.join();

    cfg.attack = AttackKind::tbs;
    cfg.attack_cfg.steps = 30;
    cfg.attack_cfg.lr = 1e-2;
    const ExperimentReport offline = run_experiment(cfg);
    cfg.is_path = ws.path("wire.isc");
    const ExperimentReport wire = run_experiment(cfg);
    CHECK(report_csv(offline) == report_csv(wire));
}
