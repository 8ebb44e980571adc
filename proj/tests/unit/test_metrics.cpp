#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "isinv/core/errors.hpp"
#include "isinv/metrics/metrics.hpp"

using namespace isinv;

TEST_CASE("BLEU matches NLTK sentence_bleu with method1 smoothing") {
    std::ifstream in(std::string(ISINV_FIXTURE_DIR) + "/bleu_nltk.json");
    REQUIRE(in.good());
    const auto cases = nlohmann::json::parse(in);
    REQUIRE(cases.size() == 20);
    for (const auto& c : cases) {
        const std::string cand = c.at("candidate"), ref = c.at("reference");
        CAPTURE(cand);
        CAPTURE(ref);
        CHECK(bleu(cand, ref) == doctest::Approx(c.at("bleu").get<double>()).epsilon(1e-12));
    }
}

TEST_CASE("BLEU edge cases") {
    CHECK(bleu("a b c", "a b c") == 1.0);
    CHECK(bleu("x", "x") == 1.0);
    CHECK(bleu("", "a b") == 0.0);
    CHECK(bleu("p q r s", "a b c d") == 0.0);
    CHECK(bleu("a b c d ", "a b c d") == 1.0);
}

TEST_CASE("exact match compares after stripping trailing whitespace") {
    CHECK(exact_match("abc \n", "abc") == 1.0);
    CHECK(exact_match(" abc", "abc") == 0.0);
    CHECK(exact_match("", "") == 1.0);
}

TEST_CASE("token F1 and recall over id multisets") {
    const std::vector<int> cand = {1, 2, 2, 3}, ref = {2, 2, 4}, none;
    CHECK(token_f1(cand, ref) == doctest::Approx(4.0 / 7.0));
    CHECK(token_recall(cand, ref) == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1(none, none) == 1.0);
    CHECK(token_f1(cand, none) == 0.0);
    const Tokenizer tok;
    CHECK(token_f1("abc", "abd", tok) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ROUGE-L is the LCS F-measure") {
    CHECK(rouge_l("the cat sat", "the cat on mat") == doctest::Approx(4.0 / 7.0));
    CHECK(rouge_l("a b c", "c b a") == doctest::Approx(1.0 / 3.0));
    CHECK(rouge_l("x y", "x y") == 1.0);
    CHECK(rouge_l("", "x") == 0.0);
}

TEST_CASE("trigram cosine proxy") {
    CHECK(cos_sim_proxy("abcd", "abce") == doctest::Approx(0.5));
    CHECK(cos_sim_proxy("hello world", "hello world") == doctest::Approx(1.0));
    CHECK(cos_sim_proxy("ab", "ab") == 1.0);
    CHECK(cos_sim_proxy("ab", "cd") == 0.0);
    CHECK(cos_sim_proxy("abc", "xyz") == 0.0);
}

TEST_CASE("score rows apply both success thresholds") {
    const Tokenizer tok;
    MetricsConfig cfg;
    const ScoreRow same = score_text("the patient is well", "the patient is well", tok, cfg);
    CHECK(same.em == 1.0);
    CHECK(same.f1 == 1.0);
    CHECK(same.success);
    const ScoreRow off = score_text("zzzz", "the patient is well", tok, cfg);
    CHECK_FALSE(off.success);
    cfg.tau_s = 0.0;
    cfg.tau_tm = 0.0;
    CHECK(score_text("zzzz", "the patient is well", tok, cfg).success);
    cfg.tau_s = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("mean and standard error") {
    const std::vector<double> v = {1, 2, 3};
    const MeanSem m = mean_sem(v);
    CHECK(m.mean == 2.0);
    CHECK(m.sem == doctest::Approx(1.0 / std::sqrt(3.0)));
    const std::vector<double> one = {4};
    CHECK(mean_sem(one).sem == 0.0);
}
