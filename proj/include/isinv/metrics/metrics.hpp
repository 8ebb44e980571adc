#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isinv/lm/tokenizer.hpp"

namespace isinv {

// All text metrics compare the inputs after stripping trailing whitespace.
// Scores are in [0, 1]; reports multiply by 100.

std::string_view strip_trailing(std::string_view s);
std::vector<std::string> whitespace_tokens(std::string_view s);

/// 1 iff byte-identical.
double exact_match(std::string_view a, std::string_view b);

/// Multiset F1 over token ids; 1 if both empty, 0 if exactly one is.
double token_f1(std::span<const int> candidate, std::span<const int> reference);
double token_f1(std::string_view candidate, std::string_view reference, const Tokenizer& tok);

/// |candidate ∩ reference| / |reference| over token multisets.
double token_recall(std::span<const int> candidate, std::span<const int> reference);

/// Sentence BLEU-4 over whitespace tokens with uniform weights, add-0.1
/// smoothing of empty higher-order matches and the usual brevity penalty.
/// Zero when no unigram matches; identical texts score 1.
double bleu(std::string_view candidate, std::string_view reference);

/// LCS-based F-measure over whitespace tokens.
double rouge_l(std::string_view candidate, std::string_view reference);

/// Cosine similarity of character-trigram count vectors. Texts without any
/// trigram score 1 against an identical text and 0 otherwise.
double cos_sim_proxy(std::string_view a, std::string_view b);

struct MetricsConfig {
    double tau_s = 0.9;
    double tau_tm = 0.9;

    void validate() const;
};

struct ScoreRow {
    double cs = 0.0;
    double bleu = 0.0;
    double rouge = 0.0;
    double em = 0.0;
    double f1 = 0.0;
    bool success = false;
};

ScoreRow score_text(std::string_view candidate, std::string_view reference, const Tokenizer& tok,
                    const MetricsConfig& cfg);

struct MeanSem {
    double mean = 0.0;
    double sem = 0.0;
};

/// Mean and standard error (sample standard deviation / sqrt(n)).
MeanSem mean_sem(std::span<const double> values);

}  // namespace isinv
