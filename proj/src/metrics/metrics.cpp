#include "isinv/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "isinv/core/errors.hpp"

namespace isinv {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t multiset_overlap(std::span<const int> a, std::span<const int> b) {
    std::unordered_map<int, std::size_t> counts;
    for (int x : b) ++counts[x];
    std::size_t overlap = 0;
    for (int x : a) {
        auto it = counts.find(x);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return overlap;
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<Ngram, std::size_t> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Ngram(toks.begin() + i, toks.begin() + i + n)];
    return out;
}

}  // namespace

std::string_view strip_trailing(std::string_view s) {
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> whitespace_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        const std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

double exact_match(std::string_view a, std::string_view b) { return strip_trailing(a) == strip_trailing(b) ? 1.0 : 0.0; }

double token_f1(std::span<const int> candidate, std::span<const int> reference) {
    if (candidate.empty() && reference.empty()) return 1.0;
    if (candidate.empty() || reference.empty()) return 0.0;
    const double overlap = static_cast<double>(multiset_overlap(candidate, reference));
    if (overlap == 0.0) return 0.0;
    const double p = overlap / static_cast<double>(candidate.size());
    const double r = overlap / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

double token_f1(std::string_view candidate, std::string_view reference, const Tokenizer& tok) {
    return token_f1(tok.encode(strip_trailing(candidate)), tok.encode(strip_trailing(reference)));
}

double token_recall(std::span<const int> candidate, std::span<const int> reference) {
    if (reference.empty()) return candidate.empty() ? 1.0 : 0.0;
    return static_cast<double>(multiset_overlap(candidate, reference)) / static_cast<double>(reference.size());
}

double bleu(std::string_view candidate, std::string_view reference) {
    candidate = strip_trailing(candidate);
    reference = strip_trailing(reference);
    const auto hyp = whitespace_tokens(candidate);
    const auto ref = whitespace_tokens(reference);
    if (hyp.empty()) return 0.0;
    if (hyp == ref) return 1.0;

    constexpr std::size_t kOrder = 4;
    constexpr double kEpsilon = 0.1;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= kOrder; ++n) {
        const auto hc = ngram_counts(hyp, n);
        const auto rc = ngram_counts(ref, n);
        std::size_t matched = 0, total = 0;
        for (const auto& [g, c] : hc) {
            total += c;
            auto it = rc.find(g);
            if (it != rc.end()) matched += std::min(c, it->second);
        }
        const double denom = static_cast<double>(std::max<std::size_t>(1, total));
        if (n == 1 && matched == 0) return 0.0;
        const double p = matched == 0 ? kEpsilon / denom : static_cast<double>(matched) / denom;
        log_sum += std::log(p) / static_cast<double>(kOrder);
    }
    const double c = static_cast<double>(hyp.size()), r = static_cast<double>(ref.size());
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
    const auto c = whitespace_tokens(strip_trailing(candidate));
    const auto r = whitespace_tokens(strip_trailing(reference));
    if (c.empty() && r.empty()) return 1.0;
    if (c.empty() || r.empty()) return 0.0;
    std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
    for (std::size_t i = 1; i <= c.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j) {
            cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[r.size()]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(c.size());
    const double rec = lcs / static_cast<double>(r.size());
    return 2.0 * p * rec / (p + rec);
}

double cos_sim_proxy(std::string_view a, std::string_view b) {
    a = strip_trailing(a);
    b = strip_trailing(b);
    auto grams = [](std::string_view s) {
        std::unordered_map<std::string_view, double> out;
        for (std::size_t i = 0; i + 3 <= s.size(); ++i) out[s.substr(i, 3)] += 1.0;
        return out;
    };
    const auto ga = grams(a);
    const auto gb = grams(b);
    if (ga.empty() || gb.empty()) return ga.empty() && gb.empty() && a == b ? 1.0 : 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, c] : ga) {
        na += c * c;
        auto it = gb.find(g);
        if (it != gb.end()) dot += c * it->second;
    }
    for (const auto& [g, c] : gb) nb += c * c;
    return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

void MetricsConfig::validate() const {
    if (!(tau_s >= 0.0 && tau_s <= 1.0) || !(tau_tm >= 0.0 && tau_tm <= 1.0)) {
        throw ConfigError("metric thresholds must be in [0, 1]");
    }
}

ScoreRow score_text(std::string_view candidate, std::string_view reference, const Tokenizer& tok,
                    const MetricsConfig& cfg) {
    const auto c_ids = tok.encode(strip_trailing(candidate));
    const auto r_ids = tok.encode(strip_trailing(reference));
    ScoreRow row;
    row.cs = cos_sim_proxy(candidate, reference);
    row.bleu = bleu(candidate, reference);
    row.rouge = rouge_l(candidate, reference);
    row.em = exact_match(candidate, reference);
    row.f1 = token_f1(c_ids, r_ids);
    row.success = row.cs >= cfg.tau_s && token_recall(c_ids, r_ids) >= cfg.tau_tm;
    return row;
}

MeanSem mean_sem(std::span<const double> values) {
    MeanSem out;
    if (values.empty()) return out;
    const double n = static_cast<double>(values.size());
    for (double v : values) out.mean += v;
    out.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return out;
}

}  // namespace isinv
