#include "isinv/lm/tokenizer.hpp"

#include <limits>
#include <map>

#include "isinv/core/errors.hpp"

namespace isinv {

namespace {

std::uint64_t pack(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

template <typename Fn>
void for_each_chunk(std::string_view text, Fn&& fn) {
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (is_space(static_cast<unsigned char>(text[i])) && !is_space(static_cast<unsigned char>(text[i - 1]))) {
            fn(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) fn(text.substr(start));
}

void merge_pair(std::vector<int>& ids, int a, int b, int merged) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (r + 1 < ids.size() && ids[r] == a && ids[r + 1] == b) {
            ids[w++] = merged;
            ++r;
        } else {
            ids[w++] = ids[r];
        }
    }
    ids.resize(w);
}

}  // namespace

Tokenizer::Tokenizer(std::vector<Merge> merges) : merges_(std::move(merges)) {
    pieces_.reserve(vocab_size());
    for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
    for (std::size_t k = 0; k < merges_.size(); ++k) {
        const auto [a, b] = merges_[k];
        const int next = static_cast<int>(256 + k);
        if (a < 0 || b < 0 || a >= next || b >= next) throw FormatError("tokenizer merge references unknown id");
        pieces_.push_back(pieces_[static_cast<std::size_t>(a)] + pieces_[static_cast<std::size_t>(b)]);
        rank_.emplace(pack(a, b), static_cast<int>(k));
    }
}

Tokenizer Tokenizer::train(std::span<const std::string> texts, std::size_t vocab_size) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts) for_each_chunk(t, [&](std::string_view c) { ++counts[std::string(c)]; });

    std::vector<std::vector<int>> words;
    std::vector<std::size_t> freq;
    for (const auto& [w, n] : counts) {
        std::vector<int> ids(w.begin(), w.end());
        for (int& id : ids) id = static_cast<unsigned char>(id);
        words.push_back(std::move(ids));
        freq.push_back(n);
    }

    std::vector<Merge> merges;
    while (256 + merges.size() < vocab_size) {
        std::map<std::pair<int, int>, std::size_t> pairs;
        for (std::size_t i = 0; i < words.size(); ++i) {
            const auto& w = words[i];
            for (std::size_t j = 0; j + 1 < w.size(); ++j) pairs[{w[j], w[j + 1]}] += freq[i];
        }
        std::pair<int, int> best{-1, -1};
        std::size_t best_count = 1;
        for (const auto& [p, n] : pairs) {
            if (n > best_count) {
                best = p;
                best_count = n;
            }
        }
        if (best.first < 0) break;
        const int merged = static_cast<int>(256 + merges.size());
        merges.push_back(best);
        for (auto& w : words) merge_pair(w, best.first, best.second, merged);
    }
    return Tokenizer(std::move(merges));
}

void Tokenizer::encode_chunk(std::string_view chunk, TokenSequence& out) const {
    std::vector<int> ids(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) ids[i] = static_cast<unsigned char>(chunk[i]);
    while (ids.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        for (std::size_t j = 0; j + 1 < ids.size(); ++j) {
            auto it = rank_.find(pack(ids[j], ids[j + 1]));
            if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == std::numeric_limits<int>::max()) break;
        const auto [a, b] = merges_[static_cast<std::size_t>(best_rank)];
        merge_pair(ids, a, b, 256 + best_rank);
    }
    out.insert(out.end(), ids.begin(), ids.end());
}

TokenSequence Tokenizer::encode(std::string_view text) const {
    TokenSequence out;
    for_each_chunk(text, [&](std::string_view c) { encode_chunk(c, out); });
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
            throw FormatError("token id " + std::to_string(id) + " outside tokenizer vocabulary");
        }
        out += pieces_[static_cast<std::size_t>(id)];
    }
    return out;
}

}  // namespace isinv
