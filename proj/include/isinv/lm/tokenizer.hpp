#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace isinv {

using TokenSequence = std::vector<int>;

/// Byte-level tokenizer with optional learned BPE merges.
///
/// Ids 0..255 are raw bytes; id 256 + k is the k-th merge. Text is split into
/// chunks (a whitespace run followed by a non-whitespace run) and merges never
/// cross chunk boundaries, so decode(encode(x)) == x for every byte string.
class Tokenizer {
public:
    using Merge = std::pair<int, int>;

    Tokenizer() : Tokenizer(std::vector<Merge>{}) {}
    explicit Tokenizer(std::vector<Merge> merges);

    /// Learns merges greedily by pair frequency until `vocab_size` ids exist or
    /// no pair occurs at least twice. Ties go to the smallest pair.
    static Tokenizer train(std::span<const std::string> texts, std::size_t vocab_size);

    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    std::size_t vocab_size() const { return 256 + merges_.size(); }
    const std::vector<Merge>& merges() const { return merges_; }
    const std::string& token_bytes(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

private:
    void encode_chunk(std::string_view chunk, TokenSequence& out) const;

    std::vector<Merge> merges_;
    std::vector<std::string> pieces_;
    std::unordered_map<std::uint64_t, int> rank_;  // packed pair -> merge index
};

}  // namespace isinv
