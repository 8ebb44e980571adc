#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace isinv {

enum class CorpusStyle { medical, code, mixed };

CorpusStyle parse_corpus_style(const std::string& name);
const char* corpus_style_name(CorpusStyle style);

/// Deterministic templated sentences; the same (style, count, seed) always
/// yields the same texts.
std::vector<std::string> generate_corpus(CorpusStyle style, std::size_t count, std::uint64_t seed);

}  // namespace isinv
