#pragma once

#include <span>
#include <string>
#include <vector>

namespace isinv {

struct IngestResult {
    std::vector<std::string> texts;
    std::size_t skipped = 0;
};

/// Reads a JSONL file of objects with a string field "text". Malformed lines
/// are counted, logged to stderr and skipped; blank lines are ignored.
IngestResult ingest_corpus(const std::string& path);

void export_corpus(const std::string& path, std::span<const std::string> texts);

}  // namespace isinv
