#include "isinv/harness/corpus_io.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>

#include "isinv/core/errors.hpp"

namespace isinv {

IngestResult ingest_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus '" + path + "'");
    IngestResult out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
                throw std::runtime_error("missing string field \"text\"");
            }
            out.texts.push_back(j["text"].get<std::string>());
        } catch (const std::exception& e) {
            ++out.skipped;
            std::cerr << "warning: " << path << ":" << lineno << ": skipped malformed line (" << e.what() << ")\n";
        }
    }
    if (in.bad()) throw IoError("error reading corpus '" + path + "'");
    return out;
}

void export_corpus(const std::string& path, std::span<const std::string> texts) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write corpus '" + path + "'");
    for (const auto& t : texts) out << nlohmann::json{{"text", t}}.dump() << '\n';
    if (!out) throw IoError("error writing corpus '" + path + "'");
}

}  // namespace isinv
