#include "isinv/lm/synthetic_corpus.hpp"

#include <initializer_list>
#include <random>
#include <string_view>

#include "isinv/core/errors.hpp"

namespace isinv {

namespace {

using Words = std::vector<std::string_view>;

const Words kSymptoms = {"mild headache", "chest pain",   "nausea",        "dizziness",     "a dry cough",
                         "fatigue",       "joint pain",   "blurred vision", "shortness of breath", "a skin rash",
                         "back pain",     "fever",        "insomnia",      "stomach cramps", "a sore throat"};
const Words kDrugs = {"ibuprofen", "metformin", "lisinopril", "amoxicillin", "atorvastatin",
                      "omeprazole", "sertraline", "albuterol", "prednisone", "warfarin"};
const Words kConditions = {"diabetes", "hypertension", "asthma",   "migraine", "anemia",
                           "arthritis", "depression", "bronchitis", "eczema", "gastritis"};
const Words kFreq = {"twice daily", "once a day", "every morning", "at bedtime", "every six hours"};
const Words kTests = {"blood", "thyroid", "liver", "kidney", "cholesterol", "glucose"};
const Words kFeelings = {"tired", "anxious", "weak", "restless", "dizzy", "unwell"};
const Words kTimes = {"last week", "yesterday", "two days ago", "this morning", "last month"};
const Words kBody = {"knee", "shoulder", "stomach", "heart", "lungs", "skin", "eyes"};
const Words kNames = {"The patient", "My mother", "My son", "A colleague", "My father", "The resident"};
const Words kDoses = {"5", "10", "20", "25", "50", "100", "200", "400", "500"};

const Words kFns = {"load_data", "parse_args", "compute_total", "fetch_user", "save_model",
                    "train_step", "read_config", "send_request", "merge_lists", "clean_text"};
const Words kVars = {"items", "result", "count", "users", "config", "total", "data", "values", "path", "buffer"};
const Words kMethods = {"strip", "split", "lower", "keys", "copy", "sort", "items", "values"};
const Words kModules = {"numpy", "pandas", "torch", "json", "os", "sys", "re", "math"};
const Words kAliases = {"np", "pd", "th", "js", "osp", "m"};
const Words kClasses = {"Parser", "Client", "Model", "Cache", "Handler", "Worker", "Loader"};
const Words kBases = {"object", "Exception", "dict", "Base", "Thread"};
const Words kMsgs = {"missing value", "invalid input", "empty list", "bad config", "not found"};

std::string cat(std::initializer_list<std::string_view> parts) {
    std::string out;
    for (auto p : parts) out += p;
    return out;
}

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}

    std::string_view pick(const Words& w) {
        return w[std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng_)];
    }
    int number(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

private:
    std::mt19937_64 rng_;
};

std::string medical_sentence(Sampler& s) {
    std::string out;
    switch (s.number(0, 6)) {
        case 0:
            out = cat({s.pick(kNames), " reported ", s.pick(kSymptoms), " after taking ", s.pick(kDoses), " mg of ", s.pick(kDrugs), " ", s.pick(kFreq), "."});
            break;
        case 1:
            out = cat({s.pick(kNames), " has a history of ", s.pick(kConditions), " and was prescribed ", s.pick(kDrugs), " for ", std::to_string(s.number(2, 12)), " weeks."});
            break;
        case 2:
            out = cat({"Symptoms of ", s.pick(kConditions), " include ", s.pick(kSymptoms), " and ", s.pick(kSymptoms), "."});
            break;
        case 3:
            out = cat({"Please schedule a follow-up visit in ", std::to_string(s.number(1, 8)), " weeks to review the ", s.pick(kTests), " test results."});
            break;
        case 4:
            out = cat({"I have been feeling ", s.pick(kFeelings), " since ", s.pick(kTimes), ", should I see a doctor about my ", s.pick(kBody), "?"});
            break;
        case 5:
            out = cat({"Blood pressure was ", std::to_string(s.number(100, 160)), "/", std::to_string(s.number(60, 100)), " mmHg and heart rate ", std::to_string(s.number(55, 120)), " bpm at admission."});
            break;
        default:
            out = cat({"Is it safe to take ", s.pick(kDrugs), " with ", s.pick(kDrugs), " if I have ", s.pick(kConditions), "?"});
            break;
    }
    return out;
}

std::string code_sentence(Sampler& s) {
    std::string out;
    switch (s.number(0, 6)) {
        case 0:
            out = cat({"def ", s.pick(kFns), "(", s.pick(kVars), "): return ", s.pick(kVars), ".", s.pick(kMethods), "()"});
            break;
        case 1:
            out = cat({"for i in range(", std::to_string(s.number(2, 64)), "): ", s.pick(kVars), " += i * ", std::to_string(s.number(1, 9))});
            break;
        case 2:
            out = cat({"if ", s.pick(kVars), " is None: raise ValueError(\"", s.pick(kMsgs), "\")"});
            break;
        case 3:
            out = cat({"import ", s.pick(kModules), " as ", s.pick(kAliases)});
            break;
        case 4: {
            const std::string v(s.pick(kVars));
            out = cat({v, " = [x for x in ", s.pick(kVars), " if x > ", std::to_string(s.number(0, 99)), "]"});
            break;
        }
        case 5:
            out = cat({"class ", s.pick(kClasses), "(", s.pick(kBases), "): pass"});
            break;
        default: {
            const std::string v(s.pick(kVars));
            out = cat({"print(len(", v, "), ", s.pick(kVars), "[", std::to_string(s.number(0, 9)), "])"});
            break;
        }
    }
    return out;
}

}  // namespace

CorpusStyle parse_corpus_style(const std::string& name) {
    if (name == "medical") return CorpusStyle::medical;
    if (name == "code") return CorpusStyle::code;
    if (name == "mixed") return CorpusStyle::mixed;
    throw ConfigError("unknown corpus style '" + name + "'");
}

const char* corpus_style_name(CorpusStyle style) {
    switch (style) {
        case CorpusStyle::medical:
            return "medical";
        case CorpusStyle::code:
            return "code";
        case CorpusStyle::mixed:
            return "mixed";
    }
    return "?";
}

std::vector<std::string> generate_corpus(CorpusStyle style, std::size_t count, std::uint64_t seed) {
    Sampler s(seed);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        bool medical = style == CorpusStyle::medical;
        if (style == CorpusStyle::mixed) medical = s.number(0, 1) == 0;
        out.push_back(medical ? medical_sentence(s) : code_sentence(s));
    }
    return out;
}

}  // namespace isinv
