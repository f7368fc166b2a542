#pragma once

// Benchmark records and the canonical newline-delimited JSON dataset format.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "medqa/text.hpp"

namespace medqa {

/// Receives human-readable warnings; an empty sink discards them.
using WarningSink = std::function<void(const std::string&)>;

struct QaRecord {
    std::string id;
    std::string question;
    std::vector<std::string> choices;
    std::vector<std::size_t> gold;  // ascending, zero-based
    Language language = Language::en;
    std::optional<std::string> subject;
    std::string benchmark;

    friend bool operator==(const QaRecord&, const QaRecord&) = default;
};

/// Reserved partition key for records without a subject tag.
inline constexpr std::string_view kUnspecifiedSubject = "unspecified";

struct BenchmarkManifest {
    std::string benchmark;
    Language language = Language::en;
    std::vector<std::filesystem::path> sources;
    std::optional<std::size_t> expected_count;
    std::vector<std::pair<std::string, std::size_t>> subjects;
};

class DatasetError : public std::runtime_error {
public:
    enum class Kind { MissingFile, MalformedLine, CountMismatch, InvariantViolation };

    DatasetError(Kind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    Kind kind() const { return kind_; }
    std::size_t line() const { return line_; }
    std::size_t expected() const { return expected_; }
    std::size_t actual() const { return actual_; }
    const std::string& record_id() const { return record_id_; }

    static DatasetError missing_file(const std::filesystem::path& path) {
        return {Kind::MissingFile, "dataset file not found: " + path.string()};
    }
    static DatasetError malformed_line(const std::filesystem::path& path, std::size_t line,
                                       const std::string& why) {
        DatasetError e(Kind::MalformedLine,
                       path.string() + ":" + std::to_string(line) + ": malformed record: " + why);
        e.line_ = line;
        return e;
    }
    static DatasetError count_mismatch(const std::string& what, std::size_t expected,
                                       std::size_t actual) {
        DatasetError e(Kind::CountMismatch, what + ": expected " + std::to_string(expected) +
                                                " records, loaded " + std::to_string(actual));
        e.expected_ = expected;
        e.actual_ = actual;
        return e;
    }
    static DatasetError invariant(const std::string& id, const std::string& reason) {
        DatasetError e(Kind::InvariantViolation, "record " + id + ": " + reason);
        e.record_id_ = id;
        return e;
    }

private:
    Kind kind_;
    std::size_t line_ = 0;
    std::size_t expected_ = 0;
    std::size_t actual_ = 0;
    std::string record_id_;
};

struct Violation {
    std::string record_id;
    std::string reason;

    friend bool operator==(const Violation&, const Violation&) = default;
};

/// Number of choices each known benchmark must carry; 0 when unconstrained.
inline std::size_t required_choice_count(std::string_view benchmark) {
    if (benchmark == "igakuqa") {
        return 5;
    }
    if (benchmark == "medqa" || benchmark == "medmcqa" || benchmark == "mmlu" || benchmark == "jmmlu") {
        return 4;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::ordered_json to_json(const QaRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["question"] = r.question;
    j["choices"] = r.choices;
    j["gold"] = r.gold;
    j["language"] = to_string(r.language);
    j["subject"] = r.subject ? nlohmann::ordered_json(*r.subject) : nlohmann::ordered_json(nullptr);
    j["benchmark"] = r.benchmark;
    return j;
}

inline const std::set<std::string>& record_fields() {
    static const std::set<std::string> fields = {"id",       "question", "choices",  "gold",
                                                 "language", "subject",  "benchmark"};
    return fields;
}

struct ParsedLine {
    QaRecord record;
    std::vector<std::string> unknown_fields;
};

/// Parses one canonical line. Throws std::invalid_argument with a reason on
/// shape errors; semantic invariants are left to validate_dataset.
inline ParsedLine parse_record_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) {
        throw std::invalid_argument("expected a JSON object");
    }
    auto require = [&](const char* key) -> const nlohmann::json& {
        auto it = j.find(key);
        if (it == j.end()) {
            throw std::invalid_argument(std::string("missing field \"") + key + "\"");
        }
        return *it;
    };
    auto require_string = [&](const char* key) {
        const auto& v = require(key);
        if (!v.is_string()) {
            throw std::invalid_argument(std::string("field \"") + key + "\" must be a string");
        }
        return v.get<std::string>();
    };

    ParsedLine out;
    QaRecord& r = out.record;
    r.id = require_string("id");
    r.question = require_string("question");
    const auto& choices = require("choices");
    if (!choices.is_array()) {
        throw std::invalid_argument("field \"choices\" must be an array of strings");
    }
    for (const auto& c : choices) {
        if (!c.is_string()) {
            throw std::invalid_argument("field \"choices\" must be an array of strings");
        }
        r.choices.push_back(c.get<std::string>());
    }
    const auto& gold = require("gold");
    if (!gold.is_array()) {
        throw std::invalid_argument("field \"gold\" must be an array of integers");
    }
    for (const auto& g : gold) {
        if (!g.is_number_integer()) {
            throw std::invalid_argument("field \"gold\" must be an array of integers");
        }
        const auto v = g.get<std::int64_t>();
        if (v < 0) {
            throw std::invalid_argument("gold index " + std::to_string(v) + " is negative");
        }
        r.gold.push_back(static_cast<std::size_t>(v));
    }
    try {
        r.language = parse_language(require_string("language"));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("field \"language\": ") + e.what());
    }
    const auto& subject = require("subject");
    if (subject.is_string()) {
        r.subject = subject.get<std::string>();
    } else if (!subject.is_null()) {
        throw std::invalid_argument("field \"subject\" must be a string or null");
    }
    r.benchmark = require_string("benchmark");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!record_fields().contains(it.key())) {
            out.unknown_fields.push_back(it.key());
        }
    }
    return out;
}

inline std::string serialize_record(const QaRecord& r) {
    return to_json(r).dump();
}

inline std::string serialize_records(const std::vector<QaRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation

inline std::vector<std::string> record_problems(const QaRecord& r) {
    std::vector<std::string> problems;
    if (r.id.empty()) {
        problems.emplace_back("empty id");
    }
    if (r.choices.size() < 2) {
        problems.emplace_back("fewer than two choices");
    }
    const std::size_t required = required_choice_count(r.benchmark);
    if (required != 0 && r.choices.size() != required) {
        problems.push_back("benchmark " + r.benchmark + " requires " + std::to_string(required) +
                           " choices, found " + std::to_string(r.choices.size()));
    }
    for (const auto& c : r.choices) {
        if (text::is_blank(c)) {
            problems.emplace_back("empty choice");
            break;
        }
    }
    if (r.gold.empty()) {
        problems.emplace_back("empty gold set");
    }
    for (std::size_t g : r.gold) {
        if (g >= r.choices.size()) {
            problems.emplace_back("gold index out of range");
            break;
        }
    }
    if (std::set<std::size_t>(r.gold.begin(), r.gold.end()).size() != r.gold.size()) {
        problems.emplace_back("duplicate gold index");
    }
    if (r.subject && r.subject->empty()) {
        problems.emplace_back("empty subject tag");
    }
    return problems;
}

/// Every invariant violation across the list, in record order. Duplicate ids
/// within one benchmark+language are reported on the second occurrence.
inline std::vector<Violation> validate_dataset(const std::vector<QaRecord>& records) {
    std::vector<Violation> out;
    std::set<std::tuple<std::string, Language, std::string>> seen;
    for (const auto& r : records) {
        for (auto& p : record_problems(r)) {
            out.push_back({r.id, std::move(p)});
        }
        if (!seen.emplace(r.benchmark, r.language, r.id).second) {
            out.push_back({r.id, "duplicate id"});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loading

struct DatasetFile {
    std::vector<QaRecord> records;
    /// (line number, field name) for fields outside the canonical schema.
    std::vector<std::pair<std::size_t, std::string>> unknown_fields;
};

/// Reads one canonical dataset file in file order. Blank lines are skipped.
inline DatasetFile read_dataset_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DatasetError::missing_file(path);
    }
    DatasetFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        try {
            ParsedLine parsed = parse_record_line(line);
            for (auto& f : parsed.unknown_fields) {
                file.unknown_fields.emplace_back(line_no, std::move(f));
            }
            file.records.push_back(std::move(parsed.record));
        } catch (const std::invalid_argument& e) {
            throw DatasetError::malformed_line(path, line_no, e.what());
        }
    }
    return file;
}

inline void write_dataset_file(const std::filesystem::path& path, const std::vector<QaRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << serialize_records(records);
}

/// Loads every source of the manifest, checks declared counts and record
/// invariants. Throws DatasetError on the first failure. Fields outside the
/// schema are tolerated and reported through `on_unknown`.
inline std::vector<QaRecord> load_benchmark(const BenchmarkManifest& manifest,
                                            const WarningSink& on_unknown = {}) {
    std::vector<QaRecord> records;
    for (const auto& src : manifest.sources) {
        DatasetFile file = read_dataset_file(src);
        if (on_unknown) {
            for (const auto& [line, field] : file.unknown_fields) {
                on_unknown(src.string() + ":" + std::to_string(line) + ": unknown field \"" + field + "\"");
            }
        }
        for (auto& r : file.records) {
            records.push_back(std::move(r));
        }
    }
    const std::string what = manifest.benchmark + "(" + std::string(to_string(manifest.language)) + ")";
    if (manifest.expected_count && *manifest.expected_count != records.size()) {
        throw DatasetError::count_mismatch(what, *manifest.expected_count, records.size());
    }
    for (const auto& r : records) {
        if (r.benchmark != manifest.benchmark) {
            throw DatasetError::invariant(r.id, "benchmark \"" + r.benchmark + "\" does not match manifest \"" +
                                                    manifest.benchmark + "\"");
        }
        if (r.language != manifest.language) {
            throw DatasetError::invariant(r.id, "language does not match manifest");
        }
    }
    if (auto violations = validate_dataset(records); !violations.empty()) {
        throw DatasetError::invariant(violations.front().record_id, violations.front().reason);
    }
    if (!manifest.subjects.empty()) {
        std::map<std::string, std::size_t> counts;
        for (const auto& r : records) {
            ++counts[r.subject.value_or(std::string(kUnspecifiedSubject))];
        }
        std::size_t declared_total = 0;
        for (const auto& [subject, expected] : manifest.subjects) {
            declared_total += expected;
            const std::size_t actual = counts.contains(subject) ? counts[subject] : 0;
            if (actual != expected) {
                throw DatasetError::count_mismatch(what + " subject " + subject, expected, actual);
            }
        }
        if (declared_total != records.size()) {
            throw DatasetError::count_mismatch(what + " (records outside declared subjects)", declared_total,
                                               records.size());
        }
    }
    return records;
}

/// Subject -> records, preserving input order inside each partition.
inline std::map<std::string, std::vector<QaRecord>> partition_by_subject(const std::vector<QaRecord>& records) {
    std::map<std::string, std::vector<QaRecord>> parts;
    for (const auto& r : records) {
        parts[r.subject.value_or(std::string(kUnspecifiedSubject))].push_back(r);
    }
    return parts;
}

inline std::string join_choices(const std::vector<std::string>& choices) {
    return text::join(choices, ", ");
}

/// Gold choices joined with ", " in choice order.
inline std::string gold_answer_text(const QaRecord& r) {
    std::vector<std::size_t> gold = r.gold;
    std::sort(gold.begin(), gold.end());
    std::vector<std::string> parts;
    for (std::size_t g : gold) {
        if (g < r.choices.size()) {
            parts.push_back(r.choices[g]);
        }
    }
    return join_choices(parts);
}

}  // namespace medqa
