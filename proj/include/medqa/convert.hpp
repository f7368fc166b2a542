#pragma once

// Adapters from upstream benchmark distributions to the canonical dataset
// format. Items that are not pure multiple choice are excluded and listed in
// the conversion report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "medqa/dataset.hpp"

namespace medqa::convert {

enum class SourceFormat { igakuqa, medqa, medmcqa, mmlu };

inline SourceFormat parse_source_format(std::string_view s) {
    if (s == "igakuqa") {
        return SourceFormat::igakuqa;
    }
    if (s == "medqa") {
        return SourceFormat::medqa;
    }
    if (s == "medmcqa") {
        return SourceFormat::medmcqa;
    }
    if (s == "mmlu" || s == "jmmlu") {
        return SourceFormat::mmlu;
    }
    throw std::invalid_argument("unknown source format '" + std::string(s) +
                                "' (expected igakuqa, medqa, medmcqa, mmlu or jmmlu)");
}

struct Exclusion {
    std::string source;  // file:line or upstream id
    std::string reason;
};

struct ConversionReport {
    std::vector<QaRecord> records;
    std::vector<Exclusion> excluded;

    std::string summary() const {
        std::string out = std::to_string(records.size()) + " records converted, " +
                          std::to_string(excluded.size()) + " excluded\n";
        std::map<std::string, std::size_t> by_reason;
        for (const auto& e : excluded) {
            ++by_reason[e.reason];
        }
        for (const auto& [reason, n] : by_reason) {
            out += "  " + std::to_string(n) + " x " + reason + "\n";
        }
        return out;
    }
};

struct ConvertOptions {
    SourceFormat format = SourceFormat::medqa;
    std::string benchmark;  // defaults to the format name
    Language language = Language::en;
    std::optional<std::string> subject;  // mmlu: overrides the file-name subject
    int answer_base = 1;                 // medmcqa "cop" numbering
};

/// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view src) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const char c = src[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < src.size() && src[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < src.size() && src[i + 1] == '\n') {
                ++i;
            }
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) {
        throw std::invalid_argument("unterminated quoted CSV field");
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DatasetError::missing_file(path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string s = buf.str();
    if (s.rfind("\xEF\xBB\xBF", 0) == 0) {
        s.erase(0, 3);
    }
    return s;
}

inline std::string padded(std::size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", n);
    return buf;
}

inline int letter_index(std::string_view s) {
    const auto t = text::trim_ascii(s);
    if (t.size() != 1) {
        return -1;
    }
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(t[0])));
    return c >= 'a' && c <= 'z' ? c - 'a' : -1;
}

inline std::string trim(std::string_view s) {
    return std::string(text::trim_ascii(s));
}

/// "a. text" / "a．text" / "A) text" -> "text"
inline std::string strip_choice_label(const std::string& choice) {
    static const std::regex label(R"(^\s*[a-eA-E]\s*(?:\.|\)|．|:)\s*)");
    return trim(std::regex_replace(choice, label, "", std::regex_constants::format_first_only));
}

/// MMLU-style file stems: "anatomy_test" -> "anatomy".
inline std::string subject_from_path(const std::filesystem::path& p) {
    std::string stem = p.stem().string();
    for (const char* suffix : {"_test", "_dev", "_val"}) {
        const std::string s(suffix);
        if (stem.size() > s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0) {
            stem.erase(stem.size() - s.size());
        }
    }
    return stem;
}

inline void add_or_exclude(ConversionReport& report, QaRecord r, const std::string& source) {
    auto problems = record_problems(r);
    if (!problems.empty()) {
        report.excluded.push_back({source, problems.front()});
        return;
    }
    report.records.push_back(std::move(r));
}

}  // namespace detail

inline void convert_igakuqa(const std::filesystem::path& path, const ConvertOptions& opt, ConversionReport& report) {
    const std::string body = detail::read_file(path);
    std::size_t line_no = 0;
    for (auto line : text::split_lines(body)) {
        ++line_no;
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw DatasetError::malformed_line(path, line_no, "invalid JSON");
        }
        const std::string id = j.value("problem_id", where);
        if (j.contains("text_only") && j["text_only"].is_boolean() && !j["text_only"].get<bool>()) {
            report.excluded.push_back({id, "image-based item"});
            continue;
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
            report.excluded.push_back({id, "not a multiple-choice item"});
            continue;
        }
        QaRecord r;
        r.id = id;
        r.question = detail::trim(j.value("problem_text", std::string{}));
        for (const auto& c : j["choices"]) {
            r.choices.push_back(detail::strip_choice_label(c.get<std::string>()));
        }
        std::vector<std::string> answers;
        if (j.contains("answer") && j["answer"].is_array()) {
            answers = j["answer"].get<std::vector<std::string>>();
        } else if (j.contains("answer") && j["answer"].is_string()) {
            answers.push_back(j["answer"].get<std::string>());
        }
        bool letters_ok = !answers.empty();
        for (const auto& a : answers) {
            const int idx = detail::letter_index(a);
            if (idx < 0) {
                letters_ok = false;
                break;
            }
            r.gold.push_back(static_cast<std::size_t>(idx));
        }
        if (!letters_ok) {
            report.excluded.push_back({id, "answer is not a choice label (free-text item)"});
            continue;
        }
        std::sort(r.gold.begin(), r.gold.end());
        r.language = opt.language;
        r.benchmark = opt.benchmark.empty() ? "igakuqa" : opt.benchmark;
        detail::add_or_exclude(report, std::move(r), id);
    }
}

inline void convert_medqa(const std::filesystem::path& path, const ConvertOptions& opt, ConversionReport& report) {
    const std::string body = detail::read_file(path);
    std::size_t line_no = 0;
    for (auto line : text::split_lines(body)) {
        ++line_no;
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw DatasetError::malformed_line(path, line_no, "invalid JSON");
        }
        QaRecord r;
        r.benchmark = opt.benchmark.empty() ? "medqa" : opt.benchmark;
        r.language = opt.language;
        r.id = r.benchmark + "-" + std::string(to_string(opt.language)) + "-" +
               detail::padded(report.records.size() + report.excluded.size());
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        if (!j.contains("options") || !j["options"].is_object() || !j.contains("answer_idx")) {
            report.excluded.push_back({where, "missing options or answer_idx"});
            continue;
        }
        r.question = detail::trim(j.value("question", std::string{}));
        std::vector<std::string> keys;
        for (auto it = j["options"].begin(); it != j["options"].end(); ++it) {
            keys.push_back(it.key());
        }
        std::sort(keys.begin(), keys.end());
        for (const auto& k : keys) {
            r.choices.push_back(detail::trim(j["options"][k].get<std::string>()));
        }
        const auto answer = j["answer_idx"].get<std::string>();
        const auto pos = std::find(keys.begin(), keys.end(), answer);
        if (pos == keys.end()) {
            report.excluded.push_back({where, "answer_idx is not an option key"});
            continue;
        }
        r.gold.push_back(static_cast<std::size_t>(pos - keys.begin()));
        detail::add_or_exclude(report, std::move(r), where);
    }
}

inline void convert_medmcqa(const std::filesystem::path& path, const ConvertOptions& opt, ConversionReport& report) {
    const std::string body = detail::read_file(path);
    std::size_t line_no = 0;
    for (auto line : text::split_lines(body)) {
        ++line_no;
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw DatasetError::malformed_line(path, line_no, "invalid JSON");
        }
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        QaRecord r;
        r.benchmark = opt.benchmark.empty() ? "medmcqa" : opt.benchmark;
        r.language = opt.language;
        r.id = j.contains("id") && j["id"].is_string()
                   ? j["id"].get<std::string>()
                   : r.benchmark + "-" + std::string(to_string(opt.language)) + "-" +
                         detail::padded(report.records.size() + report.excluded.size());
        r.question = detail::trim(j.value("question", std::string{}));
        for (const char* key : {"opa", "opb", "opc", "opd"}) {
            r.choices.push_back(detail::trim(j.value(key, std::string{})));
        }
        if (!j.contains("cop") || !j["cop"].is_number_integer()) {
            report.excluded.push_back({r.id, "missing answer (cop)"});
            continue;
        }
        const auto cop = j["cop"].get<std::int64_t>() - opt.answer_base;
        if (cop < 0 || cop >= 4) {
            report.excluded.push_back({r.id, "answer (cop) out of range"});
            continue;
        }
        r.gold.push_back(static_cast<std::size_t>(cop));
        if (j.contains("subject_name") && j["subject_name"].is_string()) {
            r.subject = j["subject_name"].get<std::string>();
        }
        detail::add_or_exclude(report, std::move(r), where);
    }
}

/// MMLU/JMMLU CSV: question, A, B, C, D, answer letter. A header row is
/// skipped when its last column is not a choice letter.
inline void convert_mmlu(const std::filesystem::path& path, const ConvertOptions& opt, ConversionReport& report) {
    const auto rows = parse_csv(detail::read_file(path));
    const std::string subject = opt.subject.value_or(detail::subject_from_path(path));
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::string where = path.filename().string() + ":" + std::to_string(i + 1);
        if (i == 0 && (row.size() < 6 || detail::letter_index(row[5]) < 0)) {
            continue;
        }
        if (row.size() < 6) {
            report.excluded.push_back({where, "expected 6 columns"});
            continue;
        }
        QaRecord r;
        r.benchmark = opt.benchmark.empty() ? "mmlu" : opt.benchmark;
        r.language = opt.language;
        r.subject = subject;
        r.id = r.benchmark + "-" + subject + "-" + detail::padded(n++);
        r.question = detail::trim(row[0]);
        for (std::size_t c = 1; c <= 4; ++c) {
            r.choices.push_back(detail::trim(row[c]));
        }
        const int idx = detail::letter_index(row[5]);
        if (idx < 0 || idx >= 4) {
            report.excluded.push_back({where, "answer is not A-D"});
            continue;
        }
        r.gold.push_back(static_cast<std::size_t>(idx));
        detail::add_or_exclude(report, std::move(r), where);
    }
}

inline ConversionReport convert_files(const std::vector<std::filesystem::path>& inputs, const ConvertOptions& opt) {
    ConversionReport report;
    for (const auto& p : inputs) {
        switch (opt.format) {
            case SourceFormat::igakuqa: convert_igakuqa(p, opt, report); break;
            case SourceFormat::medqa: convert_medqa(p, opt, report); break;
            case SourceFormat::medmcqa: convert_medmcqa(p, opt, report); break;
            case SourceFormat::mmlu: convert_mmlu(p, opt, report); break;
        }
    }
    return report;
}

}  // namespace medqa::convert
