#pragma once

// Command-line front end: validate, run, score, report and convert over a
// TOML config plus flags. Flags override config values, which override the
// built-in defaults.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medqa/convert.hpp"
#include "medqa/dataset.hpp"
#include "medqa/digest.hpp"
#include "medqa/inference.hpp"
#include "medqa/metrics.hpp"
#include "medqa/prompt.hpp"
#include "medqa/report.hpp"
#include "medqa/toml.hpp"

namespace medqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFindings = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitEndpoint = 3;

/// Bad flags, bad config values, unreadable inputs: exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BenchmarkEntry {
    std::string id;
    Language language = Language::en;
    std::vector<std::filesystem::path> paths;
    std::optional<std::size_t> expected_count;
    std::vector<std::pair<std::string, std::size_t>> subjects;

    BenchmarkManifest manifest() const { return {id, language, paths, expected_count, subjects}; }
    std::string name() const { return id + " (" + std::string(to_string(language)) + ")"; }
};

struct RunConfig {
    std::vector<BenchmarkEntry> benchmarks;
    EndpointConfig endpoint;
    TemplateKind template_kind = TemplateKind::cot;
    int shots = 0;
    bool verbatim_instruction = false;
    std::optional<std::filesystem::path> templates_dir;
    std::optional<std::filesystem::path> shots_file;
    ExtractionPolicy extraction = ExtractionPolicy::last_line;
    GenerationParams params;
    std::string model_label;
    std::string run_id;
    std::filesystem::path output_dir = "out";
    std::optional<std::filesystem::path> cache_dir;  // unset: <output_dir>/cache

    std::filesystem::path resolved_cache_dir() const { return cache_dir.value_or(output_dir / "cache"); }

    std::string label() const { return model_label.empty() ? endpoint.model : model_label; }

    std::string resolved_run_id() const {
        std::string id = run_id.empty() ? label() : run_id;
        for (char& c : id) {
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
                c = '_';
            }
        }
        return id.empty() ? "run" : id;
    }
};

namespace detail {

using json = nlohmann::json;

template <class T>
std::optional<T> get(const json& table, const char* key, const std::string& where) {
    if (!table.is_object() || !table.contains(key)) {
        return std::nullopt;
    }
    try {
        return table.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError("config: " + where + "." + key + " has the wrong type");
    }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

inline void check_keys(const json& table, const std::set<std::string>& allowed, const std::string& where) {
    if (!table.is_object()) {
        throw UsageError("config: " + where + " must be a table");
    }
    for (auto it = table.begin(); it != table.end(); ++it) {
        if (!allowed.contains(it.key())) {
            throw UsageError("config: unknown key " + where + "." + it.key());
        }
    }
}

}  // namespace detail

/// Builds a RunConfig from a parsed TOML document. Relative paths resolve
/// against base_dir (normally the config file's directory).
inline RunConfig config_from_document(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    using detail::get;
    RunConfig c;
    detail::check_keys(doc,
                       {"model_label", "run_id", "output_dir", "cache_dir", "extraction", "endpoint", "template",
                        "params", "benchmark"},
                       "root");
    if (auto v = get<std::string>(doc, "model_label", "root")) {
        c.model_label = *v;
    }
    if (auto v = get<std::string>(doc, "run_id", "root")) {
        c.run_id = *v;
    }
    if (auto v = get<std::string>(doc, "output_dir", "root")) {
        c.output_dir = detail::resolve(base_dir, *v);
    }
    if (auto v = get<std::string>(doc, "cache_dir", "root")) {
        c.cache_dir = detail::resolve(base_dir, *v);
    }
    try {
        if (auto v = get<std::string>(doc, "extraction", "root")) {
            c.extraction = parse_extraction_policy(*v);
        }
        if (doc.contains("endpoint")) {
            const auto& e = doc["endpoint"];
            detail::check_keys(e,
                               {"base_url", "model", "api_key_env", "timeout_s", "max_retries", "max_in_flight",
                                "api_flavor", "notes", "backoff_base_ms"},
                               "endpoint");
            c.endpoint.base_url = get<std::string>(e, "base_url", "endpoint").value_or(c.endpoint.base_url);
            c.endpoint.model = get<std::string>(e, "model", "endpoint").value_or(c.endpoint.model);
            c.endpoint.api_key_env = get<std::string>(e, "api_key_env", "endpoint").value_or("");
            c.endpoint.timeout_s = get<double>(e, "timeout_s", "endpoint").value_or(c.endpoint.timeout_s);
            c.endpoint.max_retries = get<int>(e, "max_retries", "endpoint").value_or(c.endpoint.max_retries);
            c.endpoint.max_in_flight = get<int>(e, "max_in_flight", "endpoint").value_or(c.endpoint.max_in_flight);
            c.endpoint.notes = get<std::string>(e, "notes", "endpoint").value_or("");
            if (auto v = get<std::string>(e, "api_flavor", "endpoint")) {
                c.endpoint.api_flavor = parse_api_flavor(*v);
            }
            if (auto v = get<std::int64_t>(e, "backoff_base_ms", "endpoint")) {
                c.endpoint.backoff_base = std::chrono::milliseconds(*v);
            }
        }
        if (doc.contains("template")) {
            const auto& t = doc["template"];
            detail::check_keys(t, {"kind", "shots", "verbatim_instruction", "templates_dir", "shots_file"},
                               "template");
            if (auto v = get<std::string>(t, "kind", "template")) {
                c.template_kind = parse_template_kind(*v);
            }
            c.shots = get<int>(t, "shots", "template").value_or(0);
            c.verbatim_instruction = get<bool>(t, "verbatim_instruction", "template").value_or(false);
            if (auto v = get<std::string>(t, "templates_dir", "template")) {
                c.templates_dir = detail::resolve(base_dir, *v);
            }
            if (auto v = get<std::string>(t, "shots_file", "template")) {
                c.shots_file = detail::resolve(base_dir, *v);
            }
        }
        if (doc.contains("params")) {
            const auto& p = doc["params"];
            detail::check_keys(p,
                               {"max_new_tokens", "temperature", "sampling", "beams", "stop_sequences", "seed",
                                "repetition_penalty"},
                               "params");
            c.params.max_new_tokens = get<int>(p, "max_new_tokens", "params").value_or(c.params.max_new_tokens);
            c.params.temperature = get<double>(p, "temperature", "params").value_or(c.params.temperature);
            c.params.sampling = get<bool>(p, "sampling", "params").value_or(c.params.sampling);
            c.params.beams = get<int>(p, "beams", "params").value_or(c.params.beams);
            c.params.stop_sequences = get<std::vector<std::string>>(p, "stop_sequences", "params");
            c.params.seed = get<std::int64_t>(p, "seed", "params");
            c.params.repetition_penalty = get<double>(p, "repetition_penalty", "params");
        }
        if (doc.contains("benchmark")) {
            if (!doc["benchmark"].is_array()) {
                throw UsageError("config: benchmark must be an array of tables ([[benchmark]])");
            }
            for (const auto& b : doc["benchmark"]) {
                detail::check_keys(b, {"id", "language", "path", "paths", "expected_count", "subjects"},
                                   "benchmark");
                BenchmarkEntry entry;
                auto id = get<std::string>(b, "id", "benchmark");
                auto lang = get<std::string>(b, "language", "benchmark");
                if (!id || !lang) {
                    throw UsageError("config: every [[benchmark]] needs id and language");
                }
                entry.id = *id;
                entry.language = parse_language(*lang);
                if (auto p = get<std::string>(b, "path", "benchmark")) {
                    entry.paths.push_back(detail::resolve(base_dir, *p));
                }
                for (const auto& p : get<std::vector<std::string>>(b, "paths", "benchmark").value_or(std::vector<std::string>{})) {
                    entry.paths.push_back(detail::resolve(base_dir, p));
                }
                if (entry.paths.empty()) {
                    throw UsageError("config: benchmark " + entry.name() + " has no path");
                }
                if (auto n = get<std::int64_t>(b, "expected_count", "benchmark")) {
                    if (*n < 0) {
                        throw UsageError("config: expected_count must be non-negative");
                    }
                    entry.expected_count = static_cast<std::size_t>(*n);
                }
                if (b.contains("subjects")) {
                    const auto& s = b["subjects"];
                    if (!s.is_object()) {
                        throw UsageError("config: benchmark.subjects must be a table");
                    }
                    for (auto it = s.begin(); it != s.end(); ++it) {
                        if (!it.value().is_number_integer() || it.value().get<std::int64_t>() < 0) {
                            throw UsageError("config: subject count for " + it.key() + " must be a count");
                        }
                        entry.subjects.emplace_back(it.key(), it.value().get<std::size_t>());
                    }
                }
                c.benchmarks.push_back(std::move(entry));
            }
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_document(toml::parse_file(path), path.parent_path());
    } catch (const toml::ParseError& e) {
        throw UsageError(e.what());
    } catch (const std::runtime_error& e) {
        if (dynamic_cast<const UsageError*>(&e)) {
            throw;
        }
        throw UsageError(e.what());
    }
}

/// Hooks for tests and embedding: where requests go and how retries wait.
struct Environment {
    std::function<std::unique_ptr<Transport>(const EndpointConfig&)> transport = [](const EndpointConfig& e) {
        return std::make_unique<HttpTransport>(e.base_url);
    };
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
};

namespace detail {

/// Flag values shared by run, score and validate. Unset flags leave the
/// config untouched.
struct Overrides {
    std::string config;
    std::vector<std::string> benchmarks;
    std::string language;
    std::string data;
    std::optional<std::size_t> expected_count;
    std::string endpoint_url;
    std::string model;
    std::string model_label;
    std::string run_id;
    std::string api_key_env;
    std::string api_flavor;
    std::string template_kind;
    std::optional<int> shots;
    std::string templates_dir;
    std::string shots_file;
    bool verbatim_instruction = false;
    std::string extraction;
    std::optional<int> max_new_tokens;
    std::optional<int> max_in_flight;
    std::optional<int> max_retries;
    std::optional<double> timeout_s;
    std::optional<std::int64_t> seed;
    std::string cache_dir;
    std::string out;
};

inline void add_selection_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "TOML run config");
    cmd->add_option("--benchmark", o.benchmarks, "benchmark id (repeatable; filters the config)");
    cmd->add_option("--language", o.language, "en or ja");
    cmd->add_option("--data", o.data, "dataset file, replacing the config's benchmark list");
    cmd->add_option("--expected-count", o.expected_count, "record count expected in --data");
}

inline void add_run_flags(CLI::App* cmd, Overrides& o) {
    add_selection_flags(cmd, o);
    cmd->add_option("--endpoint-url", o.endpoint_url, "OpenAI-compatible base URL");
    cmd->add_option("--model", o.model, "model name sent to the endpoint");
    cmd->add_option("--model-label", o.model_label, "row label in reports");
    cmd->add_option("--run-id", o.run_id, "output directory name (default: model label)");
    cmd->add_option("--api-key-env", o.api_key_env, "environment variable holding the API key");
    cmd->add_option("--api-flavor", o.api_flavor, "completions or chat");
    cmd->add_option("--template", o.template_kind, "cot or alpaca");
    cmd->add_option("--shots", o.shots, "number of worked exemplars");
    cmd->add_option("--templates-dir", o.templates_dir, "directory with <kind>.<lang>.txt overrides");
    cmd->add_option("--shots-file", o.shots_file, "dataset file supplying exemplars");
    cmd->add_flag("--verbatim-instruction", o.verbatim_instruction, "keep the template's choice-count wording");
    cmd->add_option("--extraction", o.extraction, "last-line or full");
    cmd->add_option("--max-new-tokens", o.max_new_tokens, "generation length cap");
    cmd->add_option("--max-in-flight", o.max_in_flight, "concurrent requests");
    cmd->add_option("--max-retries", o.max_retries, "retries per request");
    cmd->add_option("--timeout", o.timeout_s, "per-request timeout in seconds");
    cmd->add_option("--seed", o.seed, "seed forwarded to the endpoint");
    cmd->add_option("--cache-dir", o.cache_dir, "response cache directory");
    cmd->add_option("--out", o.out, "output root");
}

inline RunConfig build_config(const Overrides& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    try {
        if (!o.data.empty()) {
            if (o.benchmarks.size() != 1 || o.language.empty()) {
                throw UsageError("--data needs exactly one --benchmark and a --language");
            }
            BenchmarkEntry e;
            e.id = o.benchmarks.front();
            e.language = parse_language(o.language);
            e.paths = {o.data};
            e.expected_count = o.expected_count;
            c.benchmarks = {e};
        } else {
            if (!o.benchmarks.empty()) {
                std::erase_if(c.benchmarks, [&](const BenchmarkEntry& e) {
                    return std::find(o.benchmarks.begin(), o.benchmarks.end(), e.id) == o.benchmarks.end();
                });
            }
            if (!o.language.empty()) {
                const Language lang = parse_language(o.language);
                std::erase_if(c.benchmarks, [&](const BenchmarkEntry& e) { return e.language != lang; });
            }
        }
        if (!o.endpoint_url.empty()) {
            c.endpoint.base_url = o.endpoint_url;
        }
        if (!o.model.empty()) {
            c.endpoint.model = o.model;
        }
        if (!o.model_label.empty()) {
            c.model_label = o.model_label;
        }
        if (!o.run_id.empty()) {
            c.run_id = o.run_id;
        }
        if (!o.api_key_env.empty()) {
            c.endpoint.api_key_env = o.api_key_env;
        }
        if (!o.api_flavor.empty()) {
            c.endpoint.api_flavor = parse_api_flavor(o.api_flavor);
        }
        if (!o.template_kind.empty()) {
            c.template_kind = parse_template_kind(o.template_kind);
        }
        if (o.shots) {
            c.shots = *o.shots;
        }
        if (!o.templates_dir.empty()) {
            c.templates_dir = o.templates_dir;
        }
        if (!o.shots_file.empty()) {
            c.shots_file = o.shots_file;
        }
        if (o.verbatim_instruction) {
            c.verbatim_instruction = true;
        }
        if (!o.extraction.empty()) {
            c.extraction = parse_extraction_policy(o.extraction);
        }
        if (o.max_new_tokens) {
            c.params.max_new_tokens = *o.max_new_tokens;
        }
        if (o.max_in_flight) {
            c.endpoint.max_in_flight = *o.max_in_flight;
        }
        if (o.max_retries) {
            c.endpoint.max_retries = *o.max_retries;
        }
        if (o.timeout_s) {
            c.endpoint.timeout_s = *o.timeout_s;
        }
        if (o.seed) {
            c.params.seed = *o.seed;
        }
        if (!o.cache_dir.empty()) {
            c.cache_dir = o.cache_dir;
        }
        if (!o.out.empty()) {
            c.output_dir = o.out;
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (c.shots < 0) {
        throw UsageError("--shots must be non-negative");
    }
    return c;
}

/// Serializes warning lines from worker threads onto one stream.
inline WarningSink stream_warnings(std::ostream& err) {
    auto mu = std::make_shared<std::mutex>();
    return [mu, &err](const std::string& msg) {
        std::lock_guard lock(*mu);
        err << "warning: " << msg << '\n';
    };
}

inline std::string response_key(const std::string& benchmark, Language lang, const std::string& id) {
    return benchmark + '\x1f' + std::string(to_string(lang)) + '\x1f' + id;
}

inline bool judgment_order(const ItemJudgment& a, const ItemJudgment& b) {
    return std::tie(a.benchmark, a.language, a.item_id) < std::tie(b.benchmark, b.language, b.item_id);
}

inline std::vector<ModelResponse> read_responses(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot read " + path.string());
    }
    std::vector<ModelResponse> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        try {
            out.push_back(response_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<ItemJudgment> read_judgments(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot read " + path.string());
    }
    std::vector<ItemJudgment> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim_ascii(line).empty()) {
            continue;
        }
        try {
            out.push_back(judgment_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw UsageError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

inline nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot read " + path.string());
    }
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

inline nlohmann::ordered_json benchmark_json(const BenchmarkEntry& e, std::size_t records) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["language"] = to_string(e.language);
    nlohmann::ordered_json paths = nlohmann::ordered_json::array();
    nlohmann::ordered_json digests = nlohmann::ordered_json::array();
    for (const auto& p : e.paths) {
        paths.push_back(std::filesystem::absolute(p).lexically_normal().string());
        digests.push_back(sha256_file(p));
    }
    j["paths"] = paths;
    j["sha256"] = digests;
    j["expected_count"] = e.expected_count ? nlohmann::ordered_json(*e.expected_count) : nlohmann::ordered_json();
    nlohmann::ordered_json subjects = nlohmann::ordered_json::object();
    for (const auto& [s, n] : e.subjects) {
        subjects[s] = n;
    }
    j["subjects"] = subjects;
    j["records"] = records;
    return j;
}

inline BenchmarkEntry benchmark_from_manifest(const nlohmann::ordered_json& j) {
    BenchmarkEntry e;
    e.id = j.at("id").get<std::string>();
    e.language = parse_language(j.at("language").get<std::string>());
    for (const auto& p : j.at("paths")) {
        e.paths.emplace_back(p.get<std::string>());
    }
    if (j.contains("expected_count") && !j["expected_count"].is_null()) {
        e.expected_count = j["expected_count"].get<std::size_t>();
    }
    if (j.contains("subjects")) {
        for (auto it = j["subjects"].begin(); it != j["subjects"].end(); ++it) {
            e.subjects.emplace_back(it.key(), it.value().get<std::size_t>());
        }
    }
    return e;
}

struct BenchmarkScore {
    std::string benchmark;
    Language language = Language::en;
    std::vector<ItemJudgment> judgments;
};

/// Per-benchmark accuracies under both metrics, with a per-subject breakdown
/// when items carry subject tags.
inline nlohmann::ordered_json scores_json(const std::string& run_id, const std::string& model_label,
                                          ExtractionPolicy extraction, const std::vector<BenchmarkScore>& scores) {
    nlohmann::ordered_json doc;
    doc["run_id"] = run_id;
    doc["model_label"] = model_label;
    doc["extraction"] = to_string(extraction);
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& s : scores) {
        nlohmann::ordered_json b;
        b["benchmark"] = s.benchmark;
        b["language"] = to_string(s.language);
        b["items"] = s.judgments.size();
        if (!s.judgments.empty()) {
            const double g = accuracy(s.judgments, Metric::gestalt);
            const double x = accuracy(s.judgments, Metric::exact);
            b["gestalt"] = g;
            b["exact"] = x;
            b["gestalt_rendered"] = format_one_decimal(g);
            b["exact_rendered"] = format_one_decimal(x);
        }
        std::map<std::string, std::vector<ItemJudgment>> by_subject;
        for (const auto& j : s.judgments) {
            if (j.subject) {
                by_subject[*j.subject].push_back(j);
            }
        }
        if (!by_subject.empty()) {
            nlohmann::ordered_json subj;
            for (const auto& [name, js] : by_subject) {
                subj[name] = {{"items", js.size()},
                              {"gestalt", accuracy(js, Metric::gestalt)},
                              {"exact", accuracy(js, Metric::exact)}};
            }
            b["subjects"] = subj;
        }
        list.push_back(b);
    }
    doc["benchmarks"] = list;
    return doc;
}

inline void write_judgments(const std::filesystem::path& dir, std::vector<ItemJudgment> judgments) {
    std::sort(judgments.begin(), judgments.end(), judgment_order);
    std::vector<nlohmann::ordered_json> lines;
    lines.reserve(judgments.size());
    for (const auto& j : judgments) {
        lines.push_back(to_json(j));
    }
    write_jsonl(dir / "judgments.jsonl", lines);
}

/// Pairs every record with its response and judges it. Ids without a
/// response are returned instead of judged.
inline std::vector<std::string> judge_all(const std::vector<QaRecord>& records,
                                          const std::map<std::string, const ModelResponse*>& responses,
                                          ExtractionPolicy policy, std::vector<ItemJudgment>& out) {
    std::vector<std::string> missing;
    for (const auto& r : records) {
        const auto it = responses.find(response_key(r.benchmark, r.language, r.id));
        if (it == responses.end()) {
            missing.push_back(r.benchmark + "/" + r.id);
            continue;
        }
        out.push_back(judge(r, *it->second, policy));
    }
    return missing;
}

inline ShotSpec load_shots(const RunConfig& c, Language lang) {
    if (c.shots == 0) {
        return {};
    }
    std::vector<QaRecord> pool;
    if (c.shots_file) {
        for (auto& r : read_dataset_file(*c.shots_file).records) {
            if (r.language == lang) {
                pool.push_back(std::move(r));
            }
        }
    } else if (lang == Language::en) {
        pool = builtin_exemplars_en();
    }
    if (pool.empty()) {
        throw PromptError(PromptError::Kind::UnsupportedShotLanguage,
                          "no " + std::string(to_string(lang)) + " exemplars available; pass --shots-file");
    }
    try {
        return ShotSpec::from_records(pool, static_cast<std::size_t>(c.shots));
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Checks every configured dataset. Exit 0 iff no violations.
inline int cmd_validate(const RunConfig& c, std::ostream& out, std::ostream& /*err*/) {
    if (c.benchmarks.empty()) {
        throw UsageError("nothing to validate: no benchmarks configured");
    }
    std::size_t findings = 0;
    for (const auto& b : c.benchmarks) {
        std::vector<QaRecord> records;
        std::vector<std::string> problems;
        for (const auto& p : b.paths) {
            DatasetFile file;
            try {
                file = read_dataset_file(p);
            } catch (const DatasetError& e) {
                throw UsageError(e.what());
            }
            for (const auto& [line, field] : file.unknown_fields) {
                problems.push_back(p.string() + ":" + std::to_string(line) + ": unknown field \"" + field + "\"");
            }
            for (auto& r : file.records) {
                records.push_back(std::move(r));
            }
        }
        for (const auto& r : records) {
            if (r.benchmark != b.id) {
                problems.push_back(r.id + ": benchmark \"" + r.benchmark + "\" does not match \"" + b.id + "\"");
            }
            if (r.language != b.language) {
                problems.push_back(r.id + ": language does not match");
            }
        }
        for (const auto& v : validate_dataset(records)) {
            problems.push_back(v.record_id + ": " + v.reason);
        }
        if (b.expected_count && *b.expected_count != records.size()) {
            problems.push_back("expected " + std::to_string(*b.expected_count) + " records, found " +
                               std::to_string(records.size()));
        }
        if (!b.subjects.empty()) {
            std::map<std::string, std::size_t> counts;
            for (const auto& r : records) {
                ++counts[r.subject.value_or(std::string(kUnspecifiedSubject))];
            }
            for (const auto& [subject, expected] : b.subjects) {
                const std::size_t actual = counts.contains(subject) ? counts[subject] : 0;
                if (actual != expected) {
                    problems.push_back("subject " + subject + ": expected " + std::to_string(expected) +
                                       " records, found " + std::to_string(actual));
                }
                counts.erase(subject);
            }
            for (const auto& [subject, n] : counts) {
                problems.push_back("subject " + subject + ": " + std::to_string(n) + " records not in manifest");
            }
        }
        if (problems.empty()) {
            out << b.name() << ": " << records.size() << " records OK\n";
        } else {
            for (const auto& p : problems) {
                out << b.name() << ": " << p << '\n';
            }
        }
        findings += problems.size();
    }
    return findings == 0 ? kExitOk : kExitFindings;
}

/// Loads, renders, generates and judges every configured benchmark, then
/// writes <out>/<run-id>/{run.json, responses.jsonl, timings.jsonl,
/// judgments.jsonl, scores.json}.
inline int cmd_run(const RunConfig& c, std::ostream& out, std::ostream& err, const Environment& env = {}) {
    if (c.benchmarks.empty()) {
        throw UsageError("nothing to run: no benchmarks configured");
    }
    if (c.endpoint.model.empty()) {
        throw UsageError("no model configured (--model or [endpoint].model)");
    }
    try {
        c.endpoint.validate();
        c.params.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    try {
        auth_headers(c.endpoint);
    } catch (const InferenceError& e) {
        throw UsageError(e.what());
    }

    const std::string run_id = c.resolved_run_id();
    const auto run_dir = c.output_dir / run_id;
    const TemplateSet templates = c.templates_dir ? TemplateSet::load(*c.templates_dir) : TemplateSet::builtin();
    const ResponseCache cache(c.resolved_cache_dir());
    auto transport = env.transport(c.endpoint);

    RunOptions run_opts;
    run_opts.call.sleep = env.sleep;
    run_opts.call.warn = detail::stream_warnings(err);

    std::vector<ModelResponse> responses;
    std::vector<ItemJudgment> judgments;
    std::vector<detail::BenchmarkScore> scores;
    std::vector<ItemFailure> failures;
    nlohmann::ordered_json bench_manifest = nlohmann::ordered_json::array();
    nlohmann::ordered_json template_digests = nlohmann::ordered_json::object();
    nlohmann::ordered_json exemplar_ids = nlohmann::ordered_json::object();
    bool aborted = false;

    for (const auto& b : c.benchmarks) {
        std::vector<QaRecord> records;
        try {
            records = load_benchmark(b.manifest(), run_opts.call.warn);
        } catch (const DatasetError& e) {
            throw UsageError(e.what());
        }
        bench_manifest.push_back(detail::benchmark_json(b, records.size()));

        TemplateConfig tmpl;
        tmpl.kind = c.template_kind;
        tmpl.shots = detail::load_shots(c, b.language);
        tmpl.render.templates = &templates;
        tmpl.render.verbatim_instruction = c.verbatim_instruction;
        const std::string lang(to_string(b.language));
        template_digests[lang] = sha256_hex(templates.get(c.template_kind, b.language));
        nlohmann::ordered_json ids = nlohmann::ordered_json::array();
        for (const auto& ex : tmpl.shots.exemplars) {
            ids.push_back(ex.record.id);
        }
        exemplar_ids[lang] = ids;

        out << "running " << b.name() << ": " << records.size() << " items\n";
        RunOutcome outcome = run_eval(records, tmpl, c.params, c.endpoint, cache, *transport, run_opts);
        std::map<std::string, const ModelResponse*> by_key;
        for (const auto& r : outcome.responses) {
            by_key[detail::response_key(r.benchmark, r.language, r.item_id)] = &r;
        }
        detail::BenchmarkScore score{b.id, b.language, {}};
        detail::judge_all(records, by_key, c.extraction, score.judgments);
        judgments.insert(judgments.end(), score.judgments.begin(), score.judgments.end());
        scores.push_back(std::move(score));
        for (auto& r : outcome.responses) {
            responses.push_back(std::move(r));
        }
        for (auto& f : outcome.failures) {
            failures.push_back(std::move(f));
        }
        if (outcome.aborted) {
            aborted = true;
            break;
        }
    }

    std::sort(responses.begin(), responses.end(), response_order);
    nlohmann::ordered_json manifest;
    manifest["run_id"] = run_id;
    manifest["model_label"] = c.label();
    manifest["endpoint"] = to_manifest_json(c.endpoint);
    manifest["template"] = {{"kind", to_string(c.template_kind)},
                            {"shots", c.shots},
                            {"verbatim_instruction", c.verbatim_instruction},
                            {"sha256", template_digests},
                            {"exemplars", exemplar_ids}};
    manifest["extraction"] = to_string(c.extraction);
    manifest["params"] = to_json(c.params);
    manifest["benchmarks"] = bench_manifest;
    nlohmann::ordered_json failed = nlohmann::ordered_json::array();
    for (const auto& f : failures) {
        failed.push_back(f.item_id);
    }
    manifest["complete"] = failures.empty() && !aborted;
    manifest["failed_items"] = failed;

    persist_responses(run_dir, responses, manifest);
    detail::write_judgments(run_dir, judgments);
    write_json(run_dir / "scores.json", detail::scores_json(run_id, c.label(), c.extraction, scores));

    for (const auto& s : scores) {
        if (!s.judgments.empty()) {
            out << s.benchmark << " (" << to_string(s.language) << "): gestalt "
                << format_one_decimal(accuracy(s.judgments, Metric::gestalt)) << ", exact "
                << format_one_decimal(accuracy(s.judgments, Metric::exact)) << " over " << s.judgments.size()
                << " items\n";
        }
    }
    out << "wrote " << run_dir.string() << '\n';
    if (aborted || !failures.empty()) {
        err << "error: " << failures.size() << " item(s) failed"
            << (aborted ? "; run aborted after consecutive endpoint failures" : "")
            << ". Rerun to resume from cache.\n";
        return kExitEndpoint;
    }
    return kExitOk;
}

struct ScoreOptions {
    std::filesystem::path run_dir;
    std::optional<std::filesystem::path> out_dir;  // default: run_dir
    std::optional<ExtractionPolicy> extraction;    // default: the run's policy
    std::optional<RunConfig> config;               // default: datasets named in run.json
};

/// Re-judges stored responses without touching the network.
inline int cmd_score(const ScoreOptions& opt, std::ostream& out, std::ostream& err) {
    const auto manifest = detail::read_json_file(opt.run_dir / "run.json");
    const auto responses = detail::read_responses(opt.run_dir / "responses.jsonl");

    std::vector<BenchmarkEntry> benchmarks;
    if (opt.config && !opt.config->benchmarks.empty()) {
        benchmarks = opt.config->benchmarks;
    } else {
        try {
            for (const auto& b : manifest.at("benchmarks")) {
                benchmarks.push_back(detail::benchmark_from_manifest(b));
            }
        } catch (const std::exception& e) {
            throw UsageError("run.json: " + std::string(e.what()));
        }
    }
    ExtractionPolicy policy = ExtractionPolicy::last_line;
    try {
        policy = opt.extraction.value_or(parse_extraction_policy(manifest.value("extraction", "last-line")));
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    std::map<std::string, const ModelResponse*> by_key;
    for (const auto& r : responses) {
        by_key[detail::response_key(r.benchmark, r.language, r.item_id)] = &r;
    }
    std::vector<ItemJudgment> judgments;
    std::vector<detail::BenchmarkScore> scores;
    std::vector<std::string> missing;
    for (const auto& b : benchmarks) {
        std::vector<QaRecord> records;
        try {
            records = load_benchmark(b.manifest());
        } catch (const DatasetError& e) {
            throw UsageError(e.what());
        }
        detail::BenchmarkScore score{b.id, b.language, {}};
        auto m = detail::judge_all(records, by_key, policy, score.judgments);
        missing.insert(missing.end(), m.begin(), m.end());
        judgments.insert(judgments.end(), score.judgments.begin(), score.judgments.end());
        scores.push_back(std::move(score));
    }
    if (!missing.empty()) {
        for (const auto& id : missing) {
            err << "missing response: " << id << '\n';
        }
        return kExitFindings;
    }
    const auto dest = opt.out_dir.value_or(opt.run_dir);
    std::filesystem::create_directories(dest);
    detail::write_judgments(dest, judgments);
    write_json(dest / "scores.json", detail::scores_json(manifest.value("run_id", ""),
                                                         manifest.value("model_label", ""), policy, scores));
    out << "scored " << judgments.size() << " items into " << (dest / "judgments.jsonl").string() << '\n';
    return kExitOk;
}

enum class ReportMode { scores, delta };

struct ReportOptions {
    std::vector<std::filesystem::path> run_dirs;
    Metric metric = Metric::gestalt;
    TableFormat format = TableFormat::markdown;
    ReportMode mode = ReportMode::scores;
    std::size_t bold_top = 0;
    std::vector<std::string> column_order;
    std::optional<std::string> by_subject;  // benchmark id to break down by subject
    std::optional<std::filesystem::path> out_file;
};

/// Turns run directories into RunResults, one per benchmark and language.
/// Benchmarks that appear in more than one language get "<id>_<lang>"
/// column labels so the cells stay distinct.
inline std::vector<RunResult> load_runs(const std::vector<std::filesystem::path>& dirs, std::ostream& err) {
    std::vector<RunResult> runs;
    std::map<std::string, std::set<Language>> languages;
    for (const auto& dir : dirs) {
        const auto manifest = detail::read_json_file(dir / "run.json");
        if (!manifest.value("complete", true)) {
            err << "warning: run " << dir.string() << " is incomplete; its scores cover answered items only\n";
        }
        const auto judgments = detail::read_judgments(dir / "judgments.jsonl");
        std::map<std::pair<std::string, Language>, std::vector<ItemJudgment>> groups;
        for (const auto& j : judgments) {
            groups[{j.benchmark, j.language}].push_back(j);
        }
        for (auto& [key, js] : groups) {
            RunResult r;
            r.run_id = manifest.value("run_id", dir.filename().string());
            r.model_label = manifest.value("model_label", r.run_id);
            r.benchmark = key.first;
            r.language = key.second;
            r.judgments = std::move(js);
            r.manifest = (dir / "run.json").string();
            languages[r.benchmark].insert(r.language);
            runs.push_back(std::move(r));
        }
    }
    for (auto& r : runs) {
        if (languages[r.benchmark].size() > 1) {
            r.column = r.benchmark + "_" + std::string(to_string(r.language));
        }
    }
    return runs;
}

inline int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    if (opt.run_dirs.empty()) {
        throw UsageError("report needs at least one run directory");
    }
    if (opt.mode == ReportMode::delta && opt.run_dirs.size() != 2) {
        throw UsageError("delta mode needs exactly two run directories (base, tuned)");
    }
    std::string rendered;
    try {
        if (opt.mode == ReportMode::delta) {
            const auto base_runs = load_runs({opt.run_dirs[0]}, err);
            const auto tuned_runs = load_runs({opt.run_dirs[1]}, err);
            AggregateOptions agg{opt.metric, opt.column_order, {}, detail::stream_warnings(err)};
            const ScoreTable base = aggregate(base_runs, agg);
            const ScoreTable tuned = aggregate(tuned_runs, agg);
            if (base.rows.size() != 1 || tuned.rows.size() != 1) {
                throw UsageError("delta mode expects one model per run directory");
            }
            DeltaTable d;
            d.columns = base.columns;
            d.rows.push_back(diff(base, base.rows.front(), tuned, tuned.rows.front()));
            rendered = render(d, opt.format);
        } else {
            const auto runs = load_runs(opt.run_dirs, err);
            if (opt.by_subject) {
                const ScoreTable t = subject_table(runs, *opt.by_subject, opt.metric);
                rendered = render(t, opt.format, {opt.bold_top});
            } else {
                AggregateOptions agg{opt.metric, opt.column_order, {}, detail::stream_warnings(err)};
                rendered = render(aggregate(runs, agg), opt.format, {opt.bold_top});
            }
        }
    } catch (const ReportError& e) {
        throw UsageError(e.what());
    }
    if (opt.out_file) {
        std::ofstream f(*opt.out_file, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw UsageError("cannot write " + opt.out_file->string());
        }
        f << rendered;
    } else {
        out << rendered;
    }
    return kExitOk;
}

struct ConvertCommand {
    convert::ConvertOptions options;
    std::vector<std::filesystem::path> inputs;
    std::filesystem::path out_file;
    std::optional<std::filesystem::path> report_file;
};

inline int cmd_convert(const ConvertCommand& cmd, std::ostream& out) {
    convert::ConversionReport report;
    try {
        report = convert::convert_files(cmd.inputs, cmd.options);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    write_dataset_file(cmd.out_file, report.records);
    out << report.summary();
    if (cmd.report_file) {
        nlohmann::ordered_json j;
        j["converted"] = report.records.size();
        nlohmann::ordered_json ex = nlohmann::ordered_json::array();
        for (const auto& e : report.excluded) {
            ex.push_back({{"source", e.source}, {"reason", e.reason}});
        }
        j["excluded"] = ex;
        write_json(*cmd.report_file, j);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   const Environment& env = {}) {
    CLI::App app{"Multiple-choice medical QA evaluation harness", "medqa-eval"};
    app.require_subcommand(1);

    detail::Overrides run_o, validate_o, score_o;
    auto* validate = app.add_subcommand("validate", "check dataset files against the record schema");
    detail::add_selection_flags(validate, validate_o);

    auto* run = app.add_subcommand("run", "generate and judge responses for the configured benchmarks");
    detail::add_run_flags(run, run_o);

    std::string score_run_dir, score_out;
    auto* score = app.add_subcommand("score", "re-judge stored responses without network access");
    score->add_option("--run", score_run_dir, "run directory holding run.json and responses.jsonl")->required();
    score->add_option("--out", score_out, "write judgments here instead of the run directory");
    detail::add_selection_flags(score, score_o);
    score->add_option("--extraction", score_o.extraction, "last-line or full");

    std::vector<std::string> report_dirs, column_order;
    std::string metric = "gestalt", format = "markdown", mode = "scores", by_subject, report_out;
    std::size_t bold_top = 0;
    auto* report = app.add_subcommand("report", "render score or delta tables from run directories");
    report->add_option("runs", report_dirs, "run directories")->required();
    report->add_option("--metric", metric, "gestalt or exact");
    report->add_option("--format", format, "markdown, csv or json");
    report->add_option("--mode", mode, "scores or delta (base run first)");
    report->add_option("--bold-top", bold_top, "bold the top K cells per column (markdown)");
    report->add_option("--columns", column_order, "explicit column order")->delimiter(',');
    report->add_option("--by-subject", by_subject, "per-subject table for one benchmark");
    report->add_option("--out", report_out, "write the table to a file");

    ConvertCommand conv;
    std::string conv_format, conv_language = "en", conv_subject;
    auto* convert_cmd = app.add_subcommand("convert", "convert upstream benchmark files to the dataset format");
    convert_cmd->add_option("--format", conv_format, "igakuqa, medqa, medmcqa, mmlu or jmmlu")->required();
    convert_cmd->add_option("--language", conv_language, "en or ja");
    convert_cmd->add_option("--benchmark", conv.options.benchmark, "benchmark id (default: the format)");
    convert_cmd->add_option("--subject", conv_subject, "subject tag (mmlu; default: file name)");
    convert_cmd->add_option("--answer-base", conv.options.answer_base, "numbering of medmcqa answers");
    convert_cmd->add_option("--out", conv.out_file, "output dataset file")->required();
    convert_cmd->add_option("--report", conv.report_file, "write the exclusion list as JSON");
    convert_cmd->add_option("inputs", conv.inputs, "upstream files")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        const std::string help = app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help();
        err << help;
        return kExitUsage;
    }

    try {
        if (validate->parsed()) {
            return cmd_validate(detail::build_config(validate_o), out, err);
        }
        if (run->parsed()) {
            return cmd_run(detail::build_config(run_o), out, err, env);
        }
        if (score->parsed()) {
            ScoreOptions opt;
            opt.run_dir = score_run_dir;
            if (!score_out.empty()) {
                opt.out_dir = score_out;
            }
            if (!score_o.extraction.empty()) {
                opt.extraction = parse_extraction_policy(score_o.extraction);
            }
            if (!score_o.config.empty() || !score_o.data.empty()) {
                opt.config = detail::build_config(score_o);
            }
            return cmd_score(opt, out, err);
        }
        if (report->parsed()) {
            ReportOptions opt;
            for (const auto& d : report_dirs) {
                opt.run_dirs.emplace_back(d);
            }
            opt.metric = parse_metric(metric);
            opt.format = parse_table_format(format);
            if (mode != "scores" && mode != "delta") {
                throw UsageError("--mode must be scores or delta");
            }
            opt.mode = mode == "delta" ? ReportMode::delta : ReportMode::scores;
            opt.bold_top = bold_top;
            opt.column_order = column_order;
            if (!by_subject.empty()) {
                opt.by_subject = by_subject;
            }
            if (!report_out.empty()) {
                opt.out_file = report_out;
            }
            return cmd_report(opt, out, err);
        }
        if (convert_cmd->parsed()) {
            conv.options.format = convert::parse_source_format(conv_format);
            if (conv.options.benchmark.empty() && conv_format == "jmmlu") {
                conv.options.benchmark = "jmmlu";
            }
            conv.options.language = parse_language(conv_language);
            if (!conv_subject.empty()) {
                conv.options.subject = conv_subject;
            }
            return cmd_convert(conv, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const PromptError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace medqa::cli
