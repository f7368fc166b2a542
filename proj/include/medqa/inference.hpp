#pragma once

// Deterministic generation against OpenAI-compatible endpoints: request
// building, retry with backoff, a content-addressed response cache and a
// bounded-concurrency evaluation driver.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "medqa/dataset.hpp"
#include "medqa/digest.hpp"
#include "medqa/prompt.hpp"
#include "medqa/response.hpp"

namespace medqa {

struct GenerationParams {
    int max_new_tokens = 1024;
    double temperature = 0.0;
    bool sampling = false;
    int beams = 1;
    /// Overrides the prompt's stop sequences when set.
    std::optional<std::vector<std::string>> stop_sequences;
    std::optional<std::int64_t> seed;
    std::optional<double> repetition_penalty;

    void validate() const {
        if (max_new_tokens < 1) {
            throw std::invalid_argument("max_new_tokens must be >= 1");
        }
        if (temperature != 0.0 || sampling || beams != 1) {
            throw std::invalid_argument("generation must be deterministic: temperature 0, no sampling, one beam");
        }
    }
};

enum class ApiFlavor { completions, chat };

inline std::string_view to_string(ApiFlavor f) {
    return f == ApiFlavor::completions ? "completions" : "chat";
}

inline ApiFlavor parse_api_flavor(std::string_view s) {
    if (s == "completions") {
        return ApiFlavor::completions;
    }
    if (s == "chat") {
        return ApiFlavor::chat;
    }
    throw std::invalid_argument("unknown api flavor '" + std::string(s) + "' (expected completions or chat)");
}

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string model;
    std::string api_key_env;  // empty: unauthenticated endpoint
    double timeout_s = 600.0;
    int max_retries = 5;
    int max_in_flight = 4;
    ApiFlavor api_flavor = ApiFlavor::completions;
    std::string notes;  // free text, e.g. server-side quantization
    std::chrono::milliseconds backoff_base{1000};

    void validate() const {
        if (max_in_flight < 1) {
            throw std::invalid_argument("max_in_flight must be >= 1");
        }
        if (!(timeout_s > 0)) {
            throw std::invalid_argument("timeout must be > 0");
        }
        if (max_retries < 0) {
            throw std::invalid_argument("max_retries must be >= 0");
        }
    }
};

class InferenceError : public std::runtime_error {
public:
    enum class Kind { Unreachable, Unauthorized, RateLimited, BadRequest, Timeout, MalformedResponse };

    InferenceError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

    bool retryable() const {
        return kind_ == Kind::RateLimited || kind_ == Kind::Timeout || kind_ == Kind::Unreachable;
    }

private:
    Kind kind_;
};

inline std::string_view to_string(InferenceError::Kind k) {
    switch (k) {
        case InferenceError::Kind::Unreachable: return "Unreachable";
        case InferenceError::Kind::Unauthorized: return "Unauthorized";
        case InferenceError::Kind::RateLimited: return "RateLimited";
        case InferenceError::Kind::BadRequest: return "BadRequest";
        case InferenceError::Kind::Timeout: return "Timeout";
        case InferenceError::Kind::MalformedResponse: return "MalformedResponse";
    }
    return "Unknown";
}

inline WarningSink stderr_warnings() {
    return [](const std::string& msg) {
        static std::mutex mu;
        std::lock_guard lock(mu);
        std::cerr << "warning: " << msg << '\n';
    };
}

// ---------------------------------------------------------------------------
// Transport

struct HttpReply {
    int status = 0;
    std::string body;
};

using HeaderList = std::vector<std::pair<std::string, std::string>>;

/// One JSON POST. Implementations throw InferenceError for transport-level
/// failures (Unreachable, Timeout) and return HTTP statuses as-is.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpReply post(const std::string& path, const std::string& body, const HeaderList& headers,
                           std::chrono::milliseconds timeout) = 0;
};

class HttpTransport : public Transport {
public:
    explicit HttpTransport(std::string base_url) {
        // scheme://host[:port][/prefix]
        const std::size_t scheme_end = base_url.find("://");
        const std::size_t path_start =
            base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        if (path_start == std::string::npos) {
            origin_ = base_url;
        } else {
            origin_ = base_url.substr(0, path_start);
            prefix_ = base_url.substr(path_start);
            while (!prefix_.empty() && prefix_.back() == '/') {
                prefix_.pop_back();
            }
        }
    }

    HttpReply post(const std::string& path, const std::string& body, const HeaderList& headers,
                   std::chrono::milliseconds timeout) override {
        httplib::Client client(origin_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers h;
        for (const auto& [k, v] : headers) {
            h.emplace(k, v);
        }
        auto res = client.Post(prefix_ + path, h, body, "application/json");
        if (!res) {
            const auto err = res.error();
            const std::string what = origin_ + prefix_ + path + ": " + httplib::to_string(err);
            if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
                throw InferenceError(InferenceError::Kind::Timeout, what);
            }
            throw InferenceError(InferenceError::Kind::Unreachable, what);
        }
        return {res->status, res->body};
    }

private:
    std::string origin_;
    std::string prefix_;
};

// ---------------------------------------------------------------------------
// Request / response mapping

inline std::vector<std::string> effective_stops(const RenderedPrompt& prompt, const GenerationParams& params) {
    return params.stop_sequences ? *params.stop_sequences : prompt.stop_sequences;
}

/// Digest of (model, template kind, shots, params, prompt text).
inline std::string prompt_hash(const RenderedPrompt& prompt, const GenerationParams& params,
                               const EndpointConfig& endpoint) {
    nlohmann::json p;
    p["max_new_tokens"] = params.max_new_tokens;
    p["temperature"] = params.temperature;
    p["sampling"] = params.sampling;
    p["beams"] = params.beams;
    p["stop"] = effective_stops(prompt, params);
    p["seed"] = params.seed ? nlohmann::json(*params.seed) : nlohmann::json(nullptr);
    p["repetition_penalty"] =
        params.repetition_penalty ? nlohmann::json(*params.repetition_penalty) : nlohmann::json(nullptr);
    nlohmann::json key;  // std::map-backed: keys serialize sorted
    key["model"] = endpoint.model;
    key["template"] = to_string(prompt.kind);
    key["shots"] = prompt.shots;
    key["params"] = std::move(p);
    key["prompt"] = prompt.text;
    return sha256_hex(key.dump());
}

inline std::string request_path(ApiFlavor flavor) {
    return flavor == ApiFlavor::completions ? "/v1/completions" : "/v1/chat/completions";
}

inline nlohmann::ordered_json request_body(const RenderedPrompt& prompt, const GenerationParams& params,
                                           const EndpointConfig& endpoint) {
    nlohmann::ordered_json body;
    body["model"] = endpoint.model;
    if (endpoint.api_flavor == ApiFlavor::completions) {
        body["prompt"] = prompt.text;
    } else {
        body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt.text}}});
    }
    body["max_tokens"] = params.max_new_tokens;
    body["temperature"] = 0;
    body["stop"] = effective_stops(prompt, params);
    if (params.seed) {
        body["seed"] = *params.seed;
    }
    if (params.repetition_penalty) {
        body["repetition_penalty"] = *params.repetition_penalty;
    }
    return body;
}

/// Cuts the text at the earliest stop sequence and drops trailing whitespace.
inline std::string strip_generation(std::string_view text, const std::vector<std::string>& stops) {
    std::size_t cut = text.size();
    for (const auto& s : stops) {
        if (s.empty()) {
            continue;
        }
        if (auto pos = text.find(s); pos != std::string_view::npos) {
            cut = std::min(cut, pos);
        }
    }
    std::u32string u = text::to_u32(text.substr(0, cut));
    while (!u.empty() && text::detail::is_space(u.back())) {
        u.pop_back();
    }
    return text::to_utf8(u);
}

struct ParsedCompletion {
    std::string text;
    std::string finish_reason;
};

inline ParsedCompletion parse_completion(const std::string& body, ApiFlavor flavor) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw InferenceError(InferenceError::Kind::MalformedResponse, std::string("response is not JSON: ") + e.what());
    }
    try {
        const auto& choice = j.at("choices").at(0);
        ParsedCompletion out;
        out.text = flavor == ApiFlavor::completions ? choice.at("text").get<std::string>()
                                                    : choice.at("message").at("content").get<std::string>();
        if (auto it = choice.find("finish_reason"); it != choice.end() && it->is_string()) {
            out.finish_reason = it->get<std::string>();
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw InferenceError(InferenceError::Kind::MalformedResponse,
                             std::string("unexpected response shape: ") + e.what());
    }
}

inline void raise_for_status(const HttpReply& reply) {
    if (reply.status >= 200 && reply.status < 300) {
        return;
    }
    const std::string what = "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 300);
    switch (reply.status) {
        case 401:
        case 403: throw InferenceError(InferenceError::Kind::Unauthorized, what);
        case 408: throw InferenceError(InferenceError::Kind::Timeout, what);
        case 429: throw InferenceError(InferenceError::Kind::RateLimited, what);
        default: break;
    }
    if (reply.status >= 500) {
        throw InferenceError(InferenceError::Kind::Unreachable, what);
    }
    throw InferenceError(InferenceError::Kind::BadRequest, what);
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Hooks that tests replace: sleeping between retries and warnings.
struct CallContext {
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
    WarningSink warn = stderr_warnings();
};

inline std::chrono::milliseconds backoff_delay(const EndpointConfig& endpoint, int attempt) {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    const double base = static_cast<double>(endpoint.backoff_base.count()) * std::pow(2.0, attempt);
    std::uniform_real_distribution<double> jitter(0.0, 0.25);
    return std::chrono::milliseconds(static_cast<std::int64_t>(base * (1.0 + jitter(rng))));
}

inline HeaderList auth_headers(const EndpointConfig& endpoint) {
    HeaderList headers;
    if (endpoint.api_key_env.empty()) {
        return headers;
    }
    const char* key = std::getenv(endpoint.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw InferenceError(InferenceError::Kind::Unauthorized,
                             "credential variable " + endpoint.api_key_env + " is not set");
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
    return headers;
}

/// One generation with retries on transient failures (exponential backoff,
/// factor 2, jittered).
inline ModelResponse complete(const RenderedPrompt& prompt, const GenerationParams& params,
                              const EndpointConfig& endpoint, Transport& transport,
                              const CallContext& ctx = {}) {
    params.validate();
    const HeaderList headers = auth_headers(endpoint);
    const std::string body = request_body(prompt, params, endpoint).dump();
    const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(endpoint.timeout_s * 1000.0));
    const auto stops = effective_stops(prompt, params);

    for (int attempt = 0;; ++attempt) {
        const auto started = std::chrono::steady_clock::now();
        try {
            const HttpReply reply = transport.post(request_path(endpoint.api_flavor), body, headers, timeout);
            raise_for_status(reply);
            ParsedCompletion parsed = parse_completion(reply.body, endpoint.api_flavor);
            ModelResponse r;
            r.item_id = prompt.item_id;
            r.benchmark = prompt.benchmark;
            r.language = prompt.language;
            r.text = strip_generation(parsed.text, stops);
            r.finish_reason = std::move(parsed.finish_reason);
            r.prompt_hash = prompt_hash(prompt, params, endpoint);
            r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - started)
                               .count();
            r.created_at = utc_timestamp();
            r.retry_count = attempt;
            return r;
        } catch (const InferenceError& e) {
            if (!e.retryable() || attempt >= endpoint.max_retries) {
                throw;
            }
            const auto delay = backoff_delay(endpoint, attempt);
            ctx.warn(prompt.item_id + ": " + std::string(to_string(e.kind())) + " (" + e.what() + "), retry " +
                     std::to_string(attempt + 1) + "/" + std::to_string(endpoint.max_retries) + " in " +
                     std::to_string(delay.count()) + " ms");
            ctx.sleep(delay);
        }
    }
}

// ---------------------------------------------------------------------------
// Cache

/// Content-addressed store: <dir>/<first two hex chars>/<key>.json. Inserts
/// go through a temporary file and a rename, so readers never observe a
/// partial entry.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path path_for(const std::string& key) const {
        return dir_ / key.substr(0, 2) / (key + ".json");
    }

    /// nullopt on a miss; a corrupt entry counts as a miss and is reported.
    std::optional<ModelResponse> get(const std::string& key, const WarningSink& warn) const {
        const auto path = path_for(key);
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            return std::nullopt;
        }
        try {
            const auto j = nlohmann::json::parse(in);
            ModelResponse r = response_from_json(j);
            if (r.prompt_hash != key) {
                throw std::runtime_error("key mismatch");
            }
            return r;
        } catch (const std::exception& e) {
            warn("cache entry " + key + " is corrupt (" + e.what() + "); regenerating");
            return std::nullopt;
        }
    }

    void put(const ModelResponse& r) const {
        const auto path = path_for(r.prompt_hash);
        std::filesystem::create_directories(path.parent_path());
        static std::atomic<std::uint64_t> counter{0};
        std::ostringstream tmp_name;
        tmp_name << r.prompt_hash << ".tmp." << std::this_thread::get_id() << "." << counter++;
        const auto tmp = path.parent_path() / tmp_name.str();
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) {
                throw std::runtime_error("cannot write cache entry " + tmp.string());
            }
            out << to_cache_json(r).dump() << '\n';
            if (!out.flush()) {
                throw std::runtime_error("cannot write cache entry " + tmp.string());
            }
        }
        std::filesystem::rename(tmp, path);
    }

    bool erase(const std::string& key) const { return std::filesystem::remove(path_for(key)); }

private:
    std::filesystem::path dir_;
};

/// complete() behind the cache. Hits never touch the transport.
inline ModelResponse cached_complete(const RenderedPrompt& prompt, const GenerationParams& params,
                                     const EndpointConfig& endpoint, const ResponseCache& cache,
                                     Transport& transport, const CallContext& ctx = {}) {
    const std::string key = prompt_hash(prompt, params, endpoint);
    if (auto hit = cache.get(key, ctx.warn)) {
        // Identical prompts can belong to different items.
        hit->item_id = prompt.item_id;
        hit->benchmark = prompt.benchmark;
        hit->language = prompt.language;
        return *hit;
    }
    ModelResponse r = complete(prompt, params, endpoint, transport, ctx);
    cache.put(r);
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation driver

struct TemplateConfig {
    TemplateKind kind = TemplateKind::cot;
    ShotSpec shots;
    RenderOptions render;
};

struct RunOptions {
    int abort_after_consecutive_failures = 10;
    CallContext call;
};

struct ItemFailure {
    std::string item_id;
    InferenceError::Kind kind;
    std::string message;
};

struct RunOutcome {
    std::vector<ModelResponse> responses;  // sorted by item id
    std::vector<ItemFailure> failures;     // sorted by item id
    bool aborted = false;

    bool complete() const { return !aborted && failures.empty(); }
};

inline bool response_order(const ModelResponse& a, const ModelResponse& b) {
    return std::tie(a.benchmark, a.language, a.item_id) < std::tie(b.benchmark, b.language, b.item_id);
}

/// Renders and generates every record with at most endpoint.max_in_flight
/// requests outstanding. Output order is by item id, independent of
/// completion order.
inline RunOutcome run_eval(const std::vector<QaRecord>& records, const TemplateConfig& tmpl,
                           const GenerationParams& params, const EndpointConfig& endpoint,
                           const ResponseCache& cache, Transport& transport, const RunOptions& options = {}) {
    params.validate();
    endpoint.validate();
    std::vector<RenderedPrompt> prompts;
    prompts.reserve(records.size());
    for (const auto& r : records) {
        prompts.push_back(render(r, tmpl.kind, tmpl.shots, r.language, tmpl.render));
    }

    std::vector<std::optional<ModelResponse>> results(prompts.size());
    std::vector<std::optional<ItemFailure>> failures(prompts.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> consecutive_failures{0};
    std::atomic<bool> abort{false};

    auto worker = [&] {
        for (;;) {
            if (abort.load()) {
                return;
            }
            const std::size_t i = next.fetch_add(1);
            if (i >= prompts.size()) {
                return;
            }
            try {
                results[i] = cached_complete(prompts[i], params, endpoint, cache, transport, options.call);
                consecutive_failures.store(0);
            } catch (const InferenceError& e) {
                failures[i] = ItemFailure{prompts[i].item_id, e.kind(), e.what()};
                options.call.warn(prompts[i].item_id + ": " + e.what());
                if (consecutive_failures.fetch_add(1) + 1 >= options.abort_after_consecutive_failures) {
                    abort.store(true);
                }
            }
        }
    };

    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(endpoint.max_in_flight), std::max<std::size_t>(prompts.size(), 1));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back(worker);
        }
    }

    RunOutcome out;
    out.aborted = abort.load();
    for (auto& r : results) {
        if (r) {
            out.responses.push_back(std::move(*r));
        }
    }
    for (auto& f : failures) {
        if (f) {
            out.failures.push_back(std::move(*f));
        }
    }
    std::sort(out.responses.begin(), out.responses.end(), response_order);
    std::sort(out.failures.begin(), out.failures.end(),
              [](const ItemFailure& a, const ItemFailure& b) { return a.item_id < b.item_id; });
    return out;
}

inline nlohmann::ordered_json to_json(const GenerationParams& p) {
    nlohmann::ordered_json j;
    j["max_new_tokens"] = p.max_new_tokens;
    j["temperature"] = p.temperature;
    j["sampling"] = p.sampling;
    j["beams"] = p.beams;
    j["stop_sequences"] = p.stop_sequences ? nlohmann::ordered_json(*p.stop_sequences) : nlohmann::ordered_json(nullptr);
    j["seed"] = p.seed ? nlohmann::ordered_json(*p.seed) : nlohmann::ordered_json(nullptr);
    j["repetition_penalty"] =
        p.repetition_penalty ? nlohmann::ordered_json(*p.repetition_penalty) : nlohmann::ordered_json(nullptr);
    return j;
}

/// Endpoint identity for the run manifest. The credential value is never
/// recorded, only the variable name; concurrency and timeouts are execution
/// details and stay out so manifests compare equal across them.
inline nlohmann::ordered_json to_manifest_json(const EndpointConfig& e) {
    nlohmann::ordered_json j;
    j["base_url"] = e.base_url;
    j["model"] = e.model;
    j["api_flavor"] = to_string(e.api_flavor);
    j["api_key_env"] = e.api_key_env;
    j["endpoint_notes"] = e.notes;
    return j;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::ordered_json>& lines) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp);
        }
        for (const auto& l : lines) {
            out << l.dump() << '\n';
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp);
        }
        out << doc.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

/// Writes responses.jsonl (deterministic fields), timings.jsonl and run.json.
inline void persist_responses(const std::filesystem::path& dir, const std::vector<ModelResponse>& responses,
                              const nlohmann::ordered_json& manifest) {
    std::filesystem::create_directories(dir);
    std::vector<nlohmann::ordered_json> lines;
    std::vector<nlohmann::ordered_json> timings;
    for (const auto& r : responses) {
        lines.push_back(to_json(r));
        timings.push_back(timing_json(r));
    }
    write_jsonl(dir / "responses.jsonl", lines);
    write_jsonl(dir / "timings.jsonl", timings);
    write_json(dir / "run.json", manifest);
}

}  // namespace medqa
