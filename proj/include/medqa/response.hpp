#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "medqa/text.hpp"

namespace medqa {

/// Endpoint output for one item. The deterministic fields go to
/// responses.jsonl; timing and retry bookkeeping live beside them so reruns
/// produce identical bytes.
struct ModelResponse {
    std::string item_id;
    std::string benchmark;
    Language language = Language::en;
    std::string text;
    std::string finish_reason;
    std::string prompt_hash;
    std::int64_t latency_ms = 0;
    std::string created_at;  // RFC 3339, UTC
    int retry_count = 0;

    friend bool operator==(const ModelResponse&, const ModelResponse&) = default;
};

/// Deterministic projection, one responses.jsonl line.
inline nlohmann::ordered_json to_json(const ModelResponse& r) {
    nlohmann::ordered_json j;
    j["item_id"] = r.item_id;
    j["benchmark"] = r.benchmark;
    j["language"] = to_string(r.language);
    j["text"] = r.text;
    j["finish_reason"] = r.finish_reason;
    j["prompt_hash"] = r.prompt_hash;
    return j;
}

inline nlohmann::ordered_json timing_json(const ModelResponse& r) {
    nlohmann::ordered_json j;
    j["item_id"] = r.item_id;
    j["benchmark"] = r.benchmark;
    j["language"] = to_string(r.language);
    j["latency_ms"] = r.latency_ms;
    j["created_at"] = r.created_at;
    j["retry_count"] = r.retry_count;
    return j;
}

/// Full record including volatile fields, as stored in the cache.
inline nlohmann::ordered_json to_cache_json(const ModelResponse& r) {
    nlohmann::ordered_json j = to_json(r);
    j["latency_ms"] = r.latency_ms;
    j["created_at"] = r.created_at;
    j["retry_count"] = r.retry_count;
    return j;
}

/// Accepts both the deterministic and the full form. Throws
/// nlohmann::json::exception on missing or mistyped fields.
inline ModelResponse response_from_json(const nlohmann::json& j) {
    ModelResponse r;
    r.item_id = j.at("item_id").get<std::string>();
    r.benchmark = j.at("benchmark").get<std::string>();
    r.language = parse_language(j.at("language").get<std::string>());
    r.text = j.at("text").get<std::string>();
    r.finish_reason = j.at("finish_reason").get<std::string>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    r.created_at = j.value("created_at", std::string{});
    r.retry_count = j.value("retry_count", 0);
    return r;
}

}  // namespace medqa
