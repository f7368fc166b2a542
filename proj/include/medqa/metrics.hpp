#pragma once

// Answer extraction, gestalt choice prediction and exact match.

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "medqa/dataset.hpp"
#include "medqa/gestalt.hpp"
#include "medqa/response.hpp"
#include "medqa/text.hpp"

namespace medqa {

using text::normalize;

enum class ExtractionPolicy { last_line, full };

inline std::string_view to_string(ExtractionPolicy p) {
    return p == ExtractionPolicy::last_line ? "last-line" : "full";
}

inline ExtractionPolicy parse_extraction_policy(std::string_view s) {
    if (s == "last-line" || s == "last_line") {
        return ExtractionPolicy::last_line;
    }
    if (s == "full") {
        return ExtractionPolicy::full;
    }
    throw std::invalid_argument("unknown extraction policy '" + std::string(s) + "' (expected last-line or full)");
}

/// last_line: the final line that is not blank; full: the whole response.
inline std::string extract_answer(std::string_view response, ExtractionPolicy policy) {
    if (policy == ExtractionPolicy::full) {
        return std::string(response);
    }
    const auto lines = text::split_lines(response);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        if (!text::is_blank(*it)) {
            return std::string(*it);
        }
    }
    return {};
}

/// Gestalt similarity of two strings after normalization, at code-point
/// granularity.
inline double normalized_similarity(std::string_view a, std::string_view b, Language lang) {
    const std::u32string na = text::to_u32(normalize(a, lang));
    const std::u32string nb = text::to_u32(normalize(b, lang));
    return gestalt_similarity(std::u32string_view(na), std::u32string_view(nb));
}

struct Prediction {
    std::vector<std::size_t> indices;  // ascending
    std::vector<double> similarities;  // one per choice
};

/// Indices of the k most similar choices. Ranking is stable, so equal
/// similarities resolve to the lower index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

inline Prediction predict(std::string_view extracted, const std::vector<std::string>& choices, std::size_t k,
                          Language lang) {
    if (k < 1 || k > choices.size()) {
        throw std::invalid_argument("predict: k must be in [1, number of choices]");
    }
    const std::u32string answer = text::to_u32(normalize(extracted, lang));
    Prediction p;
    p.similarities.reserve(choices.size());
    for (const auto& c : choices) {
        const std::u32string choice = text::to_u32(normalize(c, lang));
        p.similarities.push_back(gestalt_similarity(std::u32string_view(answer), std::u32string_view(choice)));
    }
    p.indices = top_k(p.similarities, k);
    return p;
}

/// Normalized equality with the gold choices joined by ", "; any order of the
/// gold choices is accepted for multi-answer items.
inline bool exact_match(std::string_view extracted, const QaRecord& record) {
    const std::string answer = normalize(extracted, record.language);
    std::vector<std::size_t> gold = record.gold;
    std::sort(gold.begin(), gold.end());
    do {
        std::vector<std::string> parts;
        for (std::size_t g : gold) {
            parts.push_back(record.choices.at(g));
        }
        if (answer == normalize(join_choices(parts), record.language)) {
            return true;
        }
    } while (std::next_permutation(gold.begin(), gold.end()));
    return false;
}

struct ItemJudgment {
    std::string item_id;
    std::string benchmark;
    Language language = Language::en;
    std::optional<std::string> subject;
    std::string extracted_answer;
    std::vector<double> per_choice_similarity;
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> gold;
    bool exact_correct = false;
    bool gestalt_correct = false;
    double gestalt_to_gold = 0.0;
    bool extraction_fallback = false;

    friend bool operator==(const ItemJudgment&, const ItemJudgment&) = default;
};

class IdMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Scores one response. Under last_line extraction an all-zero similarity
/// vector triggers a second pass over the full response.
inline ItemJudgment judge(const QaRecord& record, const ModelResponse& response,
                          ExtractionPolicy policy = ExtractionPolicy::last_line) {
    if (record.id != response.item_id) {
        throw IdMismatch("judge: record " + record.id + " paired with response for " + response.item_id);
    }
    ItemJudgment j;
    j.item_id = record.id;
    j.benchmark = record.benchmark;
    j.language = record.language;
    j.subject = record.subject;
    j.gold = record.gold;
    std::sort(j.gold.begin(), j.gold.end());

    std::string extracted = extract_answer(response.text, policy);
    Prediction p = predict(extracted, record.choices, j.gold.size(), record.language);
    if (policy == ExtractionPolicy::last_line &&
        std::all_of(p.similarities.begin(), p.similarities.end(), [](double s) { return s == 0.0; })) {
        std::string full = extract_answer(response.text, ExtractionPolicy::full);
        if (full != extracted) {
            extracted = std::move(full);
            p = predict(extracted, record.choices, j.gold.size(), record.language);
            j.extraction_fallback = true;
        }
    }
    j.extracted_answer = extracted;
    j.per_choice_similarity = std::move(p.similarities);
    j.predicted = std::move(p.indices);
    j.gestalt_correct = j.predicted == j.gold;
    j.exact_correct = exact_match(extracted, record);
    j.gestalt_to_gold = normalized_similarity(extracted, gold_answer_text(record), record.language);
    return j;
}

inline nlohmann::ordered_json to_json(const ItemJudgment& j) {
    nlohmann::ordered_json o;
    o["item_id"] = j.item_id;
    o["benchmark"] = j.benchmark;
    o["language"] = to_string(j.language);
    o["subject"] = j.subject ? nlohmann::ordered_json(*j.subject) : nlohmann::ordered_json(nullptr);
    o["extracted_answer"] = j.extracted_answer;
    o["per_choice_similarity"] = j.per_choice_similarity;
    o["predicted"] = j.predicted;
    o["gold"] = j.gold;
    o["exact_correct"] = j.exact_correct;
    o["gestalt_correct"] = j.gestalt_correct;
    o["gestalt_to_gold"] = j.gestalt_to_gold;
    o["extraction_fallback"] = j.extraction_fallback;
    return o;
}

inline ItemJudgment judgment_from_json(const nlohmann::json& o) {
    ItemJudgment j;
    j.item_id = o.at("item_id").get<std::string>();
    j.benchmark = o.at("benchmark").get<std::string>();
    j.language = parse_language(o.at("language").get<std::string>());
    if (const auto& s = o.at("subject"); s.is_string()) {
        j.subject = s.get<std::string>();
    }
    j.extracted_answer = o.at("extracted_answer").get<std::string>();
    j.per_choice_similarity = o.at("per_choice_similarity").get<std::vector<double>>();
    j.predicted = o.at("predicted").get<std::vector<std::size_t>>();
    j.gold = o.at("gold").get<std::vector<std::size_t>>();
    j.exact_correct = o.at("exact_correct").get<bool>();
    j.gestalt_correct = o.at("gestalt_correct").get<bool>();
    j.gestalt_to_gold = o.at("gestalt_to_gold").get<double>();
    j.extraction_fallback = o.value("extraction_fallback", false);
    return j;
}

}  // namespace medqa
