#pragma once

// Prompt templates and rendering. Templates carry two placeholders:
// {{instruction}} receives the question and {{input}} the comma-joined
// choices. English templates are kept byte-exact; the Japanese ones are
// editable translations shipped under templates/.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "medqa/dataset.hpp"
#include "medqa/text.hpp"

namespace medqa {

enum class TemplateKind { cot, alpaca };

inline std::string_view to_string(TemplateKind k) {
    return k == TemplateKind::cot ? "cot" : "alpaca";
}

inline TemplateKind parse_template_kind(std::string_view s) {
    if (s == "cot") {
        return TemplateKind::cot;
    }
    if (s == "alpaca") {
        return TemplateKind::alpaca;
    }
    throw std::invalid_argument("unknown template '" + std::string(s) + "' (expected cot or alpaca)");
}

class PromptError : public std::runtime_error {
public:
    enum class Kind { LanguageMismatch, UnsupportedShotLanguage, InvalidTemplate, InvalidExemplar };

    PromptError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::string_view kInstructionPlaceholder = "{{instruction}}";
inline constexpr std::string_view kInputPlaceholder = "{{input}}";

namespace builtin_templates {

inline constexpr std::string_view cot_en =
    "### Instruction:\n"
    "The following are multiple choice questions about medical knowledge. Solve them in a step-by-step "
    "fashion, starting by summarizing the available information. Output a single option from the five "
    "options as the final answer.\n"
    "### Input:\n"
    "{{instruction}}\n"
    "{{input}}\n"
    "### Response:\n";

inline constexpr std::string_view alpaca_en =
    "Below is an instruction that describes a task, paired with an input that provides further context. "
    "Write a response that appropriately completes the request.\n"
    "### Instruction:\n"
    "{{instruction}}\n"
    "### Input:\n"
    "{{input}}\n"
    "### Response:\n";

inline constexpr std::string_view cot_ja =
    "### Instruction:\n"
    "以下は医学知識に関する多肢選択問題です。利用可能な情報の要約から始めて、段階的に解いてください。"
    "最終的な答えとして、5つの選択肢から1つを出力してください。\n"
    "### Input:\n"
    "{{instruction}}\n"
    "{{input}}\n"
    "### Response:\n";

inline constexpr std::string_view alpaca_ja =
    "以下は、タスクを説明する指示と、さらなる文脈を提供する入力の組み合わせです。"
    "要求を適切に満たす応答を書いてください。\n"
    "### Instruction:\n"
    "{{instruction}}\n"
    "### Input:\n"
    "{{input}}\n"
    "### Response:\n";

inline std::string_view get(TemplateKind kind, Language lang) {
    if (kind == TemplateKind::cot) {
        return lang == Language::en ? cot_en : cot_ja;
    }
    return lang == Language::en ? alpaca_en : alpaca_ja;
}

}  // namespace builtin_templates

/// File name of a template inside a template directory.
inline std::string template_file_name(TemplateKind kind, Language lang) {
    return std::string(to_string(kind)) + "." + std::string(to_string(lang)) + ".txt";
}

/// A template split into the task header and the per-item block. The item
/// block starts at the last "###" marker line preceding {{instruction}}.
struct ParsedTemplate {
    std::string header;
    std::string item_block;
};

inline ParsedTemplate parse_template(std::string_view tmpl) {
    const std::size_t instr = tmpl.find(kInstructionPlaceholder);
    if (instr == std::string_view::npos || tmpl.find(kInputPlaceholder) == std::string_view::npos) {
        throw PromptError(PromptError::Kind::InvalidTemplate,
                          "template must contain both {{instruction}} and {{input}}");
    }
    if (text::count_occurrences(tmpl, kInstructionPlaceholder) != 1 ||
        text::count_occurrences(tmpl, kInputPlaceholder) != 1) {
        throw PromptError(PromptError::Kind::InvalidTemplate, "each placeholder must appear exactly once");
    }
    std::size_t block_start = std::string_view::npos;
    std::size_t line_start = 0;
    while (line_start < instr) {
        if (tmpl.substr(line_start, 3) == "###") {
            block_start = line_start;
        }
        const std::size_t nl = tmpl.find('\n', line_start);
        if (nl == std::string_view::npos) {
            break;
        }
        line_start = nl + 1;
    }
    if (block_start == std::string_view::npos) {
        throw PromptError(PromptError::Kind::InvalidTemplate, "no \"###\" marker line before {{instruction}}");
    }
    return {std::string(tmpl.substr(0, block_start)), std::string(tmpl.substr(block_start))};
}

/// Loaded template texts keyed by (kind, language); falls back to the
/// built-in texts for anything a directory does not override.
class TemplateSet {
public:
    TemplateSet() = default;

    static TemplateSet builtin() { return {}; }

    static TemplateSet load(const std::filesystem::path& dir) {
        TemplateSet set;
        for (TemplateKind kind : {TemplateKind::cot, TemplateKind::alpaca}) {
            for (Language lang : {Language::en, Language::ja}) {
                const auto path = dir / template_file_name(kind, lang);
                std::ifstream in(path, std::ios::binary);
                if (!in) {
                    continue;
                }
                std::ostringstream buf;
                buf << in.rdbuf();
                std::string body = buf.str();
                parse_template(body);
                set.overrides_[{kind, lang}] = std::move(body);
            }
        }
        return set;
    }

    std::string_view get(TemplateKind kind, Language lang) const {
        if (auto it = overrides_.find({kind, lang}); it != overrides_.end()) {
            return it->second;
        }
        return builtin_templates::get(kind, lang);
    }

private:
    std::map<std::pair<TemplateKind, Language>, std::string> overrides_;
};

struct Exemplar {
    QaRecord record;
    std::string answer;
};

/// Worked examples placed ahead of the target item.
struct ShotSpec {
    std::vector<Exemplar> exemplars;

    std::size_t count() const { return exemplars.size(); }

    /// First n records, each answered with its gold choices.
    static ShotSpec from_records(const std::vector<QaRecord>& records, std::size_t n) {
        if (n > records.size()) {
            throw std::invalid_argument("requested " + std::to_string(n) + " exemplars but only " +
                                        std::to_string(records.size()) + " are available");
        }
        ShotSpec spec;
        for (std::size_t i = 0; i < n; ++i) {
            spec.exemplars.push_back({records[i], gold_answer_text(records[i])});
        }
        return spec;
    }
};

/// The three English worked examples used for few-shot runs.
inline const std::vector<QaRecord>& builtin_exemplars_en() {
    static const std::vector<QaRecord> records = {
        {"exemplar-1",
         "Which of the following is not a mandatory explanation to be provided to participants in human "
         "genome/gene analysis research?",
         {"The purpose of the research", "The freedom to consent", "Methods for anonymity",
          "Disadvantages of participation", "Assurance of research results sharing"},
         {4},
         Language::en,
         std::nullopt,
         "igakuqa"},
        {"exemplar-2",
         "A 57-year-old man lost consciousness and collapsed while working to remove sludge from a manhole at "
         "a sewage treatment plant. A colleague who entered to assist also suddenly lost consciousness and "
         "collapsed. Which of the following is the most likely cause? Select two.",
         {"Oxygen deficiency", "Hydrogen sulfide poisoning", "Carbon monoxide poisoning",
          "Carbon dioxide poisoning", "Nitrogen dioxide poisoning"},
         {0, 1},
         Language::en,
         std::nullopt,
         "igakuqa"},
        {"exemplar-3",
         "A 28-year-old woman at 30 weeks of gestation has a fundal height of 22 cm and almost no amniotic "
         "fluid is detected on abdominal ultrasound examination. What is the most likely condition in the "
         "fetus?",
         {"Esophageal atresia", "Ventricular septal defect", "Renal hypoplasia", "Anorectal malformation",
          "Fetal hydrops"},
         {2},
         Language::en,
         std::nullopt,
         "igakuqa"},
    };
    return records;
}

struct RenderedPrompt {
    std::string item_id;
    std::string benchmark;
    std::string text;
    std::vector<std::string> stop_sequences;
    TemplateKind kind = TemplateKind::cot;
    std::size_t shots = 0;
    Language language = Language::en;
};

inline std::vector<std::string> default_stop_sequences() {
    return {"### Input:", "###"};
}

struct RenderOptions {
    const TemplateSet* templates = nullptr;  // null -> built-in texts
    /// Keep the printed "five options" wording regardless of choice count.
    bool verbatim_instruction = false;
    std::vector<std::string> stop_sequences = default_stop_sequences();
};

/// Choices joined with ", " in order.
inline std::string render_choices(const QaRecord& record) {
    return join_choices(record.choices);
}

namespace detail {

inline std::string count_phrase(Language lang, std::size_t n) {
    if (lang == Language::en) {
        static const std::array<const char*, 11> words = {"zero", "one", "two",   "three", "four", "five",
                                                          "six",  "seven", "eight", "nine", "ten"};
        const std::string word = n < words.size() ? words[n] : std::to_string(n);
        return "from the " + word + " options";
    }
    return std::to_string(n) + "つの選択肢";
}

inline std::string substitute_choice_count(std::string header, Language lang, std::size_t n_choices) {
    return text::replace_all(std::move(header), count_phrase(lang, 5), count_phrase(lang, n_choices));
}

inline std::string fill_block(std::string_view block, std::string_view question, std::string_view choices) {
    std::string out;
    out.reserve(block.size() + question.size() + choices.size());
    std::size_t pos = 0;
    while (pos < block.size()) {
        if (block.substr(pos, kInstructionPlaceholder.size()) == kInstructionPlaceholder) {
            out += question;
            pos += kInstructionPlaceholder.size();
        } else if (block.substr(pos, kInputPlaceholder.size()) == kInputPlaceholder) {
            out += choices;
            pos += kInputPlaceholder.size();
        } else {
            out += block[pos++];
        }
    }
    return out;
}

inline std::string strip_markers(std::string_view header) {
    std::vector<std::string> kept;
    for (auto line : text::split_lines(header)) {
        auto trimmed = text::trim_ascii(line);
        if (trimmed.empty() || trimmed.substr(0, 3) == "###") {
            continue;
        }
        kept.emplace_back(trimmed);
    }
    return text::join(kept, "\n");
}

}  // namespace detail

/// The task instruction sentence(s) of a template, with the choice-count word
/// matched to n_choices.
inline std::string instruction_text(TemplateKind kind, Language lang, std::size_t n_choices,
                                    const TemplateSet& templates = TemplateSet::builtin()) {
    const ParsedTemplate parsed = parse_template(templates.get(kind, lang));
    return detail::strip_markers(detail::substitute_choice_count(parsed.header, lang, n_choices));
}

inline RenderedPrompt render(const QaRecord& record, TemplateKind kind, const ShotSpec& shots, Language language,
                             const RenderOptions& options = {}) {
    if (record.language != language) {
        throw PromptError(PromptError::Kind::LanguageMismatch,
                          "record " + record.id + " is " + std::string(to_string(record.language)) +
                              " but rendering was requested in " + std::string(to_string(language)));
    }
    for (const auto& ex : shots.exemplars) {
        if (ex.record.language != language) {
            throw PromptError(PromptError::Kind::UnsupportedShotLanguage,
                              "exemplar " + ex.record.id + " is " + std::string(to_string(ex.record.language)) +
                                  "; no exemplars available in " + std::string(to_string(language)));
        }
        if (ex.answer != gold_answer_text(ex.record)) {
            throw PromptError(PromptError::Kind::InvalidExemplar,
                              "exemplar " + ex.record.id + " answer does not match its gold choices");
        }
    }
    static const TemplateSet kBuiltin;
    const TemplateSet& templates = options.templates ? *options.templates : kBuiltin;
    const ParsedTemplate parsed = parse_template(templates.get(kind, language));

    std::string text = options.verbatim_instruction
                           ? parsed.header
                           : detail::substitute_choice_count(parsed.header, language, record.choices.size());
    for (const auto& ex : shots.exemplars) {
        text += detail::fill_block(parsed.item_block, ex.record.question, render_choices(ex.record));
        if (!text.empty() && text.back() != '\n') {
            text += '\n';
        }
        text += ex.answer;
        text += '\n';
    }
    text += detail::fill_block(parsed.item_block, record.question, render_choices(record));

    return {record.id, record.benchmark, std::move(text), options.stop_sequences, kind, shots.count(), language};
}

}  // namespace medqa
