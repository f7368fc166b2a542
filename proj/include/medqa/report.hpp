#pragma once

// Accuracy aggregation into score tables, base-vs-tuned deltas, and
// Markdown / CSV / JSON rendering. Values stay unrounded until rendering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "medqa/metrics.hpp"

namespace medqa {

enum class Metric { gestalt, exact };

inline std::string_view to_string(Metric m) {
    return m == Metric::gestalt ? "gestalt" : "exact";
}

inline Metric parse_metric(std::string_view s) {
    if (s == "gestalt") {
        return Metric::gestalt;
    }
    if (s == "exact") {
        return Metric::exact;
    }
    throw std::invalid_argument("unknown metric '" + std::string(s) + "' (expected gestalt or exact)");
}

enum class TableFormat { markdown, csv, json };

inline TableFormat parse_table_format(std::string_view s) {
    if (s == "markdown" || s == "md") {
        return TableFormat::markdown;
    }
    if (s == "csv") {
        return TableFormat::csv;
    }
    if (s == "json") {
        return TableFormat::json;
    }
    throw std::invalid_argument("unknown format '" + std::string(s) + "' (expected markdown, csv or json)");
}

class ReportError : public std::runtime_error {
public:
    enum class Kind { EmptyRun, DuplicateCell, ColumnMismatch, MalformedTable };

    ReportError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct RunResult {
    std::string run_id;
    std::string model_label;
    std::string benchmark;
    Language language = Language::en;
    std::vector<ItemJudgment> judgments;
    std::string manifest;  // path of the run.json this result came from
    std::string column;    // table column label; defaults to the benchmark id

    const std::string& column_label() const { return column.empty() ? benchmark : column; }
};

inline bool is_correct(const ItemJudgment& j, Metric metric) {
    return metric == Metric::gestalt ? j.gestalt_correct : j.exact_correct;
}

inline double accuracy(const std::vector<ItemJudgment>& judgments, Metric metric) {
    if (judgments.empty()) {
        throw ReportError(ReportError::Kind::EmptyRun, "cannot score an empty run");
    }
    const auto correct = std::count_if(judgments.begin(), judgments.end(),
                                       [&](const ItemJudgment& j) { return is_correct(j, metric); });
    return 100.0 * static_cast<double>(correct) / static_cast<double>(judgments.size());
}

/// Percentage of items correct under the metric, unrounded.
inline double accuracy(const RunResult& run, Metric metric) {
    if (run.judgments.empty()) {
        throw ReportError(ReportError::Kind::EmptyRun,
                          "run " + run.run_id + " has no judgments for " + run.benchmark);
    }
    return accuracy(run.judgments, metric);
}

// ---------------------------------------------------------------------------
// Rounding

/// One decimal, half away from zero. The value is first printed with nine
/// decimals so binary noise (48.87499999...) resolves to the decimal the
/// arithmetic intended. Negative zero renders as "0.0".
inline std::string format_one_decimal(double value, bool explicit_sign = false) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", std::fabs(value));
    std::string s(buf);
    const std::size_t dot = s.find('.');
    std::string digits = s.substr(0, dot) + s.substr(dot + 1, 1);  // tenths, as an integer string
    const bool round_up = s[dot + 2] >= '5';
    if (round_up) {
        int i = static_cast<int>(digits.size()) - 1;
        while (i >= 0 && digits[static_cast<std::size_t>(i)] == '9') {
            digits[static_cast<std::size_t>(i)] = '0';
            --i;
        }
        if (i < 0) {
            digits.insert(digits.begin(), '1');
        } else {
            ++digits[static_cast<std::size_t>(i)];
        }
    }
    std::string out = digits.substr(0, digits.size() - 1) + "." + digits.back();
    const bool zero = out.find_first_not_of("0.") == std::string::npos;
    if (zero) {
        return out;
    }
    if (value < 0) {
        return "-" + out;
    }
    return explicit_sign ? "+" + out : out;
}

// ---------------------------------------------------------------------------
// Score tables

inline constexpr std::string_view kAverageColumn = "Ave.";

struct ScoreRow {
    std::string label;
    std::vector<std::optional<double>> cells;  // aligned with ScoreTable::columns
    std::optional<double> average;
    bool incomplete = false;

    friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

struct ScoreTable {
    std::vector<std::string> columns;  // benchmark labels, without "Ave."
    std::vector<ScoreRow> rows;

    friend bool operator==(const ScoreTable&, const ScoreTable&) = default;

    const ScoreRow& row(std::string_view label) const {
        for (const auto& r : rows) {
            if (r.label == label) {
                return r;
            }
        }
        throw std::out_of_range("no row labelled " + std::string(label));
    }
};

struct RawRow {
    std::string label;
    std::vector<std::optional<double>> cells;
};

/// Builds a table from unrounded cells and fills the average column: the
/// unweighted mean over every column that has at least one value. A row
/// missing any such column is flagged incomplete and gets no average.
inline ScoreTable make_table(std::vector<std::string> columns, const std::vector<RawRow>& raw,
                             const WarningSink& warn = {}) {
    ScoreTable t;
    t.columns = std::move(columns);
    std::vector<bool> populated(t.columns.size(), false);
    for (const auto& r : raw) {
        if (r.cells.size() != t.columns.size()) {
            throw ReportError(ReportError::Kind::ColumnMismatch,
                              "row " + r.label + " has " + std::to_string(r.cells.size()) + " cells for " +
                                  std::to_string(t.columns.size()) + " columns");
        }
        for (std::size_t c = 0; c < r.cells.size(); ++c) {
            populated[c] = populated[c] || r.cells[c].has_value();
        }
    }
    for (const auto& r : raw) {
        ScoreRow row{r.label, r.cells, std::nullopt, false};
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < r.cells.size(); ++c) {
            if (!populated[c]) {
                continue;
            }
            if (!r.cells[c]) {
                row.incomplete = true;
                continue;
            }
            sum += *r.cells[c];
            ++n;
        }
        if (row.incomplete) {
            if (warn) {
                warn("row " + r.label + " is incomplete; average omitted");
            }
        } else if (n > 0) {
            row.average = sum / static_cast<double>(n);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Canonical column order for known benchmarks; anything else sorts after.
inline std::vector<std::string> default_column_order(const std::set<std::string>& labels) {
    static const std::vector<std::string> known = {"igakuqa", "medqa", "medmcqa", "mmlu", "jmmlu"};
    auto rank = [&](const std::string& label) {
        const std::string base = label.substr(0, label.find('_'));
        const auto it = std::find(known.begin(), known.end(), base);
        return std::make_pair(static_cast<std::size_t>(it - known.begin()), label);
    };
    std::vector<std::string> cols(labels.begin(), labels.end());
    std::sort(cols.begin(), cols.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
    return cols;
}

struct AggregateOptions {
    Metric metric = Metric::gestalt;
    std::vector<std::string> column_order;  // empty: default_column_order
    std::vector<std::string> row_order;     // empty: sorted by model label
    WarningSink warn;
};

/// One row per model label, one column per benchmark. Each cell pools every
/// item of its run, so subject-partitioned benchmarks are micro-averaged.
inline ScoreTable aggregate(const std::vector<RunResult>& runs, const AggregateOptions& options = {}) {
    std::map<std::pair<std::string, std::string>, double> cells;
    std::set<std::string> labels;
    std::set<std::string> models;
    for (const auto& run : runs) {
        const auto key = std::make_pair(run.model_label, run.column_label());
        if (cells.contains(key)) {
            throw ReportError(ReportError::Kind::DuplicateCell,
                              "duplicate cell for model " + run.model_label + ", column " + run.column_label());
        }
        cells[key] = accuracy(run, options.metric);
        labels.insert(run.column_label());
        models.insert(run.model_label);
    }
    std::vector<std::string> columns = options.column_order.empty() ? default_column_order(labels)
                                                                    : options.column_order;
    std::vector<std::string> rows = options.row_order;
    if (rows.empty()) {
        rows.assign(models.begin(), models.end());
    }
    std::vector<RawRow> raw;
    for (const auto& model : rows) {
        RawRow r{model, {}};
        for (const auto& col : columns) {
            auto it = cells.find({model, col});
            r.cells.push_back(it == cells.end() ? std::nullopt : std::optional<double>(it->second));
        }
        raw.push_back(std::move(r));
    }
    return make_table(std::move(columns), raw, options.warn);
}

/// Per-subject accuracies of one benchmark plus the pooled (micro) and the
/// subject-mean (macro) columns.
inline ScoreTable subject_table(const std::vector<RunResult>& runs, const std::string& column,
                                Metric metric = Metric::gestalt) {
    std::set<std::string> subjects;
    for (const auto& run : runs) {
        if (run.column_label() != column) {
            continue;
        }
        for (const auto& j : run.judgments) {
            subjects.insert(j.subject.value_or(std::string(kUnspecifiedSubject)));
        }
    }
    std::vector<std::string> columns(subjects.begin(), subjects.end());
    std::vector<RawRow> raw;
    std::set<std::string> seen_models;
    for (const auto& run : runs) {
        if (run.column_label() != column || !seen_models.insert(run.model_label).second) {
            continue;
        }
        std::map<std::string, std::vector<ItemJudgment>> by_subject;
        for (const auto& j : run.judgments) {
            by_subject[j.subject.value_or(std::string(kUnspecifiedSubject))].push_back(j);
        }
        RawRow r{run.model_label, {}};
        for (const auto& s : columns) {
            auto it = by_subject.find(s);
            r.cells.push_back(it == by_subject.end() || it->second.empty()
                                  ? std::nullopt
                                  : std::optional<double>(accuracy(it->second, metric)));
        }
        raw.push_back(std::move(r));
    }
    std::sort(raw.begin(), raw.end(), [](const RawRow& a, const RawRow& b) { return a.label < b.label; });
    ScoreTable t = make_table(columns, raw);
    // The subject mean is the table's own average column; append the pooled
    // accuracy as an extra column.
    t.columns.push_back("micro");
    for (auto& row : t.rows) {
        for (const auto& run : runs) {
            if (run.model_label == row.label && run.column_label() == column) {
                row.cells.push_back(accuracy(run, metric));
                break;
            }
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Deltas

struct DeltaRow {
    std::string base_label;
    std::string tuned_label;
    std::vector<std::optional<double>> cells;
    std::optional<double> average;

    friend bool operator==(const DeltaRow&, const DeltaRow&) = default;
};

struct DeltaTable {
    std::vector<std::string> columns;
    std::vector<DeltaRow> rows;

    friend bool operator==(const DeltaTable&, const DeltaTable&) = default;
};

/// Cellwise tuned minus base on unrounded values. Columns are matched by
/// label; both rows must cover the same column set.
inline DeltaRow diff(const ScoreTable& base_table, const ScoreRow& base, const ScoreTable& tuned_table,
                     const ScoreRow& tuned) {
    if (std::set<std::string>(base_table.columns.begin(), base_table.columns.end()) !=
        std::set<std::string>(tuned_table.columns.begin(), tuned_table.columns.end())) {
        throw ReportError(ReportError::Kind::ColumnMismatch,
                          "cannot diff " + base.label + " against " + tuned.label + ": column sets differ");
    }
    DeltaRow d{base.label, tuned.label, {}, std::nullopt};
    for (std::size_t c = 0; c < base_table.columns.size(); ++c) {
        const auto it = std::find(tuned_table.columns.begin(), tuned_table.columns.end(), base_table.columns[c]);
        const auto& t = tuned.cells[static_cast<std::size_t>(it - tuned_table.columns.begin())];
        const auto& b = base.cells[c];
        d.cells.push_back(b && t ? std::optional<double>(*t - *b) : std::nullopt);
    }
    if (base.average && tuned.average) {
        d.average = *tuned.average - *base.average;
    }
    return d;
}

inline DeltaRow diff(const ScoreTable& table, std::string_view base_label, std::string_view tuned_label) {
    return diff(table, table.row(base_label), table, table.row(tuned_label));
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string cell_text(const std::optional<double>& v, bool sign = false) {
    return v ? format_one_decimal(*v, sign) : "-";
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) {
        return s;
    }
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out += ',';
        }
        out += csv_field(fields[i]);
    }
    return out + "\n";
}

inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& body,
                                  std::size_t left_aligned_columns) {
    std::vector<std::size_t> width(header.size(), 3);
    auto widen = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            width[c] = std::max(width[c], text::code_point_count(cells[c]));
        }
    };
    widen(header);
    for (const auto& r : body) {
        widen(r);
    }
    auto pad = [&](const std::string& s, std::size_t c) {
        const std::string fill(width[c] - text::code_point_count(s), ' ');
        return c < left_aligned_columns ? s + fill : fill + s;
    };
    std::string out = "|";
    for (std::size_t c = 0; c < header.size(); ++c) {
        out += " " + pad(header[c], c) + " |";
    }
    out += "\n|";
    for (std::size_t c = 0; c < header.size(); ++c) {
        out += c < left_aligned_columns ? " :" + std::string(width[c] - 1, '-') + " |"
                                        : " " + std::string(width[c] - 1, '-') + ": |";
    }
    out += "\n";
    for (const auto& r : body) {
        out += "|";
        for (std::size_t c = 0; c < r.size(); ++c) {
            out += " " + pad(r[c], c) + " |";
        }
        out += "\n";
    }
    return out;
}

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> opt_from_json(const nlohmann::json& v) {
    if (v.is_null()) {
        return std::nullopt;
    }
    return v.get<double>();
}

}  // namespace detail

struct RenderTableOptions {
    std::size_t bold_top = 0;  // markdown only; 0 disables
};

/// Rendered cells of the k best values in each column (ties included).
inline std::vector<std::vector<bool>> top_k_marks(const ScoreTable& t, std::size_t k) {
    std::vector<std::vector<bool>> marks(t.rows.size(), std::vector<bool>(t.columns.size() + 1, false));
    if (k == 0) {
        return marks;
    }
    for (std::size_t c = 0; c <= t.columns.size(); ++c) {
        auto value = [&](const ScoreRow& r) {
            return c < t.columns.size() ? r.cells[c] : r.average;
        };
        std::vector<double> vals;
        for (const auto& r : t.rows) {
            if (auto v = value(r)) {
                vals.push_back(std::stod(format_one_decimal(*v)));
            }
        }
        if (vals.empty()) {
            continue;
        }
        std::sort(vals.rbegin(), vals.rend());
        const double threshold = vals[std::min(k, vals.size()) - 1];
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            if (auto v = value(t.rows[r]); v && std::stod(format_one_decimal(*v)) >= threshold) {
                marks[r][c] = true;
            }
        }
    }
    return marks;
}

inline std::string render(const ScoreTable& t, TableFormat format, const RenderTableOptions& options = {}) {
    if (format == TableFormat::json) {
        nlohmann::ordered_json j;
        std::vector<std::string> cols = t.columns;
        cols.emplace_back(kAverageColumn);
        j["columns"] = cols;
        j["rows"] = nlohmann::ordered_json::array();
        j["cells_raw"] = nlohmann::ordered_json::array();
        j["cells_rendered"] = nlohmann::ordered_json::array();
        j["incomplete"] = nlohmann::ordered_json::array();
        for (const auto& r : t.rows) {
            j["rows"].push_back(r.label);
            nlohmann::ordered_json raw = nlohmann::ordered_json::array();
            nlohmann::ordered_json rendered = nlohmann::ordered_json::array();
            for (const auto& c : r.cells) {
                raw.push_back(detail::opt_json(c));
                rendered.push_back(detail::cell_text(c));
            }
            raw.push_back(detail::opt_json(r.average));
            rendered.push_back(detail::cell_text(r.average));
            j["cells_raw"].push_back(std::move(raw));
            j["cells_rendered"].push_back(std::move(rendered));
            j["incomplete"].push_back(r.incomplete);
        }
        return j.dump(2) + "\n";
    }
    if (format == TableFormat::csv) {
        std::vector<std::string> header = {"model"};
        header.insert(header.end(), t.columns.begin(), t.columns.end());
        header.emplace_back("ave");
        std::string out = detail::csv_line(header);
        for (const auto& r : t.rows) {
            std::vector<std::string> fields = {r.label};
            for (const auto& c : r.cells) {
                fields.push_back(detail::cell_text(c));
            }
            fields.push_back(detail::cell_text(r.average));
            out += detail::csv_line(fields);
        }
        return out;
    }
    const auto marks = top_k_marks(t, options.bold_top);
    std::vector<std::string> header = {"model"};
    header.insert(header.end(), t.columns.begin(), t.columns.end());
    header.emplace_back(kAverageColumn);
    std::vector<std::vector<std::string>> body;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        std::vector<std::string> cells = {r.label + (r.incomplete ? " (incomplete)" : "")};
        for (std::size_t c = 0; c <= r.cells.size(); ++c) {
            std::string s = detail::cell_text(c < r.cells.size() ? r.cells[c] : r.average);
            cells.push_back(marks[i][c] ? "**" + s + "**" : s);
        }
        body.push_back(std::move(cells));
    }
    return detail::markdown_table(header, body, 1);
}

/// Inverse of render(t, json).
inline ScoreTable parse_score_table_json(const std::string& doc) {
    try {
        const auto j = nlohmann::json::parse(doc);
        ScoreTable t;
        t.columns = j.at("columns").get<std::vector<std::string>>();
        if (t.columns.empty() || t.columns.back() != kAverageColumn) {
            throw ReportError(ReportError::Kind::MalformedTable, "last column must be \"Ave.\"");
        }
        t.columns.pop_back();
        const auto labels = j.at("rows").get<std::vector<std::string>>();
        const auto& raw = j.at("cells_raw");
        const auto& incomplete = j.at("incomplete");
        for (std::size_t i = 0; i < labels.size(); ++i) {
            ScoreRow r{labels[i], {}, std::nullopt, incomplete.at(i).get<bool>()};
            const auto& cells = raw.at(i);
            if (cells.size() != t.columns.size() + 1) {
                throw ReportError(ReportError::Kind::MalformedTable, "row " + labels[i] + " has wrong width");
            }
            for (std::size_t c = 0; c < t.columns.size(); ++c) {
                r.cells.push_back(detail::opt_from_json(cells[c]));
            }
            r.average = detail::opt_from_json(cells[t.columns.size()]);
            t.rows.push_back(std::move(r));
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ReportError(ReportError::Kind::MalformedTable, std::string("score table JSON: ") + e.what());
    }
}

inline std::string render(const DeltaTable& t, TableFormat format) {
    std::vector<std::string> cols = t.columns;
    if (format == TableFormat::json) {
        nlohmann::ordered_json j;
        cols.emplace_back(kAverageColumn);
        j["columns"] = cols;
        j["rows"] = nlohmann::ordered_json::array();
        j["cells_raw"] = nlohmann::ordered_json::array();
        j["cells_rendered"] = nlohmann::ordered_json::array();
        for (const auto& r : t.rows) {
            j["rows"].push_back({{"base", r.base_label}, {"tuned", r.tuned_label}});
            nlohmann::ordered_json raw = nlohmann::ordered_json::array();
            nlohmann::ordered_json rendered = nlohmann::ordered_json::array();
            for (const auto& c : r.cells) {
                raw.push_back(detail::opt_json(c));
                rendered.push_back(detail::cell_text(c, true));
            }
            raw.push_back(detail::opt_json(r.average));
            rendered.push_back(detail::cell_text(r.average, true));
            j["cells_raw"].push_back(std::move(raw));
            j["cells_rendered"].push_back(std::move(rendered));
        }
        return j.dump(2) + "\n";
    }
    if (format == TableFormat::csv) {
        std::vector<std::string> header = {"base", "tuned"};
        header.insert(header.end(), cols.begin(), cols.end());
        header.emplace_back("ave");
        std::string out = detail::csv_line(header);
        for (const auto& r : t.rows) {
            std::vector<std::string> fields = {r.base_label, r.tuned_label};
            for (const auto& c : r.cells) {
                fields.push_back(detail::cell_text(c, true));
            }
            fields.push_back(detail::cell_text(r.average, true));
            out += detail::csv_line(fields);
        }
        return out;
    }
    std::vector<std::string> header = {"base", "tuned"};
    header.insert(header.end(), cols.begin(), cols.end());
    header.emplace_back(kAverageColumn);
    std::vector<std::vector<std::string>> body;
    for (const auto& r : t.rows) {
        std::vector<std::string> cells = {r.base_label, r.tuned_label};
        for (const auto& c : r.cells) {
            cells.push_back(detail::cell_text(c, true));
        }
        cells.push_back(detail::cell_text(r.average, true));
        body.push_back(std::move(cells));
    }
    return detail::markdown_table(header, body, 2);
}

}  // namespace medqa
