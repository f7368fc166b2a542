#include <algorithm>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "medqa/report.hpp"
#include "oracle.hpp"

using namespace medqa;

namespace {

std::vector<ItemJudgment> judgments(std::size_t correct, std::size_t total, const std::string& subject = "") {
    std::vector<ItemJudgment> out;
    for (std::size_t i = 0; i < total; ++i) {
        ItemJudgment j;
        j.item_id = "item-" + std::to_string(i);
        j.gestalt_correct = i < correct;
        j.exact_correct = i < correct / 2;
        if (!subject.empty()) {
            j.subject = subject;
        }
        out.push_back(j);
    }
    return out;
}

RunResult run(const std::string& model, const std::string& bench, std::vector<ItemJudgment> js) {
    RunResult r;
    r.run_id = model;
    r.model_label = model;
    r.benchmark = bench;
    r.judgments = std::move(js);
    return r;
}

ScoreTable one_row(const std::vector<double>& cells, const std::string& label = "m") {
    std::vector<std::string> cols;
    RawRow row{label, {}};
    for (std::size_t i = 0; i < cells.size(); ++i) {
        cols.push_back("c" + std::to_string(i));
        row.cells.emplace_back(cells[i]);
    }
    return make_table(cols, {row});
}

}  // namespace

TEST(Rounding, HalfAwayFromZero) {
    EXPECT_EQ(format_one_decimal(48.875), "48.9");
    EXPECT_EQ(format_one_decimal(41.375), "41.4");
    EXPECT_EQ(format_one_decimal(-0.04), "0.0");
    EXPECT_EQ(format_one_decimal(-0.05), "-0.1");
    EXPECT_EQ(format_one_decimal(0.25), "0.3");
    EXPECT_EQ(format_one_decimal(99.95), "100.0");
    EXPECT_EQ(format_one_decimal(7.7, true), "+7.7");
    EXPECT_EQ(format_one_decimal(0.0, true), "0.0");
}

TEST(Rounding, AgreesWithExactRationalOracle) {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 20000; ++trial) {
        const long q = std::uniform_int_distribution<long>(1, 5000)(rng);
        const long p = std::uniform_int_distribution<long>(0, q)(rng);
        const double pct = 100.0 * static_cast<double>(p) / static_cast<double>(q);
        const long long tenths = oracle::round_tenths(100 * p, q);
        const std::string expected = std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
        EXPECT_EQ(format_one_decimal(pct), expected) << p << "/" << q;
    }
}

TEST(Accuracy, CountsCorrectItems) {
    const auto r = run("m", "igakuqa", judgments(758, 1450));
    EXPECT_EQ(format_one_decimal(accuracy(r, Metric::gestalt)), "52.3");
    EXPECT_THROW(accuracy(run("m", "x", {}), Metric::gestalt), ReportError);
}

TEST(Aggregate, AverageOfPrintedRows) {
    EXPECT_EQ(format_one_decimal(*one_row({52.3, 51.2, 41.2, 50.8}).rows[0].average), "48.9");
    EXPECT_EQ(format_one_decimal(*one_row({47.7, 41.5}).rows[0].average), "44.6");
}

TEST(Aggregate, SingleColumnAverageIsTheCell) {
    EXPECT_DOUBLE_EQ(*one_row({37.25}).rows[0].average, 37.25);
}

TEST(Aggregate, MissingCellFlagsRowIncomplete) {
    std::vector<std::string> warnings;
    const auto t = make_table({"a", "b"}, {{"full", {1.0, 2.0}}, {"gap", {1.0, std::nullopt}}},
                              [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_FALSE(t.row("full").incomplete);
    EXPECT_TRUE(t.row("gap").incomplete);
    EXPECT_FALSE(t.row("gap").average.has_value());
    EXPECT_EQ(warnings.size(), 1u);
    const auto md = render(t, TableFormat::markdown);
    EXPECT_NE(md.find("gap (incomplete)"), std::string::npos);
    EXPECT_NE(md.find("| -"), std::string::npos);
}

TEST(Aggregate, EntirelyMissingColumnIsSkipped) {
    const auto t = make_table({"a", "b"}, {{"x", {10.0, std::nullopt}}, {"y", {20.0, std::nullopt}}});
    EXPECT_FALSE(t.row("x").incomplete);
    EXPECT_DOUBLE_EQ(*t.row("y").average, 20.0);
}

TEST(Aggregate, DuplicateCellsAreRejected) {
    const std::vector<RunResult> runs = {run("m", "medqa", judgments(1, 2)), run("m", "medqa", judgments(1, 2))};
    EXPECT_THROW(aggregate(runs), ReportError);
}

TEST(Aggregate, CanonicalColumnOrderAndCsvHeader) {
    const std::vector<RunResult> runs = {run("m", "jmmlu", judgments(1, 2)), run("m", "medmcqa", judgments(1, 2)),
                                         run("m", "igakuqa", judgments(1, 2)), run("m", "medqa", judgments(1, 2))};
    const auto csv = render(aggregate(runs), TableFormat::csv);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,igakuqa,medqa,medmcqa,jmmlu,ave");
}

TEST(Aggregate, PermutationInvariant) {
    std::vector<RunResult> runs = {run("a", "medqa", judgments(3, 7)), run("b", "medqa", judgments(5, 9)),
                                   run("a", "igakuqa", judgments(2, 3)), run("b", "igakuqa", judgments(1, 4))};
    const auto reference = aggregate(runs);
    std::mt19937 rng(3);
    for (int i = 0; i < 20; ++i) {
        std::shuffle(runs.begin(), runs.end(), rng);
        EXPECT_EQ(aggregate(runs), reference);
    }
}

TEST(Aggregate, SubjectPartitionsAreMicroAveraged) {
    std::vector<ItemJudgment> pooled;
    std::size_t correct = 0;
    std::size_t total = 0;
    const std::vector<std::pair<std::size_t, std::size_t>> parts = {{100, 135}, {20, 265}, {173, 173}, {0, 100}};
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto js = judgments(parts[i].first, parts[i].second, "s" + std::to_string(i));
        pooled.insert(pooled.end(), js.begin(), js.end());
        correct += parts[i].first;
        total += parts[i].second;
    }
    const std::vector<RunResult> runs = {run("m", "mmlu", pooled)};
    const auto t = aggregate(runs);
    EXPECT_DOUBLE_EQ(*t.rows[0].cells[0], 100.0 * static_cast<double>(correct) / static_cast<double>(total));
    const auto by_subject = subject_table(runs, "mmlu");
    EXPECT_EQ(by_subject.columns.back(), "micro");
    EXPECT_DOUBLE_EQ(*by_subject.rows[0].cells.back(), *t.rows[0].cells[0]);
    EXPECT_DOUBLE_EQ(*by_subject.rows[0].cells[2], 100.0);
}

TEST(Diff, PublishedDeltaRows) {
    const auto ja = make_table({"igakuqa", "medqa", "medmcqa", "jmmlu"},
                               {{"Qwen2-7B", {44.6, 30.8, 31.5, 33.2}}, {"JMedLLM-v1-7B", {52.3, 51.2, 41.2, 50.8}}});
    const auto d = diff(ja, "Qwen2-7B", "JMedLLM-v1-7B");
    std::vector<std::string> rendered;
    for (const auto& c : d.cells) {
        rendered.push_back(format_one_decimal(*c, true));
    }
    EXPECT_EQ(rendered, (std::vector<std::string>{"+7.7", "+20.4", "+9.7", "+17.6"}));
}

TEST(Diff, AntisymmetricAndZeroOnSelf) {
    const auto t = make_table({"a", "b"}, {{"x", {12.5, 40.0}}, {"y", {30.25, 10.0}}});
    const auto xy = diff(t, "x", "y");
    const auto yx = diff(t, "y", "x");
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_DOUBLE_EQ(*xy.cells[c], -*yx.cells[c]);
        EXPECT_DOUBLE_EQ(*diff(t, "x", "x").cells[c], 0.0);
    }
    EXPECT_DOUBLE_EQ(*xy.average, -*yx.average);
}

TEST(Diff, ColumnSetsMustAgree) {
    const auto a = make_table({"a", "b"}, {{"x", {1.0, 2.0}}});
    const auto b = make_table({"a", "c"}, {{"y", {1.0, 2.0}}});
    EXPECT_THROW(diff(a, a.rows[0], b, b.rows[0]), ReportError);
    const auto swapped = make_table({"b", "a"}, {{"y", {5.0, 1.0}}});
    const auto d = diff(a, a.rows[0], swapped, swapped.rows[0]);
    EXPECT_DOUBLE_EQ(*d.cells[0], 0.0);
    EXPECT_DOUBLE_EQ(*d.cells[1], 3.0);
}

TEST(Render, JsonRoundTrip) {
    const auto t = make_table({"igakuqa", "medqa"}, {{"a", {52.275862, std::nullopt}}, {"b", {1.0 / 3.0, 48.875}}});
    EXPECT_EQ(parse_score_table_json(render(t, TableFormat::json)), t);
    EXPECT_THROW(parse_score_table_json("{}"), ReportError);
}

TEST(Render, MarkdownBoldsTopK) {
    const auto t = make_table({"a"}, {{"x", {10.0}}, {"y", {30.0}}, {"z", {20.0}}});
    RenderTableOptions opts;
    opts.bold_top = 2;
    const auto md = render(t, TableFormat::markdown, opts);
    EXPECT_NE(md.find("**30.0**"), std::string::npos);
    EXPECT_NE(md.find("**20.0**"), std::string::npos);
    EXPECT_EQ(md.find("**10.0**"), std::string::npos);
    EXPECT_NE(md.find("| model"), std::string::npos);
    EXPECT_NE(md.find("Ave."), std::string::npos);
}

TEST(Render, DeltaSigns) {
    DeltaTable t{{"a", "b"}, {{"base", "tuned", {7.7, -0.04}, 3.83}}};
    const auto csv = render(t, TableFormat::csv);
    EXPECT_NE(csv.find("base,tuned,+7.7,0.0,+3.8"), std::string::npos);
}
