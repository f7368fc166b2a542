#include <string>

#include <gtest/gtest.h>

#include "medqa/convert.hpp"
#include "support.hpp"

using namespace medqa;
using namespace medqa::convert;

TEST(Csv, QuotesNewlinesAndCrLf) {
    const auto rows = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",x,\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "say \"hi\""}));
    EXPECT_EQ(rows[1], (std::vector<std::string>{"multi\nline", "x", ""}));
    EXPECT_THROW(parse_csv("\"open"), std::invalid_argument);
}

TEST(Convert, IgakuqaDropsImagesAndFreeText) {
    support::TempDir dir;
    support::write_file(dir / "116-A.jsonl",
                        R"({"problem_id":"116A1","problem_text":" Q1 ","choices":["a. one","b. two","c. three","d. four","e. five"],"answer":["c"],"text_only":true})"
                        "\n"
                        R"({"problem_id":"116A2","problem_text":"Q2","choices":["a. one","b. two","c. three","d. four","e. five"],"answer":["a","e"],"text_only":false})"
                        "\n"
                        R"({"problem_id":"116A3","problem_text":"Q3","choices":[],"answer":["42"],"text_only":true})"
                        "\n"
                        R"({"problem_id":"116A4","problem_text":"Q4","choices":["a．いち","b．に","c．さん","d．し","e．ご"],"answer":["e","b"],"text_only":true})"
                        "\n");
    ConvertOptions opt;
    opt.format = SourceFormat::igakuqa;
    opt.language = Language::ja;
    const auto report = convert_files({dir / "116-A.jsonl"}, opt);
    ASSERT_EQ(report.records.size(), 2u);
    EXPECT_EQ(report.records[0].id, "116A1");
    EXPECT_EQ(report.records[0].question, "Q1");
    EXPECT_EQ(report.records[0].choices[2], "three");
    EXPECT_EQ(report.records[0].gold, std::vector<std::size_t>{2});
    EXPECT_EQ(report.records[1].choices[0], "いち");
    EXPECT_EQ(report.records[1].gold, (std::vector<std::size_t>{1, 4}));
    EXPECT_EQ(report.excluded.size(), 2u);
    EXPECT_NE(report.summary().find("2 excluded"), std::string::npos);
}

TEST(Convert, MedqaUsesSortedOptionKeys) {
    support::TempDir dir;
    support::write_file(dir / "test.jsonl",
                        R"({"question":"Q","options":{"B":"two","A":"one","D":"four","C":"three"},"answer_idx":"C"})"
                        "\n");
    ConvertOptions opt;
    opt.format = SourceFormat::medqa;
    const auto report = convert_files({dir / "test.jsonl"}, opt);
    ASSERT_EQ(report.records.size(), 1u);
    EXPECT_EQ(report.records[0].choices, (std::vector<std::string>{"one", "two", "three", "four"}));
    EXPECT_EQ(report.records[0].gold, std::vector<std::size_t>{2});
    EXPECT_TRUE(validate_dataset(report.records).empty());
}

TEST(Convert, MedmcqaAnswerBase) {
    support::TempDir dir;
    support::write_file(dir / "dev.json",
                        R"({"id":"m1","question":"Q","opa":"a","opb":"b","opc":"c","opd":"d","cop":1,"subject_name":"Anatomy"})"
                        "\n");
    ConvertOptions opt;
    opt.format = SourceFormat::medmcqa;
    EXPECT_EQ(convert_files({dir / "dev.json"}, opt).records[0].gold, std::vector<std::size_t>{0});
    opt.answer_base = 0;
    const auto r = convert_files({dir / "dev.json"}, opt).records[0];
    EXPECT_EQ(r.gold, std::vector<std::size_t>{1});
    EXPECT_EQ(r.subject, "Anatomy");
}

TEST(Convert, MmluSubjectFromFileNameAndHeaderSkip) {
    support::TempDir dir;
    support::write_file(dir / "anatomy_test.csv", "question,A,B,C,D,answer\nQ1,w,x,y,z,B\nQ2,w,x,y,z,F\n");
    ConvertOptions opt;
    opt.format = parse_source_format("jmmlu");
    opt.benchmark = "jmmlu";
    opt.language = Language::ja;
    const auto report = convert_files({dir / "anatomy_test.csv"}, opt);
    ASSERT_EQ(report.records.size(), 1u);
    EXPECT_EQ(report.records[0].subject, "anatomy");
    EXPECT_EQ(report.records[0].gold, std::vector<std::size_t>{1});
    EXPECT_EQ(report.records[0].benchmark, "jmmlu");
    EXPECT_EQ(report.excluded.size(), 1u);
}
