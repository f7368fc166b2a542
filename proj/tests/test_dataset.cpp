#include <string>

#include <gtest/gtest.h>

#include "medqa/cli.hpp"
#include "medqa/dataset.hpp"
#include "support.hpp"

using namespace medqa;

namespace {

QaRecord record(std::string id, std::string benchmark = "medqa", std::size_t n_choices = 4) {
    QaRecord r{std::move(id), "question?", {}, {0}, Language::en, std::nullopt, std::move(benchmark)};
    for (std::size_t i = 0; i < n_choices; ++i) {
        r.choices.push_back("choice " + std::to_string(i));
    }
    return r;
}

bool has_reason(const std::vector<Violation>& v, const std::string& needle) {
    for (const auto& x : v) {
        if (x.reason.find(needle) != std::string::npos) {
            return true;
        }
    }
    return false;
}

}  // namespace

TEST(Record, SerializeParseRoundTrip) {
    QaRecord r = record("medqa-en-00001");
    r.subject = "anatomy";
    r.gold = {1, 3};
    r.question = "日本語の \"質問\"\n二行目";
    const ParsedLine parsed = parse_record_line(serialize_record(r));
    EXPECT_EQ(parsed.record, r);
    EXPECT_TRUE(parsed.unknown_fields.empty());
}

TEST(Record, UnknownFieldsAreReported) {
    const auto parsed = parse_record_line(
        R"({"id":"x","question":"q","choices":["a","b"],"gold":[0],"language":"en","subject":null,"benchmark":"b","extra":1})");
    EXPECT_EQ(parsed.unknown_fields, std::vector<std::string>{"extra"});
}

TEST(Record, ShapeErrorsThrow) {
    EXPECT_THROW(parse_record_line("not json"), std::invalid_argument);
    EXPECT_THROW(parse_record_line(R"({"id":"x"})"), std::invalid_argument);
    EXPECT_THROW(parse_record_line(
                     R"({"id":"x","question":"q","choices":["a","b"],"gold":[-1],"language":"en","subject":null,"benchmark":"b"})"),
                 std::invalid_argument);
    EXPECT_THROW(parse_record_line(
                     R"({"id":"x","question":"q","choices":["a","b"],"gold":[0],"language":"fr","subject":null,"benchmark":"b"})"),
                 std::invalid_argument);
}

TEST(Validate, CatchesEachInvariant) {
    std::vector<QaRecord> rs;
    rs.push_back(record("ok"));
    rs.push_back(record("few", "custom", 1));
    rs.push_back(record("wrongcount", "igakuqa", 4));
    auto blank = record("blank");
    blank.choices[2] = "  ";
    rs.push_back(blank);
    auto nogold = record("nogold");
    nogold.gold.clear();
    rs.push_back(nogold);
    auto range = record("range");
    range.gold = {4};
    rs.push_back(range);
    auto dup = record("dupgold");
    dup.gold = {1, 1};
    rs.push_back(dup);
    rs.push_back(record("ok"));
    const auto v = validate_dataset(rs);
    EXPECT_TRUE(has_reason(v, "fewer than two choices"));
    EXPECT_TRUE(has_reason(v, "requires 5 choices"));
    EXPECT_TRUE(has_reason(v, "empty choice"));
    EXPECT_TRUE(has_reason(v, "empty gold set"));
    EXPECT_TRUE(has_reason(v, "out of range"));
    EXPECT_TRUE(has_reason(v, "duplicate gold"));
    EXPECT_TRUE(has_reason(v, "duplicate id"));
    EXPECT_TRUE(validate_dataset({record("a"), record("b")}).empty());
}

TEST(Load, FixtureManifestsMatchExactly) {
    const auto config = cli::load_config(support::fixtures_dir() / "fixtures.toml");
    ASSERT_FALSE(config.benchmarks.empty());
    for (const auto& b : config.benchmarks) {
        const auto records = load_benchmark(b.manifest());
        ASSERT_TRUE(b.expected_count.has_value());
        EXPECT_EQ(records.size(), *b.expected_count) << b.name();
    }
}

TEST(Load, CountMismatchIsTyped) {
    support::TempDir dir;
    write_dataset_file(dir / "d.jsonl", {record("a"), record("b")});
    BenchmarkManifest m{"medqa", Language::en, {dir / "d.jsonl"}, 3, {}};
    try {
        load_benchmark(m);
        FAIL() << "expected CountMismatch";
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.kind(), DatasetError::Kind::CountMismatch);
        EXPECT_EQ(e.expected(), 3u);
        EXPECT_EQ(e.actual(), 2u);
    }
}

TEST(Load, MissingFileAndMalformedLine) {
    support::TempDir dir;
    BenchmarkManifest m{"medqa", Language::en, {dir / "absent.jsonl"}, std::nullopt, {}};
    try {
        load_benchmark(m);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.kind(), DatasetError::Kind::MissingFile);
    }
    support::write_file(dir / "bad.jsonl", serialize_record(record("a")) + "\n\n{oops\n");
    m.sources = {dir / "bad.jsonl"};
    try {
        load_benchmark(m);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.kind(), DatasetError::Kind::MalformedLine);
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Load, InvariantViolationNamesRecord) {
    support::TempDir dir;
    auto bad = record("bad");
    bad.gold = {9};
    write_dataset_file(dir / "d.jsonl", {record("a"), bad});
    BenchmarkManifest m{"medqa", Language::en, {dir / "d.jsonl"}, std::nullopt, {}};
    try {
        load_benchmark(m);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.kind(), DatasetError::Kind::InvariantViolation);
        EXPECT_EQ(e.record_id(), "bad");
    }
}

TEST(Load, SubjectCountsAreChecked) {
    support::TempDir dir;
    auto a = record("a", "mmlu");
    a.subject = "anatomy";
    auto b = record("b", "mmlu");
    b.subject = "virology";
    write_dataset_file(dir / "d.jsonl", {a, b});
    BenchmarkManifest m{"mmlu", Language::en, {dir / "d.jsonl"}, 2, {{"anatomy", 1}, {"virology", 1}}};
    EXPECT_EQ(load_benchmark(m).size(), 2u);
    m.subjects = {{"anatomy", 2}};
    EXPECT_THROW(load_benchmark(m), DatasetError);
}

TEST(Load, UnknownFieldsReachTheSink) {
    support::TempDir dir;
    support::write_file(dir / "d.jsonl",
                        R"({"id":"a","question":"q","choices":["w","x","y","z"],"gold":[0],"language":"en","subject":null,"benchmark":"medqa","note":"n"})"
                        "\n");
    std::vector<std::string> seen;
    BenchmarkManifest m{"medqa", Language::en, {dir / "d.jsonl"}, 1, {}};
    EXPECT_EQ(load_benchmark(m, [&](const std::string& w) { seen.push_back(w); }).size(), 1u);
    ASSERT_EQ(seen.size(), 1u);
    EXPECT_NE(seen[0].find("note"), std::string::npos);
}

TEST(Partition, PreservesOrderAndTagsUnspecified) {
    auto a = record("a");
    a.subject = "s";
    auto b = record("b");
    auto c = record("c");
    c.subject = "s";
    const auto parts = partition_by_subject({a, b, c});
    ASSERT_EQ(parts.size(), 2u);
    EXPECT_EQ(parts.at("s").front().id, "a");
    EXPECT_EQ(parts.at("s").back().id, "c");
    EXPECT_EQ(parts.at(std::string(kUnspecifiedSubject)).size(), 1u);
}
