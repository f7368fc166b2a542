#include <gtest/gtest.h>

#include "medqa/toml.hpp"

using medqa::toml::parse;
using medqa::toml::ParseError;

TEST(Toml, ScalarsAndTables) {
    const auto doc = parse(R"(
# comment
title = "medqa"   # trailing
count = 1_450
ratio = 0.5
on = true
[endpoint]
url = 'http://x:8000'
"quoted key" = -3
a.b = "dotted"
)");
    EXPECT_EQ(doc["title"], "medqa");
    EXPECT_EQ(doc["count"], 1450);
    EXPECT_DOUBLE_EQ(doc["ratio"].get<double>(), 0.5);
    EXPECT_EQ(doc["on"], true);
    EXPECT_EQ(doc["endpoint"]["url"], "http://x:8000");
    EXPECT_EQ(doc["endpoint"]["quoted key"], -3);
    EXPECT_EQ(doc["endpoint"]["a"]["b"], "dotted");
}

TEST(Toml, ArraysOfTablesAndInlineTables) {
    const auto doc = parse(R"(
[[benchmark]]
id = "mmlu"
paths = ["a.jsonl",
         "b.jsonl",]
subjects = { anatomy = 135, virology = 100 }
[[benchmark]]
id = "medqa"
[benchmark.extra]
k = 1
)");
    ASSERT_EQ(doc["benchmark"].size(), 2u);
    EXPECT_EQ(doc["benchmark"][0]["paths"].size(), 2u);
    EXPECT_EQ(doc["benchmark"][0]["subjects"]["virology"], 100);
    EXPECT_EQ(doc["benchmark"][1]["extra"]["k"], 1);
}

TEST(Toml, StringsAndEscapes) {
    const auto doc = parse("a = \"tab\\there \\u00e9\"\nb = \"\"\"\nline1\nline2\"\"\"\nc = '''raw\\n'''\n");
    EXPECT_EQ(doc["a"], "tab\there \xC3\xA9");
    EXPECT_EQ(doc["b"], "line1\nline2");
    EXPECT_EQ(doc["c"], "raw\\n");
}

TEST(Toml, ErrorsCarryLineNumbers) {
    try {
        parse("a = 1\nb = \n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse("a = 1\na = 2\n"), ParseError);
    EXPECT_THROW(parse("[t]\nx=1\n[t]\ny=2\n"), ParseError);
    EXPECT_THROW(parse("s = \"open\n"), ParseError);
    EXPECT_THROW(parse("x = 1 2\n"), ParseError);
}
