#include <random>
#include <string>

#include <gtest/gtest.h>

#include "medqa/text.hpp"

using medqa::Language;
using medqa::text::normalize;

TEST(Normalize, TrimsCollapsesFoldsAndDropsFinalPeriod) {
    EXPECT_EQ(normalize("  Renal  hypoplasia. ", Language::en), "renal hypoplasia");
    EXPECT_EQ(normalize("Renal\t\nHypoplasia", Language::en), "renal hypoplasia");
}

TEST(Normalize, FullWidthFoldsToAsciiWithoutCaseFoldingInJapanese) {
    EXPECT_EQ(normalize("ＡＢＣ", Language::ja), "ABC");
    EXPECT_EQ(normalize("ＡＢＣ", Language::en), "abc");
}

TEST(Normalize, StripsJapaneseFullStopAndIdeographicSpace) {
    EXPECT_EQ(normalize("　腎低形成。", Language::ja), "腎低形成");
    EXPECT_EQ(normalize("腎低形成 。 。", Language::ja), "腎低形成");
}

TEST(Normalize, HalfWidthKatakanaComposes) {
    EXPECT_EQ(normalize("ｶﾞ", Language::ja), "ガ");
}

TEST(Normalize, EmptyAndBlankInputs) {
    EXPECT_EQ(normalize("", Language::en), "");
    EXPECT_EQ(normalize(" \t\n", Language::ja), "");
    EXPECT_EQ(normalize("...", Language::en), "");
}

TEST(Normalize, Idempotent) {
    const std::vector<std::string> alphabet = {"a", "B", " ", ".", "。", "　", "Ａ", "ß", "ẞ", "ｶ", "ﾞ",
                                               "\t", "肺", "İ", "ﬁ", "Σ"};
    std::mt19937 rng(7);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::uniform_int_distribution<int> len(0, 12);
    for (int trial = 0; trial < 5000; ++trial) {
        std::string s;
        for (int i = len(rng); i > 0; --i) {
            s += alphabet[pick(rng)];
        }
        for (Language lang : {Language::en, Language::ja}) {
            const std::string once = normalize(s, lang);
            EXPECT_EQ(normalize(once, lang), once) << "input: " << s;
        }
    }
}

TEST(Utf8, RoundTripsAndCountsCodePoints) {
    const std::string s = "a肺ß😀";
    EXPECT_EQ(medqa::text::to_utf8(medqa::text::to_u32(s)), s);
    EXPECT_EQ(medqa::text::code_point_count(s), 4u);
}

TEST(Language, ParsesKnownTagsOnly) {
    EXPECT_EQ(medqa::parse_language("en"), Language::en);
    EXPECT_EQ(medqa::parse_language("ja"), Language::ja);
    EXPECT_THROW(medqa::parse_language("de"), std::invalid_argument);
}
