#include <gtest/gtest.h>

#include <random>

#include "medqa/gestalt.hpp"
#include "medqa/text.hpp"
#include "oracle.hpp"

using medqa::gestalt_ratio;
using medqa::gestalt_similarity;
using medqa::lcs_block;

namespace {

std::size_t matched_u8(std::string_view a, std::string_view b) {
    return gestalt_ratio<char>(a, b).matched;
}

}  // namespace

TEST(Gestalt, WorkedValues) {
    EXPECT_EQ(oracle::matched(std::string("apple"), std::string("ape")), 3u);
    EXPECT_DOUBLE_EQ(gestalt_similarity("apple", "ape"), 0.75);
    EXPECT_EQ(oracle::matched(std::string("apple"), std::string("applesauce")), 5u);
    EXPECT_DOUBLE_EQ(gestalt_similarity("apple", "applesauce"), 2.0 / 3.0);
    EXPECT_EQ(oracle::matched(std::string("abcd"), std::string("bcda")), 3u);
    EXPECT_DOUBLE_EQ(gestalt_similarity("abcd", "bcda"), 0.75);
}

TEST(Gestalt, EmptyInputs) {
    EXPECT_DOUBLE_EQ(gestalt_similarity("", ""), 1.0);
    EXPECT_DOUBLE_EQ(gestalt_similarity("abc", ""), 0.0);
    EXPECT_DOUBLE_EQ(gestalt_similarity("", "abc"), 0.0);
}

TEST(Gestalt, IdenticalAndDisjoint) {
    EXPECT_DOUBLE_EQ(gestalt_similarity("pneumonia", "pneumonia"), 1.0);
    EXPECT_DOUBLE_EQ(gestalt_similarity("abc", "xyz"), 0.0);
}

TEST(Gestalt, LongestBlockTieBreak) {
    // "ab" and "cd" both length 2; earliest in a wins.
    auto m = lcs_block("abxcd", "cdyab");
    EXPECT_EQ(m.start_a, 0u);
    EXPECT_EQ(m.start_b, 3u);
    EXPECT_EQ(m.length, 2u);
    // Same start in a, two candidates in b: earliest in b wins.
    m = lcs_block("ab", "abab");
    EXPECT_EQ(m.start_a, 0u);
    EXPECT_EQ(m.start_b, 0u);
}

TEST(Gestalt, TieBreakChangesMatchCount) {
    // Choosing the first "ab" in b leaves nothing to match "c" on the right.
    const std::string a = "abc", b = "abxcab";
    EXPECT_EQ(matched_u8(a, b), oracle::matched(a, b));
}

TEST(Gestalt, CodePointsNotBytes) {
    const auto a = medqa::text::to_u32("肺炎");
    const auto b = medqa::text::to_u32("肺癌");
    const auto r = gestalt_ratio<char32_t>(a, b);
    EXPECT_EQ(r.matched, 1u);
    EXPECT_EQ(r.total, 4u);
    EXPECT_DOUBLE_EQ(r.value(), 0.5);
}

TEST(Gestalt, LongInputsUseHeapScratch) {
    std::string a(300, 'a'), b(200, 'a');
    b[100] = 'b';
    EXPECT_EQ(matched_u8(a, b), oracle::matched(a, b));
}

TEST(GestaltProperty, BoundsSymmetricTotalsAndOracle) {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> len(0, 24), ch(0, 3);
    for (int n = 0; n < 3000; ++n) {
        std::string a, b;
        for (int k = len(rng); k > 0; --k) a += static_cast<char>('a' + ch(rng));
        for (int k = len(rng); k > 0; --k) b += static_cast<char>('a' + ch(rng));
        const auto r = gestalt_ratio<char>(a, b);
        ASSERT_EQ(r.total, a.size() + b.size());
        ASSERT_LE(2 * r.matched, r.total);
        ASSERT_EQ(r.matched, oracle::matched(a, b)) << a << " / " << b;
        const double s = r.value();
        ASSERT_GE(s, 0.0);
        ASSERT_LE(s, 1.0);
        ASSERT_EQ(s == 1.0, a == b);
    }
}

TEST(GestaltProperty, ExhaustiveShortAlphabet) {
    // All {a,b,c} strings up to length 5; the acceptance suite goes to 8.
    std::vector<std::string> all = {""};
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i].size() < 5) {
            for (char c : {'a', 'b', 'c'}) all.push_back(all[i] + c);
        }
    }
    for (const auto& a : all) {
        for (const auto& b : all) {
            ASSERT_EQ(matched_u8(a, b), oracle::matched(a, b)) << a << " / " << b;
        }
    }
}

TEST(Gestalt, LongestBlockExample) {
    EXPECT_EQ(lcs_block("apple", "ape"), (medqa::MatchBlock{0, 0, 2}));
    EXPECT_EQ(lcs_block("", "ape").length, 0u);
}

TEST(GestaltProperty, LongestBlockBoundsSimilarity) {
    std::mt19937 rng(13);
    std::uniform_int_distribution<int> len(0, 30), ch(0, 2);
    for (int n = 0; n < 3000; ++n) {
        std::string a, b;
        for (int k = len(rng); k > 0; --k) a += static_cast<char>('a' + ch(rng));
        for (int k = len(rng); k > 0; --k) b += static_cast<char>('a' + ch(rng));
        const auto r = gestalt_ratio<char>(a, b);
        const auto block = lcs_block(a, b);
        const auto ob = oracle::longest_block(a, 0, a.size(), b, 0, b.size());
        ASSERT_EQ(block.length, ob.k);
        if (ob.k > 0) {
            ASSERT_EQ(block.start_a, ob.i);
            ASSERT_EQ(block.start_b, ob.j);
        }
        ASSERT_LE(block.length, r.matched);
        ASSERT_LE(r.matched, std::min(a.size(), b.size()));
    }
}

TEST(GestaltProperty, BitParallelAgreesWithDynamicProgram) {
    std::mt19937 rng(17);
    std::uniform_int_distribution<int> len(1, 64), ch(0, 3);
    for (int n = 0; n < 2000; ++n) {
        std::u32string a, b;
        for (int k = len(rng) * 2; k > 0; --k) a += static_cast<char32_t>(U'あ' + ch(rng));
        for (int k = len(rng); k > 0; --k) b += static_cast<char32_t>(U'あ' + ch(rng));
        const std::u32string_view va(a), vb(b);
        ASSERT_EQ(medqa::detail::matched_characters_bits(va, vb), medqa::detail::matched_characters_dp(va, vb));
    }
}

TEST(GestaltProperty, InputsBeyondBitWidthMatchOracle) {
    std::mt19937 rng(19);
    std::uniform_int_distribution<int> len(60, 140), ch(0, 2);
    for (int n = 0; n < 200; ++n) {
        std::string a, b;
        for (int k = len(rng); k > 0; --k) a += static_cast<char>('a' + ch(rng));
        for (int k = len(rng); k > 0; --k) b += static_cast<char>('a' + ch(rng));
        ASSERT_EQ(matched_u8(a, b), oracle::matched(a, b)) << a << " / " << b;
    }
}
