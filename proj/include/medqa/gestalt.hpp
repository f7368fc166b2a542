#pragma once

// Ratcliff-Obershelp ("gestalt") pattern matching over arbitrary code-unit
// sequences. Callers that need character semantics pass decoded code points
// (std::u32string_view); tests exercise the same templates over plain char.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace medqa {

struct MatchBlock {
    std::size_t start_a = 0;
    std::size_t start_b = 0;
    std::size_t length = 0;

    friend bool operator==(const MatchBlock&, const MatchBlock&) = default;
};

/// Ratio 2M/T kept as integers so callers can compare exactly.
struct GestaltRatio {
    std::size_t matched = 0;  // M
    std::size_t total = 0;    // T = |a| + |b|

    double value() const {
        return total == 0 ? 1.0 : 2.0 * static_cast<double>(matched) / static_cast<double>(total);
    }
};

namespace detail {

// Reusable scratch for the longest-common-block dynamic program. Rows are
// indexed by position in b.
class BlockScratch {
public:
    std::uint32_t* row(std::size_t n) {
        if (n <= kInline) {
            return inline_;
        }
        heap_.resize(n);
        return heap_.data();
    }

private:
    static constexpr std::size_t kInline = 128;
    std::uint32_t inline_[kInline];
    std::vector<std::uint32_t> heap_;
};

// LIFO stack that stays on the call stack for typical inputs.
template <class T>
class WorkStack {
public:
    bool empty() const { return size_ == 0; }

    void push(T v) {
        if (size_ < kInline) {
            inline_[size_] = v;
        } else {
            spill_.push_back(v);
        }
        ++size_;
    }

    T pop() {
        --size_;
        if (size_ < kInline) {
            return inline_[size_];
        }
        T v = spill_.back();
        spill_.pop_back();
        return v;
    }

private:
    static constexpr std::size_t kInline = 32;
    T inline_[kInline];
    std::vector<T> spill_;
    std::size_t size_ = 0;
};

template <class CharT>
MatchBlock longest_block(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b,
                         BlockScratch& scratch) {
    MatchBlock best;
    if (a.empty() || b.empty()) {
        return best;
    }
    std::uint32_t* run = scratch.row(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) {
        run[j] = 0;
    }
    // run[j] is the length of the common run ending at a[i], b[j]; diag
    // carries the previous row's run[j - 1]. Scanning i then j in order and
    // replacing only on a strictly longer run keeps the smallest end in a,
    // hence the smallest start_a, and within it the smallest start_b.
    std::uint32_t best_len = 0;
    std::size_t best_i = 0, best_j = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const CharT ca = a[i];
        std::uint32_t diag = 0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const std::uint32_t up = run[j];
            const std::uint32_t len = (b[j] == ca) ? diag + 1 : 0;
            run[j] = len;
            diag = up;
            if (len > best_len) {
                best_len = len;
                best_i = i;
                best_j = j;
            }
        }
    }
    if (best_len != 0) {
        best = {best_i + 1 - best_len, best_j + 1 - best_len, best_len};
    }
    return best;
}

// Bit-parallel matcher for b.size() <= 64, used for the common case of
// scoring text against short answer choices. eq[i] has bit j set when
// a[i] == b[j]; a sub-problem over a[alo, ahi) x b[blo, bhi) reads the same
// masks through a window, so the comparison work happens once per call.
//
// Within a row, level k (stored at index k - 1) marks the columns where a
// common run of length >= k ends. Level k + 1 of row i is level k of row i - 1
// shifted by one column and intersected with the row's equality mask.
template <class CharT>
class BitMatcher {
public:
    static constexpr std::size_t kMaxB = 64;

    BitMatcher(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
        std::uint64_t* eq = a.size() <= kInlineRows ? inline_eq_ : (heap_eq_.resize(a.size()), heap_eq_.data());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const CharT ca = a[i];
            std::uint64_t mask = 0;
            for (std::size_t j = 0; j < b.size(); ++j) {
                mask |= static_cast<std::uint64_t>(b[j] == ca) << j;
            }
            eq[i] = mask;
        }
        eq_ = eq;
    }

    BitMatcher(const BitMatcher&) = delete;
    BitMatcher& operator=(const BitMatcher&) = delete;

    MatchBlock longest(std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) {
        MatchBlock best;
        if (alo >= ahi || blo >= bhi) {
            return best;
        }
        const std::size_t width = bhi - blo;
        const std::uint64_t window = (width == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << width) - 1)) << blo;
        std::uint64_t* prev = levels_a_;
        std::uint64_t* cur = levels_b_;
        std::size_t prev_top = 0;
        std::size_t best_i = 0;
        std::size_t best_j = 0;
        for (std::size_t i = alo; i < ahi; ++i) {
            const std::uint64_t e = eq_[i] & window;
            std::size_t top = 0;
            if (e != 0) {
                cur[0] = e;
                top = 1;
                while (top <= prev_top) {
                    const std::uint64_t next = e & (prev[top - 1] << 1);
                    if (next == 0) {
                        break;
                    }
                    cur[top++] = next;
                }
            }
            if (top > best.length) {
                best.length = top;
                best_i = i;
                best_j = static_cast<std::size_t>(std::countr_zero(cur[top - 1]));
            }
            std::swap(prev, cur);
            prev_top = top;
        }
        if (best.length != 0) {
            best.start_a = best_i + 1 - best.length;
            best.start_b = best_j + 1 - best.length;
        }
        return best;
    }

private:
    static constexpr std::size_t kInlineRows = 128;
    const std::uint64_t* eq_ = nullptr;
    std::uint64_t inline_eq_[kInlineRows];
    std::vector<std::uint64_t> heap_eq_;
    std::uint64_t levels_a_[kMaxB];
    std::uint64_t levels_b_[kMaxB];
};

}  // namespace detail

/// Longest common contiguous block of a and b. Ties prefer the smallest
/// start in a, then the smallest start in b. Length 0 when nothing matches.
template <class CharT>
MatchBlock lcs_block(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    detail::BlockScratch scratch;
    return detail::longest_block(a, b, scratch);
}

inline MatchBlock lcs_block(std::string_view a, std::string_view b) {
    return lcs_block<char>(a, b);
}

inline MatchBlock lcs_block(std::u32string_view a, std::u32string_view b) {
    return lcs_block<char32_t>(a, b);
}

namespace detail {

// Recursive block matching over index ranges: take the longest block, then
// recurse on the left remainders and on the right remainders. An explicit
// work list replaces recursion, whose depth on long responses is unbounded.
template <class FindLongest>
std::size_t match_ranges(std::size_t na, std::size_t nb, FindLongest&& longest) {
    struct Frame {  // trivially constructible so the inline stack costs nothing to set up
        std::size_t alo, ahi, blo, bhi;
    };
    WorkStack<Frame> pending;
    pending.push({0, na, 0, nb});
    std::size_t matched = 0;
    while (!pending.empty()) {
        const Frame f = pending.pop();
        const MatchBlock block = longest(f.alo, f.ahi, f.blo, f.bhi);
        if (block.length == 0) {
            continue;
        }
        matched += block.length;
        const std::size_t a_tail = block.start_a + block.length;
        const std::size_t b_tail = block.start_b + block.length;
        if (a_tail < f.ahi && b_tail < f.bhi) {
            pending.push({a_tail, f.ahi, b_tail, f.bhi});
        }
        if (block.start_a > f.alo && block.start_b > f.blo) {
            pending.push({f.alo, block.start_a, f.blo, block.start_b});
        }
    }
    return matched;
}

/// Matched characters using the dynamic program for every block search.
template <class CharT>
std::size_t matched_characters_dp(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    BlockScratch scratch;
    return match_ranges(a.size(), b.size(), [&](std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) {
        MatchBlock m = longest_block(a.substr(alo, ahi - alo), b.substr(blo, bhi - blo), scratch);
        m.start_a += alo;
        m.start_b += blo;
        return m;
    });
}

/// Matched characters using the bit-parallel search; requires b.size() <= 64.
template <class CharT>
std::size_t matched_characters_bits(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    BitMatcher<CharT> matcher(a, b);
    return match_ranges(a.size(), b.size(), [&](std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) {
        return matcher.longest(alo, ahi, blo, bhi);
    });
}

}  // namespace detail

/// Total characters matched by recursive block matching: take the longest
/// block, then recurse on the left remainders and on the right remainders.
template <class CharT>
std::size_t matched_characters(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    if (a.empty() || b.empty()) {
        return 0;
    }
    if (b.size() <= detail::BitMatcher<CharT>::kMaxB) {
        return detail::matched_characters_bits(a, b);
    }
    return detail::matched_characters_dp(a, b);
}

template <class CharT>
GestaltRatio gestalt_ratio(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    return {matched_characters(a, b), a.size() + b.size()};
}

/// 2M / (|a| + |b|); two empty inputs are fully similar.
template <class CharT>
double gestalt_similarity(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
    return gestalt_ratio(a, b).value();
}

inline double gestalt_similarity(std::string_view a, std::string_view b) {
    return gestalt_similarity<char>(a, b);
}

inline double gestalt_similarity(std::u32string_view a, std::u32string_view b) {
    return gestalt_similarity<char32_t>(a, b);
}

}  // namespace medqa
