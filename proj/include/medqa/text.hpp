#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <stdexcept>

namespace medqa {

enum class Language { en, ja };

inline std::string_view to_string(Language lang) {
    return lang == Language::en ? "en" : "ja";
}

inline Language parse_language(std::string_view s) {
    if (s == "en") {
        return Language::en;
    }
    if (s == "ja") {
        return Language::ja;
    }
    throw std::invalid_argument("unknown language '" + std::string(s) + "' (expected en or ja)");
}

namespace text {

/// Decode UTF-8 into code points; ill-formed sequences become U+FFFD.
inline std::u32string to_u32(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    const auto* p = reinterpret_cast<const uint8_t*>(s.data());
    const int32_t n = static_cast<int32_t>(s.size());
    int32_t i = 0;
    while (i < n) {
        UChar32 c;
        U8_NEXT(p, i, n, c);
        out.push_back(c < 0 ? U'\uFFFD' : static_cast<char32_t>(c));
    }
    return out;
}

inline std::string to_utf8(std::u32string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char32_t c : s) {
        uint8_t buf[4];
        int32_t len = 0;
        UBool error = false;
        U8_APPEND(buf, len, 4, static_cast<UChar32>(c), error);
        if (error) {
            out += "\xEF\xBF\xBD";
        } else {
            out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
        }
    }
    return out;
}

inline std::size_t code_point_count(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        n += (c & 0xC0) != 0x80;
    }
    return n;
}

inline bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim_ascii(std::string_view s) {
    while (!s.empty() && is_ascii_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_ascii_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(s.substr(start));
            break;
        }
        std::string_view line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty()) {
        return s;
    }
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) {
        return 0;
    }
    std::size_t n = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

namespace detail {

inline const icu::Normalizer2& nfkc() {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status) || norm == nullptr) {
        throw std::runtime_error(std::string("ICU NFKC normalizer unavailable: ") + u_errorName(status));
    }
    return *norm;
}

inline icu::UnicodeString apply_nfkc(const icu::UnicodeString& in) {
    UErrorCode status = U_ZERO_ERROR;
    icu::UnicodeString out = nfkc().normalize(in, status);
    if (U_FAILURE(status)) {
        throw std::runtime_error(std::string("NFKC normalization failed: ") + u_errorName(status));
    }
    return out;
}

inline bool is_space(char32_t c) {
    return u_isUWhiteSpace(static_cast<UChar32>(c)) != 0;
}

inline bool is_terminal_punct(char32_t c) {
    return c == U'.' || c == U'。';
}

inline void trim(std::u32string& s) {
    std::size_t begin = 0;
    while (begin < s.size() && is_space(s[begin])) {
        ++begin;
    }
    std::size_t end = s.size();
    while (end > begin && is_space(s[end - 1])) {
        --end;
    }
    s = s.substr(begin, end - begin);
}

inline void collapse(std::u32string& s) {
    std::u32string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char32_t c : s) {
        if (is_space(c)) {
            if (!in_space) {
                out.push_back(U' ');
            }
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    s = std::move(out);
}

inline std::u32string from_icu(const icu::UnicodeString& u) {
    std::string utf8;
    u.toUTF8String(utf8);
    return to_u32(utf8);
}

inline icu::UnicodeString to_icu(std::u32string_view s) {
    return icu::UnicodeString::fromUTF8(to_utf8(s));
}

}  // namespace detail

/// True when s holds only Unicode whitespace.
inline bool is_blank(std::string_view s) {
    for (char32_t c : to_u32(s)) {
        if (!detail::is_space(c)) {
            return false;
        }
    }
    return true;
}

/// Answer-comparison normalization: NFKC, trim, collapse whitespace runs to a
/// single space, case-fold (English only), then drop terminal "." / "。".
/// Terminal punctuation is stripped as a run together with any whitespace it
/// exposes, which keeps the whole transform idempotent.
inline std::string normalize(std::string_view input, Language lang) {
    icu::UnicodeString u = detail::apply_nfkc(icu::UnicodeString::fromUTF8(
        icu::StringPiece(input.data(), static_cast<int32_t>(input.size()))));
    std::u32string s = detail::from_icu(u);
    detail::trim(s);
    detail::collapse(s);
    if (lang == Language::en) {
        icu::UnicodeString folded = detail::to_icu(s);
        folded.foldCase();
        // Folding can leave compatibility characters behind (e.g. U+1E9E).
        s = detail::from_icu(detail::apply_nfkc(folded));
        detail::trim(s);
        detail::collapse(s);
    }
    while (!s.empty() && (detail::is_terminal_punct(s.back()) || detail::is_space(s.back()))) {
        s.pop_back();
    }
    return to_utf8(s);
}

}  // namespace text
}  // namespace medqa
