#pragma once

// Reader for the TOML subset used by run configs and benchmark manifests:
// [table], [[array.of.tables]], dotted and quoted keys, basic/literal and
// multi-line strings, integers, floats, booleans, arrays and inline tables.
// Documents are returned as JSON values (tables -> objects).

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medqa/text.hpp"

namespace medqa::toml {

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& message, const std::string& source = {})
        : std::runtime_error((source.empty() ? "" : source + ": ") + "line " + std::to_string(line) + ": " +
                             message),
          line_(line),
          message_(message) {}
    std::size_t line() const { return line_; }
    const std::string& message() const { return message_; }

private:
    std::size_t line_;
    std::string message_;
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    nlohmann::json parse() {
        nlohmann::json root = nlohmann::json::object();
        nlohmann::json* current = &root;
        while (true) {
            skip_ws_comments_newlines();
            if (eof()) {
                break;
            }
            if (peek() == '[') {
                current = header(root);
            } else {
                key_value(*current);
            }
            expect_line_end();
        }
        return root;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, msg); }

    bool eof() const { return pos_ >= src_.size(); }
    char peek(std::size_t ahead = 0) const { return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0'; }

    char get() {
        const char c = src_[pos_++];
        if (c == '\n') {
            ++line_;
        }
        return c;
    }

    bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

    void skip_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t')) {
            ++pos_;
        }
    }

    void skip_comment() {
        if (peek() == '#') {
            while (!eof() && peek() != '\n') {
                ++pos_;
            }
        }
    }

    void skip_ws_comments_newlines() {
        while (!eof()) {
            skip_ws();
            skip_comment();
            if (peek() == '\n') {
                get();
            } else if (peek() == '\r' && peek(1) == '\n') {
                ++pos_;
                get();
            } else {
                return;
            }
        }
    }

    void expect_line_end() {
        skip_ws();
        skip_comment();
        if (eof()) {
            return;
        }
        if (peek() == '\r') {
            ++pos_;
        }
        if (peek() != '\n') {
            fail("expected end of line");
        }
        get();
    }

    static bool bare_key_char(char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    }

    std::string simple_key() {
        skip_ws();
        if (peek() == '"') {
            return basic_string();
        }
        if (peek() == '\'') {
            return literal_string();
        }
        const std::size_t start = pos_;
        while (!eof() && bare_key_char(peek())) {
            ++pos_;
        }
        if (start == pos_) {
            fail("expected a key");
        }
        return std::string(src_.substr(start, pos_ - start));
    }

    std::vector<std::string> dotted_key() {
        std::vector<std::string> parts = {simple_key()};
        skip_ws();
        while (peek() == '.') {
            ++pos_;
            parts.push_back(simple_key());
            skip_ws();
        }
        return parts;
    }

    nlohmann::json* descend(nlohmann::json* node, const std::string& key) {
        auto& child = (*node)[key];
        if (child.is_null()) {
            child = nlohmann::json::object();
        }
        if (child.is_array()) {
            if (child.empty() || !child.back().is_object()) {
                fail("key " + key + " is not a table");
            }
            return &child.back();
        }
        if (!child.is_object()) {
            fail("key " + key + " is not a table");
        }
        return &child;
    }

    nlohmann::json* header(nlohmann::json& root) {
        const bool array = starts_with("[[");
        pos_ += array ? 2 : 1;
        const auto parts = dotted_key();
        if (array ? !starts_with("]]") : peek() != ']') {
            fail("unterminated table header");
        }
        pos_ += array ? 2 : 1;
        nlohmann::json* node = &root;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            node = descend(node, parts[i]);
        }
        const std::string& last = parts.back();
        if (array) {
            auto& arr = (*node)[last];
            if (arr.is_null()) {
                arr = nlohmann::json::array();
            }
            if (!arr.is_array()) {
                fail("key " + last + " is not an array of tables");
            }
            arr.push_back(nlohmann::json::object());
            return &arr.back();
        }
        if (node->contains(last) && (*node)[last].is_object() && !(*node)[last].empty()) {
            fail("table [" + last + "] defined twice");
        }
        return descend(node, last);
    }

    void key_value(nlohmann::json& table) {
        const auto parts = dotted_key();
        skip_ws();
        if (peek() != '=') {
            fail("expected '=' after key");
        }
        ++pos_;
        skip_ws();
        nlohmann::json* node = &table;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            node = descend(node, parts[i]);
        }
        if (node->contains(parts.back())) {
            fail("duplicate key " + parts.back());
        }
        (*node)[parts.back()] = value();
    }

    nlohmann::json value() {
        const char c = peek();
        if (starts_with("\"\"\"")) {
            return multiline_basic_string();
        }
        if (starts_with("'''")) {
            return multiline_literal_string();
        }
        if (c == '"') {
            return basic_string();
        }
        if (c == '\'') {
            return literal_string();
        }
        if (c == '[') {
            return array();
        }
        if (c == '{') {
            return inline_table();
        }
        if (starts_with("true")) {
            pos_ += 4;
            return true;
        }
        if (starts_with("false")) {
            pos_ += 5;
            return false;
        }
        return number();
    }

    void append_utf8(std::string& out, std::uint32_t cp) {
        out += text::to_utf8(std::u32string(1, static_cast<char32_t>(cp)));
    }

    void escape(std::string& out) {
        const char e = get();
        switch (e) {
            case 'b': out += '\b'; break;
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'f': out += '\f'; break;
            case 'r': out += '\r'; break;
            case '"': out += '"'; break;
            case '\\': out += '\\'; break;
            case 'u':
            case 'U': {
                const std::size_t len = e == 'u' ? 4 : 8;
                std::uint32_t cp = 0;
                const auto* first = src_.data() + pos_;
                auto [ptr, ec] = std::from_chars(first, first + len, cp, 16);
                if (ec != std::errc() || ptr != first + len) {
                    fail("bad unicode escape");
                }
                pos_ += len;
                append_utf8(out, cp);
                break;
            }
            default: fail(std::string("unknown escape \\") + e);
        }
    }

    std::string basic_string() {
        ++pos_;
        std::string out;
        while (true) {
            if (eof() || peek() == '\n') {
                fail("unterminated string");
            }
            const char c = get();
            if (c == '"') {
                return out;
            }
            if (c == '\\') {
                escape(out);
            } else {
                out += c;
            }
        }
    }

    std::string literal_string() {
        ++pos_;
        const std::size_t start = pos_;
        while (!eof() && peek() != '\'' && peek() != '\n') {
            ++pos_;
        }
        if (peek() != '\'') {
            fail("unterminated literal string");
        }
        std::string out(src_.substr(start, pos_ - start));
        ++pos_;
        return out;
    }

    void skip_leading_newline() {
        if (peek() == '\n') {
            get();
        } else if (peek() == '\r' && peek(1) == '\n') {
            ++pos_;
            get();
        }
    }

    std::string multiline_basic_string() {
        pos_ += 3;
        skip_leading_newline();
        std::string out;
        while (true) {
            if (eof()) {
                fail("unterminated multi-line string");
            }
            if (starts_with("\"\"\"")) {
                pos_ += 3;
                return out;
            }
            const char c = get();
            if (c == '\\') {
                if (peek() == '\n' || peek() == ' ' || peek() == '\t' || peek() == '\r') {
                    while (!eof() && (peek() == '\n' || peek() == ' ' || peek() == '\t' || peek() == '\r')) {
                        get();
                    }
                } else {
                    escape(out);
                }
            } else {
                out += c;
            }
        }
    }

    std::string multiline_literal_string() {
        pos_ += 3;
        skip_leading_newline();
        std::string out;
        while (true) {
            if (eof()) {
                fail("unterminated multi-line string");
            }
            if (starts_with("'''")) {
                pos_ += 3;
                return out;
            }
            out += get();
        }
    }

    nlohmann::json number() {
        const std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                          peek() == '.' || peek() == '_')) {
            ++pos_;
        }
        std::string tok;
        for (char c : src_.substr(start, pos_ - start)) {
            if (c != '_') {
                tok += c;
            }
        }
        if (tok.empty()) {
            fail("expected a value");
        }
        const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan" ||
                              tok == "+inf" || tok == "-inf";
        const char* first = tok.data();
        const char* last = tok.data() + tok.size();
        if (*first == '+') {
            ++first;
        }
        if (is_float) {
            double d = 0;
            auto [ptr, ec] = std::from_chars(first, last, d);
            if (ec != std::errc() || ptr != last) {
                fail("invalid float '" + tok + "'");
            }
            return d;
        }
        std::int64_t i = 0;
        auto [ptr, ec] = std::from_chars(first, last, i);
        if (ec != std::errc() || ptr != last) {
            fail("invalid value '" + tok + "'");
        }
        return i;
    }

    nlohmann::json array() {
        ++pos_;
        nlohmann::json arr = nlohmann::json::array();
        while (true) {
            skip_ws_comments_newlines();
            if (peek() == ']') {
                ++pos_;
                return arr;
            }
            arr.push_back(value());
            skip_ws_comments_newlines();
            if (peek() == ',') {
                ++pos_;
            } else if (peek() != ']') {
                fail("expected ',' or ']' in array");
            }
        }
    }

    nlohmann::json inline_table() {
        ++pos_;
        nlohmann::json table = nlohmann::json::object();
        skip_ws();
        if (peek() == '}') {
            ++pos_;
            return table;
        }
        while (true) {
            key_value(table);
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            if (peek() == '}') {
                ++pos_;
                return table;
            }
            fail("expected ',' or '}' in inline table");
        }
    }
};

}  // namespace detail

inline nlohmann::json parse(std::string_view src) {
    return detail::Parser(src).parse();
}

inline nlohmann::json parse_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read config " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse(buf.str());
    } catch (const ParseError& e) {
        throw ParseError(e.line(), e.message(), path.string());
    }
}

}  // namespace medqa::toml
