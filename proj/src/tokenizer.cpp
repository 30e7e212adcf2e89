#include "raglc/tokenizer.hpp"

#include <cctype>

#include "raglc/types.hpp"

namespace raglc {

Route route_parse(std::string_view s) {
    std::string up;
    up.reserve(s.size());
    for (char c : s) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up == "RAG") return Route::RAG;
    if (up == "LC" || up == "LONG_CONTEXT") return Route::LC;
    throw std::invalid_argument("route_parse: expected RAG or LC, got \"" + std::string(s) + "\"");
}

std::size_t Tokenizer::count(std::string_view text) const { return tokenize(text).size(); }

std::string_view Tokenizer::prefix(std::string_view text, std::size_t max_tokens) const {
    auto spans = tokenize(text);
    if (spans.size() <= max_tokens) return text;
    if (max_tokens == 0) return text.substr(0, 0);
    return text.substr(0, spans[max_tokens - 1].end);
}

namespace {
// Word bytes: ASCII alphanumerics, '_', and anything >= 0x80 so multi-byte
// UTF-8 sequences are never split mid-character.
inline bool is_word_byte(unsigned char c) {
    return std::isalnum(c) || c == '_' || c >= 0x80;
}
}  // namespace

std::vector<TokenSpan> ApproxTokenizer::tokenize(std::string_view text) const {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            std::size_t j = i + 1;
            while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            spans.push_back({i, j});
            i = j;
        } else {
            spans.push_back({i, i + 1});  // punctuation: one byte, one token
            ++i;
        }
    }
    return spans;
}

std::size_t ApproxTokenizer::count(std::string_view text) const {
    std::size_t n = 0, i = 0;
    const std::size_t len = text.size();
    while (i < len) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        ++n;
        if (is_word_byte(c)) {
            ++i;
            while (i < len && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++i;
        }
    }
    return n;
}

const Tokenizer& default_tokenizer() {
    static const ApproxTokenizer tok;
    return tok;
}

}  // namespace raglc
