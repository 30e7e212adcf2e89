#include <string>

#include "doctest.h"
#include "raglc/tokenizer.hpp"

using namespace raglc;

TEST_CASE("word runs, punctuation, and UTF-8 runs tokenize predictably") {
    const auto& tok = default_tokenizer();

    // "Hello, world!" -> Hello , world !
    CHECK(tok.count("Hello, world!") == 4);
    // Underscores and digits extend a word run.
    CHECK(tok.count("snake_case_2 beats kebab-case") == 5);  // kebab - case
    // Bytes >= 0x80 count as word bytes, so an accented word stays whole.
    CHECK(tok.count("caf\xc3\xa9 bar") == 2);
}

TEST_CASE("UTF-8 words are single tokens, not per-byte fragments") {
    const auto& tok = default_tokenizer();
    const auto spans = tok.tokenize("caf\xc3\xa9");
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].begin == 0);
    CHECK(spans[0].end == 5);
}

TEST_CASE("spans are ordered, non-overlapping, and skip whitespace") {
    const auto& tok = default_tokenizer();
    const std::string text = "  a bb  ccc\n\tdd ";
    const auto spans = tok.tokenize(text);
    REQUIRE(spans.size() == 4);
    std::size_t last_end = 0;
    for (const auto& s : spans) {
        CHECK(s.begin >= last_end);
        CHECK(s.end > s.begin);
        last_end = s.end;
    }
    CHECK(text.substr(spans[2].begin, spans[2].end - spans[2].begin) == "ccc");
}

TEST_CASE("prefix cuts at a token boundary and returns original bytes") {
    const auto& tok = default_tokenizer();
    const std::string text = "alpha beta gamma delta";
    CHECK(tok.prefix(text, 2) == "alpha beta");
    CHECK(tok.prefix(text, 0) == "");
    CHECK(tok.prefix(text, 99) == text);     // more budget than tokens: whole text
    CHECK(tok.prefix("", 5) == "");
}

TEST_CASE("count equals tokenize().size() for mixed content") {
    const auto& tok = default_tokenizer();
    const std::string text = "Q4 revenue (unaudited): $1,234.56 -- up 7%!";
    CHECK(tok.count(text) == tok.tokenize(text).size());
}
