#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace raglc {

/// Half-open byte range [begin, end) into the tokenized text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Token counting and slicing contract. All length budgets in the library
/// (chunk sizes, window checks, head snippets) are measured through one of
/// these, so swapping in a model-specific implementation changes every
/// consumer consistently.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    /// Byte-offset spans of every token, in order, non-overlapping.
    virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;

    /// Token count; default derives from tokenize(), override if cheaper.
    virtual std::size_t count(std::string_view text) const;

    /// Longest prefix of `text` containing at most `max_tokens` tokens,
    /// cut at a token boundary (returns the original bytes, no re-encoding).
    std::string_view prefix(std::string_view text, std::size_t max_tokens) const;
};

/// Default tokenizer: deterministic whitespace-and-punctuation segmentation.
/// Maximal runs of [A-Za-z0-9_] and of bytes >= 0x80 form one token each
/// (so UTF-8 words stay whole); every other non-space byte is its own token.
/// The same input yields the same spans on every platform.
class ApproxTokenizer final : public Tokenizer {
public:
    std::vector<TokenSpan> tokenize(std::string_view text) const override;
    std::size_t count(std::string_view text) const override;
};

/// Process-wide default instance (stateless, safe to share).
const Tokenizer& default_tokenizer();

}  // namespace raglc
