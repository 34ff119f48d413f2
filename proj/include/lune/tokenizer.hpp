#pragma once

#include "lune/model.hpp"

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lune {

// Closed-vocabulary word tokenizer. Words are whitespace-separated; trailing
// punctuation (. , ? ! : ;) and a possessive "'s" become their own tokens and
// re-attach to the previous word on decode.
class Tokenizer {
public:
    // Ids 0..3 are <pad> <unk> <bos> <eos>; the rest are the sorted words of
    // `texts`. Throws ConfigError when the result exceeds `max_vocab`.
    static Tokenizer build(const std::vector<std::string>& texts, std::size_t max_vocab);
    static Tokenizer from_words(std::vector<std::string> words);

    static std::vector<std::string> split(std::string_view text);

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    TokenId id(std::string_view word) const;  // kUnkId when absent
    const std::string& word(TokenId id) const;
    bool contains(std::string_view word) const;
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace lune
