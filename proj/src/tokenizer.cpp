#include "lune/tokenizer.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace lune {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_punct(char c) {
    return c == '.' || c == ',' || c == '?' || c == '!' || c == ':' || c == ';';
}

bool attaches(const std::string& tok) {
    return tok == "'s" || (tok.size() == 1 && is_punct(tok[0]));
}

}  // namespace

std::vector<std::string> Tokenizer::split(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i) break;
        std::string word(text.substr(i, j - i));
        std::vector<std::string> tail;
        while (word.size() > 1 && is_punct(word.back())) {
            tail.emplace_back(1, word.back());
            word.pop_back();
        }
        if (word.size() > 2 && word.compare(word.size() - 2, 2, "'s") == 0) {
            tail.emplace_back("'s");
            word.resize(word.size() - 2);
        }
        out.push_back(std::move(word));
        out.insert(out.end(), tail.rbegin(), tail.rend());
        i = j;
    }
    return out;
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
    Tokenizer tok;
    tok.words_ = std::move(words);
    for (std::size_t i = 0; i < tok.words_.size(); ++i) {
        if (!tok.index_.emplace(tok.words_[i], static_cast<TokenId>(i)).second) {
            throw ConfigError("duplicate vocabulary entry '" + tok.words_[i] + "'");
        }
    }
    for (std::size_t i = 0; i < kSpecials.size(); ++i) {
        if (tok.words_.size() <= i || tok.words_[i] != kSpecials[i]) {
            throw ConfigError("vocabulary must start with <pad> <unk> <bos> <eos>");
        }
    }
    return tok;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, std::size_t max_vocab) {
    std::set<std::string> seen;
    for (const auto& t : texts) {
        for (auto& w : split(t)) seen.insert(std::move(w));
    }
    for (const auto& s : kSpecials) seen.erase(s);
    std::vector<std::string> words = kSpecials;
    words.insert(words.end(), seen.begin(), seen.end());
    if (words.size() > max_vocab) {
        throw ConfigError("vocabulary needs " + std::to_string(words.size()) +
                          " entries but model.vocab_size is " + std::to_string(max_vocab));
    }
    return from_words(std::move(words));
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& w : split(text)) ids.push_back(id(w));
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        const std::string& w = word(id);
        if (!out.empty() && !attaches(w)) out += ' ';
        out += w;
    }
    return out;
}

TokenId Tokenizer::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& Tokenizer::word(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) return words_[kUnkId];
    return words_[static_cast<std::size_t>(id)];
}

bool Tokenizer::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

}  // namespace lune
