#pragma once

#include "lune/tokenizer.hpp"

#include <functional>
#include <string_view>
#include <vector>

namespace lune {

// [BOS] prompt target [EOS], split into next-token inputs and labels.
// `target_mask[i]` marks labels that belong to the target span (or EOS).
struct EncodedExample {
    std::vector<TokenId> input;
    std::vector<TokenId> labels;
    std::vector<std::uint8_t> target_mask;
};

EncodedExample encode_example(const Tokenizer& tok, std::string_view prompt, std::string_view target);
std::vector<TokenId> encode_prompt(const Tokenizer& tok, std::string_view prompt);

using BatchForward = std::function<Tensor(const TokenBatch&)>;

// Per-example mean NLL over the selected positions, then the batch mean.
// With `target_only` false every label position counts.
Tensor batch_loss(const BatchForward& forward, const std::vector<const EncodedExample*>& batch,
                  bool target_only);

// Per-example mean NLL of the target span, without recording gradients.
std::vector<double> example_losses(const BatchForward& forward, const std::vector<EncodedExample>& examples,
                                   std::size_t batch_size = 16);

}  // namespace lune
