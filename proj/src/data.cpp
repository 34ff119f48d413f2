#include "lune/data.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <cmath>

namespace lune {

std::vector<TokenId> encode_prompt(const Tokenizer& tok, std::string_view prompt) {
    std::vector<TokenId> ids{kBosId};
    for (TokenId id : tok.encode(prompt)) ids.push_back(id);
    return ids;
}

EncodedExample encode_example(const Tokenizer& tok, std::string_view prompt, std::string_view target) {
    std::vector<TokenId> seq = encode_prompt(tok, prompt);
    const std::size_t prompt_len = seq.size() - 1;
    for (TokenId id : tok.encode(target)) seq.push_back(id);
    seq.push_back(kEosId);
    EncodedExample ex;
    ex.input.assign(seq.begin(), seq.end() - 1);
    ex.labels.assign(seq.begin() + 1, seq.end());
    ex.target_mask.resize(ex.labels.size());
    for (std::size_t i = 0; i < ex.labels.size(); ++i) ex.target_mask[i] = i >= prompt_len ? 1 : 0;
    return ex;
}

namespace {

TokenBatch pack(const std::vector<const EncodedExample*>& batch) {
    std::size_t T = 0;
    for (const auto* ex : batch) T = std::max(T, ex->input.size());
    TokenBatch tb{batch.size(), T, std::vector<TokenId>(batch.size() * T, kPadId)};
    for (std::size_t b = 0; b < batch.size(); ++b) {
        std::copy(batch[b]->input.begin(), batch[b]->input.end(), tb.ids.begin() + static_cast<long>(b * T));
    }
    return tb;
}

}  // namespace

Tensor batch_loss(const BatchForward& forward, const std::vector<const EncodedExample*>& batch,
                  bool target_only) {
    if (batch.empty()) throw ContractError("batch_loss: empty batch");
    TokenBatch tb = pack(batch);
    const std::size_t T = tb.length;
    std::vector<TokenId> labels(batch.size() * T, kPadId);
    std::vector<double> weights(batch.size() * T, 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = *batch[b];
        std::size_t n = 0;
        for (std::size_t i = 0; i < ex.labels.size(); ++i) n += (!target_only || ex.target_mask[i]) ? 1 : 0;
        if (n == 0) throw ContractError("batch_loss: example with an empty loss span");
        const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(batch.size()));
        for (std::size_t i = 0; i < ex.labels.size(); ++i) {
            labels[b * T + i] = ex.labels[i];
            if (!target_only || ex.target_mask[i]) weights[b * T + i] = w;
        }
    }
    return weighted_nll(forward(tb), labels, weights);
}

std::vector<double> example_losses(const BatchForward& forward, const std::vector<EncodedExample>& examples,
                                   std::size_t batch_size) {
    NoGradGuard guard;
    std::vector<double> out;
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<const EncodedExample*> batch;
        for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
            batch.push_back(&examples[i]);
        }
        TokenBatch tb = pack(batch);
        Tensor logits = forward(tb);
        const std::size_t T = tb.length, V = logits.dim(1);
        auto d = logits.data();
        for (std::size_t b = 0; b < batch.size(); ++b) {
            double total = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < batch[b]->labels.size(); ++i) {
                if (!batch[b]->target_mask[i]) continue;
                const double* row = d.data() + (b * T + i) * V;
                const double mx = *std::max_element(row, row + V);
                double z = 0.0;
                for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
                total += std::log(z) - (row[static_cast<std::size_t>(batch[b]->labels[i])] - mx);
                ++n;
            }
            out.push_back(n ? total / static_cast<double>(n) : 0.0);
        }
    }
    return out;
}

}  // namespace lune
