#pragma once

#include "lune/ops.hpp"
#include "lune/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lune {

// Reserved token ids shared by the tokenizer and the decoder.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;

struct ModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 32;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// The six projection matrices of a decoder block that adapters can wrap.
enum class Projection { kQuery, kKey, kValue, kOutput, kUp, kDown };

inline constexpr Projection kAllProjections[] = {Projection::kQuery, Projection::kKey,
                                                 Projection::kValue, Projection::kOutput,
                                                 Projection::kUp,    Projection::kDown};

const char* projection_name(Projection p);  // "wq", "wk", ..., "up", "down"
std::optional<Projection> parse_projection(std::string_view name);
std::string weight_name(std::size_t layer, Projection p);  // e.g. "layers.2.attn.wq"

// Replaces selected projections during the forward pass. `x` is [T x d_in]
// and `w` the frozen [d_out x d_in] weight; the result must be [T x d_out].
class ProjectionHook {
public:
    virtual ~ProjectionHook() = default;
    virtual const Tensor* lookup(std::size_t layer, Projection p) const = 0;
    virtual Tensor apply(std::size_t layer, Projection p, const Tensor& x, const Tensor& w,
                         Rng* dropout_rng) const = 0;
};

// Anything that maps a token sequence to next-token logits.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual const ModelConfig& config() const = 0;
    virtual Tensor logits(std::span<const TokenId> ids) const = 0;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ForwardTrace {
    std::vector<Tensor> attention;  // per layer, [batch*heads x T x T]
};

// `batch` sequences of equal `length`, row-major. Causal attention means
// trailing padding never influences earlier positions.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<TokenId> ids;
};

// Decoder-only causal transformer: learned positions, pre-norm blocks,
// GELU feed-forward, untied output head, no biases.
class TransformerModel : public LanguageModel {
public:
    struct Block {
        Tensor ln1, wq, wk, wv, wo, ln2, up, down;
    };

    explicit TransformerModel(const ModelConfig& config);

    const ModelConfig& config() const override { return config_; }
    Tensor logits(std::span<const TokenId> ids) const override;

    // [T x V] logits for one sequence.
    Tensor forward(std::span<const TokenId> ids, const ProjectionHook* hook = nullptr,
                   Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr) const;
    // [batch*length x V] logits.
    Tensor forward_batch(const TokenBatch& batch, const ProjectionHook* hook = nullptr,
                         Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr) const;

    // Parameters in canonical order: tok_emb, pos_emb, layers.*, ln_f.g, head.
    std::vector<NamedTensor> parameters() const;
    Tensor parameter(const std::string& name) const;
    Tensor& projection(std::size_t layer, Projection p);
    const Tensor& projection(std::size_t layer, Projection p) const;

    void freeze();
    void set_trainable(bool trainable);
    bool frozen() const;

    // Deep copy with independent storage.
    TransformerModel clone() const;

    // FNV-1a over parameter names and raw float64 bytes.
    std::uint64_t checksum() const;

    std::size_t parameter_count() const;

private:
    ModelConfig config_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Block> blocks_;
    Tensor ln_f_, head_;
};

// Closed-form P for a config.
std::size_t count_params(const ModelConfig& config);

// Argmax decoding of up to `max_new` tokens after `prompt`. Stops before EOS
// or when the context is full. The EOS token is not included in the result.
std::vector<TokenId> generate_greedy(const LanguageModel& model, std::span<const TokenId> prompt,
                                     std::size_t max_new);

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

// Independent stream seed for one randomness domain ("corpus", "init",
// "shuffle", "dropout", "eval", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view domain);

}  // namespace lune
