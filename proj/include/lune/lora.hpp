#pragma once

#include "lune/model.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lune {

struct LoraTarget {
    std::size_t layer = 0;
    Projection projection = Projection::kQuery;
    std::size_t d_in = 0;
    std::size_t d_out = 0;

    std::string name() const { return weight_name(layer, projection); }
};

struct InjectionPlan {
    std::vector<LoraTarget> targets;
    std::size_t rank = 16;
    double alpha = 16.0;
    double dropout = 0.05;

    // Every layer, the listed projection kinds, alpha = rank.
    static InjectionPlan standard(const ModelConfig& config, std::size_t rank,
                                  std::vector<Projection> kinds = {std::begin(kAllProjections),
                                                                   std::end(kAllProjections)},
                                  double dropout = 0.05);

    // Rejects unknown layers, wrong dims, rank 0 or rank > min(d_in, d_out).
    void validate(const ModelConfig& config) const;
};

// P_LoRA = r * sum over targets of (d_in + d_out).
std::size_t count_lora_params(const InjectionPlan& plan);

// Low-rank update W = W0 + (alpha / r) * A B^T with A [d_out x r], B [d_in x r].
struct LoraAdapter {
    Tensor A;
    Tensor B;
    double alpha = 0.0;
    double dropout = 0.0;

    std::size_t rank() const { return A.dim(1); }
    double scaling() const { return alpha / static_cast<double>(rank()); }
};

// W0 x + (alpha/r) * A (B^T dropout(x)), evaluated row-wise on x [T x d_in].
Tensor lora_linear(const Tensor& x, const Tensor& w0, const LoraAdapter& adapter,
                   Rng* dropout_rng);

// (alpha/r) * A B^T as a plain [d_out x d_in] tensor.
Tensor lora_delta(const LoraAdapter& adapter);

// A frozen backbone with adapters attached to a set of projections.
class AdaptedModel : public LanguageModel, private ProjectionHook {
public:
    AdaptedModel(TransformerModel backbone, const InjectionPlan& plan,
                 std::map<std::string, LoraAdapter> adapters);

    const ModelConfig& config() const override { return backbone_.config(); }
    Tensor logits(std::span<const TokenId> ids) const override;

    // Training forward; dropout is active iff `dropout_rng` is non-null.
    Tensor forward(std::span<const TokenId> ids, Rng* dropout_rng) const;
    Tensor forward_batch(const TokenBatch& batch, Rng* dropout_rng) const;

    const TransformerModel& backbone() const { return backbone_; }
    const InjectionPlan& plan() const { return plan_; }
    const std::map<std::string, LoraAdapter>& adapters() const { return adapters_; }
    std::map<std::string, LoraAdapter>& adapters() { return adapters_; }

    // A then B per target, in plan order.
    std::vector<NamedTensor> trainable_parameters() const;
    std::size_t trainable_count() const;

    // Folds the updates into the backbone weights in place; unmerge restores
    // the retained W0 exactly. Double merge or unmerge raises StateError.
    void merge();
    void unmerge();
    bool merged() const { return merged_; }

    // Standalone model with W0 + delta in every targeted projection.
    TransformerModel merged_model() const;

private:
    const Tensor* lookup(std::size_t layer, Projection p) const override;
    Tensor apply(std::size_t layer, Projection p, const Tensor& x, const Tensor& w,
                 Rng* dropout_rng) const override;

    const LoraAdapter* find(std::size_t layer, Projection p) const;

    TransformerModel backbone_;
    InjectionPlan plan_;
    std::map<std::string, LoraAdapter> adapters_;
    std::map<std::string, Tensor> retained_;
    bool merged_ = false;
};

// Copies and freezes the backbone, then attaches fresh adapters:
// A ~ N(0, 0.02), B = 0, so the initial output equals the backbone's.
AdaptedModel inject(const TransformerModel& base, const InjectionPlan& plan, std::uint64_t seed);

}  // namespace lune
