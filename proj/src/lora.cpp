#include "lune/lora.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <random>

namespace lune {

InjectionPlan InjectionPlan::standard(const ModelConfig& config, std::size_t rank,
                                      std::vector<Projection> kinds, double dropout) {
    InjectionPlan plan;
    plan.rank = rank;
    plan.alpha = static_cast<double>(rank);
    plan.dropout = dropout;
    const std::size_t d = config.d_model, f = config.d_ff;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        for (Projection p : kinds) {
            LoraTarget t{l, p, d, d};
            if (p == Projection::kUp) t.d_out = f;
            if (p == Projection::kDown) t.d_in = f;
            plan.targets.push_back(t);
        }
    }
    return plan;
}

void InjectionPlan::validate(const ModelConfig& config) const {
    if (targets.empty()) throw ConfigError("injection plan has no targets");
    if (rank == 0) throw ConfigError("LoRA rank must be positive");
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("LoRA dropout must be in [0, 1), got " + std::to_string(dropout));
    }
    for (const auto& t : targets) {
        if (t.layer >= config.n_layers) {
            throw ConfigError("LoRA target '" + t.name() + "': layer out of range (model has " +
                              std::to_string(config.n_layers) + " layers)");
        }
        std::size_t d_in = config.d_model, d_out = config.d_model;
        if (t.projection == Projection::kUp) d_out = config.d_ff;
        if (t.projection == Projection::kDown) d_in = config.d_ff;
        if (t.d_in != d_in || t.d_out != d_out) {
            throw DimensionError("LoRA target '" + t.name() + "' declared " +
                                 std::to_string(t.d_out) + "x" + std::to_string(t.d_in) +
                                 " but weight is " + std::to_string(d_out) + "x" +
                                 std::to_string(d_in));
        }
        if (rank > std::min(t.d_in, t.d_out)) {
            throw ConfigError("LoRA rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                              std::to_string(std::min(t.d_in, t.d_out)) + " for '" + t.name() +
                              "'");
        }
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        for (std::size_t j = i + 1; j < targets.size(); ++j) {
            if (targets[i].name() == targets[j].name()) {
                throw ConfigError("LoRA target '" + targets[i].name() + "' listed twice");
            }
        }
    }
}

std::size_t count_lora_params(const InjectionPlan& plan) {
    std::size_t n = 0;
    for (const auto& t : plan.targets) n += t.d_in + t.d_out;
    return plan.rank * n;
}

Tensor lora_linear(const Tensor& x, const Tensor& w0, const LoraAdapter& adapter,
                   Rng* dropout_rng) {
    Tensor base = linear(x, w0);
    Tensor xin = (dropout_rng && adapter.dropout > 0.0) ? dropout(x, adapter.dropout, *dropout_rng) : x;
    Tensor low = linear(matmul(xin, adapter.B), adapter.A);  // [T x r] -> [T x d_out]
    return add(base, scale(low, adapter.scaling()));
}

Tensor lora_delta(const LoraAdapter& adapter) {
    return scale(matmul(adapter.A, transpose(adapter.B)), adapter.scaling());
}

AdaptedModel::AdaptedModel(TransformerModel backbone, const InjectionPlan& plan,
                           std::map<std::string, LoraAdapter> adapters)
    : backbone_(std::move(backbone)), plan_(plan), adapters_(std::move(adapters)) {
    plan_.validate(backbone_.config());
    for (const auto& t : plan_.targets) {
        auto it = adapters_.find(t.name());
        if (it == adapters_.end()) throw ConfigError("missing adapter for '" + t.name() + "'");
        const auto& a = it->second;
        if (a.A.shape() != Shape{t.d_out, plan_.rank} || a.B.shape() != Shape{t.d_in, plan_.rank}) {
            throw DimensionError("adapter '" + t.name() + "' has A " + shape_str(a.A.shape()) +
                                 ", B " + shape_str(a.B.shape()) + "; expected A [" +
                                 std::to_string(t.d_out) + "x" + std::to_string(plan_.rank) +
                                 "], B [" + std::to_string(t.d_in) + "x" +
                                 std::to_string(plan_.rank) + "]");
        }
    }
    if (adapters_.size() != plan_.targets.size()) {
        throw ConfigError("adapter set does not match the injection plan");
    }
    backbone_.freeze();
}

const LoraAdapter* AdaptedModel::find(std::size_t layer, Projection p) const {
    auto it = adapters_.find(weight_name(layer, p));
    return it == adapters_.end() ? nullptr : &it->second;
}

const Tensor* AdaptedModel::lookup(std::size_t layer, Projection p) const {
    if (merged_) return nullptr;
    const LoraAdapter* a = find(layer, p);
    return a ? &a->A : nullptr;
}

Tensor AdaptedModel::apply(std::size_t layer, Projection p, const Tensor& x, const Tensor& w,
                           Rng* dropout_rng) const {
    return lora_linear(x, w, *find(layer, p), dropout_rng);
}

Tensor AdaptedModel::logits(std::span<const TokenId> ids) const {
    NoGradGuard guard;
    return forward(ids, nullptr);
}

Tensor AdaptedModel::forward(std::span<const TokenId> ids, Rng* dropout_rng) const {
    return backbone_.forward(ids, this, dropout_rng);
}

Tensor AdaptedModel::forward_batch(const TokenBatch& batch, Rng* dropout_rng) const {
    return backbone_.forward_batch(batch, this, dropout_rng);
}

std::vector<NamedTensor> AdaptedModel::trainable_parameters() const {
    std::vector<NamedTensor> out;
    for (const auto& t : plan_.targets) {
        const auto& a = adapters_.at(t.name());
        out.push_back({"lora." + t.name() + ".A", a.A});
        out.push_back({"lora." + t.name() + ".B", a.B});
    }
    return out;
}

std::size_t AdaptedModel::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : trainable_parameters()) n += p.tensor.numel();
    return n;
}

void AdaptedModel::merge() {
    if (merged_) throw StateError("adapters are already merged");
    NoGradGuard guard;
    for (const auto& t : plan_.targets) {
        Tensor& w = backbone_.projection(t.layer, t.projection);
        retained_[t.name()] = w.clone();
        Tensor delta = lora_delta(adapters_.at(t.name()));
        auto wd = w.data();
        auto dd = delta.data();
        for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += dd[i];
    }
    merged_ = true;
}

void AdaptedModel::unmerge() {
    if (!merged_) throw StateError("adapters are not merged");
    for (const auto& t : plan_.targets) {
        Tensor& w = backbone_.projection(t.layer, t.projection);
        const Tensor& keep = retained_.at(t.name());
        std::copy(keep.data().begin(), keep.data().end(), w.data().begin());
    }
    retained_.clear();
    merged_ = false;
}

TransformerModel AdaptedModel::merged_model() const {
    if (merged_) throw StateError("merged_model() on an already merged adapter set");
    NoGradGuard guard;
    TransformerModel out = backbone_.clone();
    for (const auto& t : plan_.targets) {
        Tensor& w = out.projection(t.layer, t.projection);
        Tensor delta = lora_delta(adapters_.at(t.name()));
        auto wd = w.data();
        auto dd = delta.data();
        for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += dd[i];
    }
    return out;
}

AdaptedModel inject(const TransformerModel& base, const InjectionPlan& plan, std::uint64_t seed) {
    plan.validate(base.config());
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    std::map<std::string, LoraAdapter> adapters;
    for (const auto& t : plan.targets) {
        std::vector<double> a(t.d_out * plan.rank);
        for (auto& v : a) v = dist(rng);
        LoraAdapter ad;
        ad.A = Tensor::from({t.d_out, plan.rank}, std::move(a), true);
        ad.B = Tensor::zeros({t.d_in, plan.rank}, true);
        ad.alpha = plan.alpha;
        ad.dropout = plan.dropout;
        adapters.emplace(t.name(), std::move(ad));
    }
    return AdaptedModel(base.clone(), plan, std::move(adapters));
}

}  // namespace lune
