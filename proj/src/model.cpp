#include "lune/model.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lune {

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 ||
        max_seq_len == 0) {
        throw ConfigError("model config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
}

const char* projection_name(Projection p) {
    switch (p) {
        case Projection::kQuery: return "wq";
        case Projection::kKey: return "wk";
        case Projection::kValue: return "wv";
        case Projection::kOutput: return "wo";
        case Projection::kUp: return "up";
        case Projection::kDown: return "down";
    }
    return "?";
}

std::optional<Projection> parse_projection(std::string_view name) {
    for (auto p : kAllProjections) {
        if (name == projection_name(p)) return p;
    }
    return std::nullopt;
}

std::string weight_name(std::size_t layer, Projection p) {
    const bool ffn = p == Projection::kUp || p == Projection::kDown;
    return "layers." + std::to_string(layer) + (ffn ? ".ffn." : ".attn.") + projection_name(p);
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view domain) {
    std::uint64_t h = fnv1a(&seed, sizeof seed);
    h = fnv1a(domain.data(), domain.size(), h);
    // splitmix64 finalizer to spread nearby inputs
    h += 0x9e3779b97f4a7c15ULL;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

namespace {

Tensor normal_init(Shape shape, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TransformerModel::TransformerModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t d = config_.d_model;
    tok_emb_ = normal_init({config_.vocab_size, d}, rng);
    pos_emb_ = normal_init({config_.max_seq_len, d}, rng);
    blocks_.resize(config_.n_layers);
    for (auto& b : blocks_) {
        b.ln1 = Tensor::full({d}, 1.0);
        b.wq = normal_init({d, d}, rng);
        b.wk = normal_init({d, d}, rng);
        b.wv = normal_init({d, d}, rng);
        b.wo = normal_init({d, d}, rng);
        b.ln2 = Tensor::full({d}, 1.0);
        b.up = normal_init({config_.d_ff, d}, rng);
        b.down = normal_init({d, config_.d_ff}, rng);
    }
    ln_f_ = Tensor::full({d}, 1.0);
    head_ = normal_init({config_.vocab_size, d}, rng);
}

Tensor TransformerModel::logits(std::span<const TokenId> ids) const {
    NoGradGuard guard;
    return forward(ids);
}

Tensor TransformerModel::forward(std::span<const TokenId> ids, const ProjectionHook* hook,
                                 Rng* dropout_rng, ForwardTrace* trace) const {
    return forward_batch({1, ids.size(), {ids.begin(), ids.end()}}, hook, dropout_rng, trace);
}

Tensor TransformerModel::forward_batch(const TokenBatch& batch, const ProjectionHook* hook,
                                       Rng* dropout_rng, ForwardTrace* trace) const {
    const std::size_t B = batch.batch, T = batch.length;
    if (B == 0 || T == 0) throw ContractError("forward: empty token batch");
    if (batch.ids.size() != B * T) {
        throw DimensionError("forward: batch " + std::to_string(B) + "x" + std::to_string(T) +
                             " holds " + std::to_string(batch.ids.size()) + " ids");
    }
    if (T > config_.max_seq_len) {
        throw DimensionError("forward: sequence length " + std::to_string(T) +
                             " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    const std::size_t d = config_.d_model, H = config_.n_heads, dh = d / H;

    std::vector<TokenId> positions(B * T);
    for (std::size_t i = 0; i < B * T; ++i) positions[i] = static_cast<TokenId>(i % T);
    Tensor x = add(embedding(tok_emb_, batch.ids), embedding(pos_emb_, positions));

    auto project = [&](std::size_t layer, Projection p, const Tensor& in, const Tensor& w) {
        if (hook && hook->lookup(layer, p)) return hook->apply(layer, p, in, w, dropout_rng);
        return linear(in, w);
    };
    auto split_heads = [&](const Tensor& t) {  // [B*T x d] -> [B*H x T x dh]
        return reshape(swap_axes(reshape(t, {B, T, H, dh}), 1, 2), {B * H, T, dh});
    };
    auto merge_heads = [&](const Tensor& t) {  // [B*H x T x dh] -> [B*T x d]
        return reshape(swap_axes(reshape(t, {B, H, T, dh}), 1, 2), {B * T, d});
    };

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        Tensor h = layer_norm(x, b.ln1);
        Tensor q = split_heads(project(l, Projection::kQuery, h, b.wq));
        Tensor k = split_heads(project(l, Projection::kKey, h, b.wk));
        Tensor v = split_heads(project(l, Projection::kValue, h, b.wv));
        Tensor scores = scale(bmm(q, swap_axes(k, 1, 2)), inv_sqrt_dh);
        Tensor att = softmax(causal_mask(scores), 2);
        if (trace) trace->attention.push_back(att);
        x = add(x, project(l, Projection::kOutput, merge_heads(bmm(att, v)), b.wo));

        Tensor h2 = layer_norm(x, b.ln2);
        Tensor ff = gelu(project(l, Projection::kUp, h2, b.up));
        x = add(x, project(l, Projection::kDown, ff, b.down));
    }
    return linear(layer_norm(x, ln_f_), head_);
}

std::vector<NamedTensor> TransformerModel::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", tok_emb_});
    out.push_back({"pos_emb", pos_emb_});
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string prefix = "layers." + std::to_string(l);
        out.push_back({prefix + ".ln1.g", b.ln1});
        out.push_back({weight_name(l, Projection::kQuery), b.wq});
        out.push_back({weight_name(l, Projection::kKey), b.wk});
        out.push_back({weight_name(l, Projection::kValue), b.wv});
        out.push_back({weight_name(l, Projection::kOutput), b.wo});
        out.push_back({prefix + ".ln2.g", b.ln2});
        out.push_back({weight_name(l, Projection::kUp), b.up});
        out.push_back({weight_name(l, Projection::kDown), b.down});
    }
    out.push_back({"ln_f.g", ln_f_});
    out.push_back({"head", head_});
    return out;
}

Tensor TransformerModel::parameter(const std::string& name) const {
    for (auto& p : parameters()) {
        if (p.name == name) return p.tensor;
    }
    throw ConfigError("unknown parameter '" + name + "'");
}

Tensor& TransformerModel::projection(std::size_t layer, Projection p) {
    if (layer >= blocks_.size()) {
        throw ConfigError("layer " + std::to_string(layer) + " out of range");
    }
    auto& b = blocks_[layer];
    switch (p) {
        case Projection::kQuery: return b.wq;
        case Projection::kKey: return b.wk;
        case Projection::kValue: return b.wv;
        case Projection::kOutput: return b.wo;
        case Projection::kUp: return b.up;
        case Projection::kDown: return b.down;
    }
    throw ConfigError("unknown projection");
}

const Tensor& TransformerModel::projection(std::size_t layer, Projection p) const {
    return const_cast<TransformerModel*>(this)->projection(layer, p);
}

void TransformerModel::freeze() {
    for (auto& p : parameters()) p.tensor.freeze();
}

void TransformerModel::set_trainable(bool trainable) {
    for (auto& p : parameters()) p.tensor.set_requires_grad(trainable);
}

bool TransformerModel::frozen() const {
    auto params = parameters();
    return std::all_of(params.begin(), params.end(),
                       [](const NamedTensor& p) { return p.tensor.frozen(); });
}

TransformerModel TransformerModel::clone() const {
    TransformerModel copy(*this);
    copy.tok_emb_ = tok_emb_.clone();
    copy.pos_emb_ = pos_emb_.clone();
    for (auto& b : copy.blocks_) {
        for (Tensor* t : {&b.ln1, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2, &b.up, &b.down}) {
            *t = t->clone();
        }
    }
    copy.ln_f_ = ln_f_.clone();
    copy.head_ = head_.clone();
    return copy;
}

std::uint64_t TransformerModel::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : parameters()) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.tensor.data().data(), p.tensor.numel() * sizeof(double), h);
    }
    return h;
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

std::size_t count_params(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_block = 2 * d + 4 * d * d + 2 * d * c.d_ff;
    return c.vocab_size * d          // token embedding
           + c.max_seq_len * d       // positions
           + c.n_layers * per_block  // blocks
           + d                       // final norm gain
           + c.vocab_size * d;       // untied head
}

std::vector<TokenId> generate_greedy(const LanguageModel& model, std::span<const TokenId> prompt,
                                     std::size_t max_new) {
    if (prompt.empty()) throw ContractError("generate_greedy: prompt must be nonempty");
    std::vector<TokenId> ids(prompt.begin(), prompt.end());
    std::vector<TokenId> out;
    const std::size_t cap = model.config().max_seq_len;
    for (std::size_t step = 0; step < max_new && ids.size() < cap; ++step) {
        Tensor lg = model.logits(ids);
        const std::size_t V = lg.dim(1);
        auto row = lg.data().subspan((lg.dim(0) - 1) * V, V);
        const auto next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
        if (next == kEosId) break;
        ids.push_back(next);
        out.push_back(next);
    }
    return out;
}

}  // namespace lune
