#include "lune/error.hpp"
#include "lune/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

using namespace lune;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat as_mat(const Tensor& t) {
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    return m;
}

// y = x W^T with W stored [out x in].
Mat lin(const Mat& x, const Mat& w) {
    Mat y(x.size(), std::vector<double>(w.size(), 0.0));
    for (std::size_t t = 0; t < x.size(); ++t)
        for (std::size_t o = 0; o < w.size(); ++o)
            for (std::size_t i = 0; i < x[t].size(); ++i) y[t][o] += x[t][i] * w[o][i];
    return y;
}

Mat norm(const Mat& x, std::span<const double> g) {
    Mat y = x;
    for (std::size_t t = 0; t < x.size(); ++t) {
        const double n = static_cast<double>(x[t].size());
        double mean = 0, var = 0;
        for (double v : x[t]) mean += v / n;
        for (double v : x[t]) var += (v - mean) * (v - mean) / n;
        for (std::size_t i = 0; i < x[t].size(); ++i) y[t][i] = g[i] * (x[t][i] - mean) / std::sqrt(var + 1e-5);
    }
    return y;
}

// Loop-by-loop forward pass for a single sequence, independent of the tensor ops.
Mat reference_forward(const TransformerModel& m, const std::vector<TokenId>& ids) {
    const auto& c = m.config();
    const std::size_t T = ids.size(), d = c.d_model, H = c.n_heads, dh = d / H;
    Mat tok = as_mat(m.parameter("tok_emb")), pos = as_mat(m.parameter("pos_emb"));
    Mat x(T, std::vector<double>(d));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) x[t][i] = tok[static_cast<std::size_t>(ids[t])][i] + pos[t][i];
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l);
        Mat h = norm(x, m.parameter(p + ".ln1.g").data());
        Mat q = lin(h, as_mat(m.parameter(p + ".attn.wq")));
        Mat k = lin(h, as_mat(m.parameter(p + ".attn.wk")));
        Mat v = lin(h, as_mat(m.parameter(p + ".attn.wv")));
        Mat ctx(T, std::vector<double>(d, 0.0));
        for (std::size_t hd = 0; hd < H; ++hd) {
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> s(t + 1);
                double mx = -1e300;
                for (std::size_t u = 0; u <= t; ++u) {
                    double dot = 0;
                    for (std::size_t j = 0; j < dh; ++j) dot += q[t][hd * dh + j] * k[u][hd * dh + j];
                    s[u] = dot / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[u]);
                }
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t j = 0; j < dh; ++j) ctx[t][hd * dh + j] += s[u] / z * v[u][hd * dh + j];
            }
        }
        Mat o = lin(ctx, as_mat(m.parameter(p + ".attn.wo")));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[t][i];
        Mat h2 = norm(x, m.parameter(p + ".ln2.g").data());
        Mat u = lin(h2, as_mat(m.parameter(p + ".ffn.up")));
        for (auto& row : u)
            for (auto& e : row) e = 0.5 * e * (1 + std::erf(e / std::sqrt(2.0)));
        Mat f = lin(u, as_mat(m.parameter(p + ".ffn.down")));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < d; ++i) x[t][i] += f[t][i];
    }
    return lin(norm(x, m.parameter("ln_f.g").data()), as_mat(m.parameter("head")));
}

ModelConfig tiny() { return ModelConfig{11, 8, 2, 2, 12, 6, 5}; }

void perturb_gains(TransformerModel& m, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(1.0, 0.3);
    for (auto& p : m.parameters()) {
        if (p.name.find(".g") != std::string::npos) {
            for (auto& v : p.tensor.data()) v = n(rng);
        }
    }
}

}  // namespace

TEST(Model, DefaultParameterCountMatchesEnumeration) {
    ModelConfig c;
    TransformerModel m(c);
    EXPECT_EQ(count_params(c), 264768u);
    EXPECT_EQ(m.parameter_count(), count_params(c));
    std::size_t brute = 0;
    for (const auto& p : m.parameters()) {
        std::size_t n = 1;
        for (auto d : p.tensor.shape()) n *= d;
        brute += n;
    }
    EXPECT_EQ(brute, count_params(c));
}

TEST(Model, ParameterCountFormulaHoldsAcrossConfigs) {
    for (ModelConfig c : {ModelConfig{13, 6, 3, 3, 10, 7, 0}, ModelConfig{40, 16, 1, 4, 32, 9, 0}}) {
        EXPECT_EQ(TransformerModel(c).parameter_count(), count_params(c));
    }
}

TEST(Model, ForwardMatchesLoopReference) {
    TransformerModel m(tiny());
    perturb_gains(m, 9);
    std::vector<TokenId> ids{2, 7, 1, 10, 4};
    Tensor logits = m.logits(ids);
    Mat ref = reference_forward(m, ids);
    ASSERT_EQ(logits.shape(), (Shape{5, 11}));
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(logits.at(t, v), ref[t][v], 1e-12);
}

TEST(Model, AttentionRowsAreCausalDistributions) {
    TransformerModel m(tiny());
    ForwardTrace trace;
    std::vector<TokenId> ids{3, 4, 5, 6};
    NoGradGuard guard;
    m.forward(ids, nullptr, nullptr, &trace);
    ASSERT_EQ(trace.attention.size(), 2u);
    for (const auto& att : trace.attention) {
        ASSERT_EQ(att.shape(), (Shape{2, 4, 4}));
        auto d = att.data();
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t t = 0; t < 4; ++t) {
                double s = 0;
                for (std::size_t u = 0; u < 4; ++u) {
                    const double a = d[(h * 4 + t) * 4 + u];
                    if (u > t) EXPECT_EQ(a, 0.0);
                    s += a;
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(Model, PaddedBatchRowsMatchSingleSequences) {
    TransformerModel m(tiny());
    std::vector<TokenId> a{2, 5, 6}, b{2, 9, 8, 7, 6};
    TokenBatch batch{2, 5, {2, 5, 6, kPadId, kPadId, 2, 9, 8, 7, 6}};
    NoGradGuard guard;
    Tensor both = m.forward_batch(batch);
    Tensor la = m.forward(a), lb = m.forward(b);
    const std::size_t V = 11;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < V; ++v) EXPECT_NEAR(both.data()[t * V + v], la.at(t, v), 1e-12);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t v = 0; v < V; ++v) EXPECT_NEAR(both.data()[(5 + t) * V + v], lb.at(t, v), 1e-12);
}

TEST(Model, RejectsOverlongSequenceAndBadConfig) {
    TransformerModel m(tiny());
    std::vector<TokenId> ids(7, 4);
    EXPECT_THROW(m.logits(ids), DimensionError);
    ModelConfig bad = tiny();
    bad.n_heads = 3;
    EXPECT_THROW(TransformerModel{bad}, ConfigError);
}

TEST(Model, InitIsDeterministicUnderSeed) {
    EXPECT_EQ(TransformerModel(tiny()).checksum(), TransformerModel(tiny()).checksum());
    ModelConfig other = tiny();
    other.seed = 6;
    EXPECT_NE(TransformerModel(tiny()).checksum(), TransformerModel(other).checksum());
}

TEST(Model, LogitsAreBitwiseStableAcrossHeapStates) {
    const TransformerModel m(ModelConfig{});
    const std::vector<TokenId> ids{2, 17, 40, 9, 33, 5, 101};
    const Tensor ref = m.logits(ids);
    std::vector<std::vector<double>> junk;
    for (std::size_t i = 1; i < 24; ++i) {
        junk.emplace_back(i * 3 + 1, 1.0);
        const Tensor again = m.logits(ids);
        ASSERT_EQ(std::memcmp(ref.data().data(), again.data().data(), ref.numel() * sizeof(double)), 0) << i;
    }
}

TEST(Model, CloneIsIndependent) {
    TransformerModel m(tiny());
    TransformerModel c = m.clone();
    const auto before = m.checksum();
    c.parameter("head").data()[0] += 1.0;
    EXPECT_EQ(m.checksum(), before);
    EXPECT_NE(c.checksum(), before);
}

namespace {

// Emits a fixed script of tokens regardless of input.
class ScriptedModel : public LanguageModel {
public:
    ScriptedModel(ModelConfig c, std::vector<TokenId> script) : c_(c), script_(std::move(script)) {}
    const ModelConfig& config() const override { return c_; }
    Tensor logits(std::span<const TokenId> ids) const override {
        Tensor out = Tensor::zeros({ids.size(), c_.vocab_size});
        const std::size_t step = ids.size() - prompt_len;
        const TokenId next = step < script_.size() ? script_[step] : kEosId;
        out.data()[(ids.size() - 1) * c_.vocab_size + static_cast<std::size_t>(next)] = 1.0;
        return out;
    }
    std::size_t prompt_len = 0;

private:
    ModelConfig c_;
    std::vector<TokenId> script_;
};

}  // namespace

TEST(Model, GreedyDecodeStopsAtEosAndContextLimit) {
    ModelConfig c = tiny();
    ScriptedModel m(c, {5, 6, kEosId, 7});
    m.prompt_len = 2;
    std::vector<TokenId> prompt{2, 4};
    EXPECT_EQ(generate_greedy(m, prompt, 10), (std::vector<TokenId>{5, 6}));
    EXPECT_EQ(generate_greedy(m, prompt, 1), (std::vector<TokenId>{5}));
    ScriptedModel runaway(c, {5, 5, 5, 5, 5, 5, 5, 5});
    runaway.prompt_len = 2;
    EXPECT_EQ(generate_greedy(runaway, prompt, 10).size(), c.max_seq_len - 2);
}

TEST(Model, TrainingStepReducesLossOnTinySequence) {
    TransformerModel m(tiny());
    m.set_trainable(true);
    std::vector<TokenId> ids{2, 5, 6, 7}, targets{5, 6, 7, 3};
    std::vector<std::uint8_t> mask(4, 1);
    auto loss_of = [&] { return cross_entropy(m.forward(ids), targets, mask); };
    const double before = [&] { NoGradGuard g; return loss_of().item(); }();
    for (int step = 0; step < 20; ++step) {
        backward(loss_of());
        for (auto& p : m.parameters()) {
            auto d = p.tensor.data();
            auto g = p.tensor.grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 0.5 * g[i];
            p.tensor.zero_grad();
        }
    }
    NoGradGuard g;
    EXPECT_LT(loss_of().item(), before - 0.5);
}
