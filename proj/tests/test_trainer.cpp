#include "lune/error.hpp"
#include "lune/trainer.hpp"

#include "support/algorithm1.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

using namespace lune;

namespace {

struct Fixture {
    Tokenizer tok = build_tokenizer(512);
    ModelConfig mc{512, 16, 2, 4, 32, 32, 5};
    TransformerModel base{mc};
    Corpus corpus = generate_corpus({20, 5, 0, 1});
    std::vector<NegativeExample> negs;
    std::vector<TextExample> target_qa;

    Fixture() {
        auto targets = corpus.by_split(Split::kTarget);
        negs = make_negative_set(targets, Quality::kHigh, {}, 7);
        for (const auto& f : targets) {
            for (auto& q : qa_pairs(f)) target_qa.push_back(q);
        }
    }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

TrainConfig sgd_config(double lr) {
    TrainConfig c;
    c.optimizer = OptimizerKind::kSgd;
    c.schedule = Schedule::kConstant;
    c.warmup_fraction = 0.0;
    c.weight_decay = 0.0;
    c.grad_clip = 0.0;
    c.batch_size = 1;
    c.epochs = 1;
    c.learning_rate = lr;
    c.shuffle = false;
    c.early_stop.enabled = false;
    c.seed = 11;
    return c;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double target_ce(const TransformerModel& m, const Tokenizer& tok, const std::vector<TextExample>& qa) {
    auto enc = encode_all(tok, qa);
    BatchForward f = [&](const TokenBatch& b) { return m.forward_batch(b); };
    double s = 0.0;
    for (double l : example_losses(f, enc)) s += l;
    return s / static_cast<double>(enc.size());
}

}  // namespace

TEST(Trainer, SgdBatchOneMatchesLiteralAlgorithmBitwise) {
    const auto& f = fx();
    const InjectionPlan plan = InjectionPlan::standard(f.mc, 4, {std::begin(kAllProjections), std::end(kAllProjections)}, 0.0);
    const TrainConfig cfg = sgd_config(0.05);
    const LuneResult r = unlearn_lune(f.base, f.negs, plan, cfg, f.tok);
    const AdaptedModel ref =
        oracle::literal_algorithm1(f.base, encode_all(f.tok, f.negs), plan, derive_seed(cfg.seed, "init"), 0.05);
    ASSERT_EQ(r.log.steps.size(), f.negs.size());
    for (const auto& [name, ad] : r.model.adapters()) {
        const LoraAdapter& other = ref.adapters().at(name);
        EXPECT_TRUE(bitwise_equal(ad.A, other.A)) << name;
        EXPECT_TRUE(bitwise_equal(ad.B, other.B)) << name;
    }
    // The adapters moved, so the comparison is not vacuous.
    const AdaptedModel init = inject(f.base, plan, derive_seed(cfg.seed, "init"));
    EXPECT_FALSE(bitwise_equal(r.model.adapters().begin()->second.B, init.adapters().begin()->second.B));
}

TEST(Trainer, LiteralLoopIsOrderSensitive) {
    const auto& f = fx();
    const InjectionPlan plan = InjectionPlan::standard(f.mc, 4, {Projection::kQuery}, 0.0);
    auto enc = encode_all(f.tok, f.negs);
    auto reversed = enc;
    std::reverse(reversed.begin(), reversed.end());
    const AdaptedModel a = oracle::literal_algorithm1(f.base, enc, plan, 3, 0.05);
    const AdaptedModel b = oracle::literal_algorithm1(f.base, reversed, plan, 3, 0.05);
    EXPECT_FALSE(bitwise_equal(a.adapters().begin()->second.A, b.adapters().begin()->second.A));
}

TEST(Trainer, HandSteppedTwoByTwoLinearLayer) {
    // W = W0 + A B^T with r = 1, L = 0.5 |W x - t|^2.
    const double w0[4] = {0.5, -0.25, 0.75, 1.0};
    const double a0[2] = {0.3, -0.2}, b0[2] = {0.1, 0.4};
    const double x[2] = {1.5, -0.5}, t[2] = {0.2, 0.1};
    const double eta = 0.1;

    double W[2][2];
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) W[i][j] = w0[i * 2 + j] + a0[i] * b0[j];
    double res[2];
    for (int i = 0; i < 2; ++i) res[i] = W[i][0] * x[0] + W[i][1] * x[1] - t[i];
    double g[2][2];
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) g[i][j] = res[i] * x[j];
    double ga[2], gb[2];
    for (int i = 0; i < 2; ++i) ga[i] = g[i][0] * b0[0] + g[i][1] * b0[1];
    for (int j = 0; j < 2; ++j) gb[j] = g[0][j] * a0[0] + g[1][j] * a0[1];

    Tensor A = Tensor::from({2, 1}, {a0[0], a0[1]});
    Tensor B = Tensor::from({2, 1}, {b0[0], b0[1]});
    A.set_requires_grad(true);
    B.set_requires_grad(true);
    const Tensor W0 = Tensor::from({2, 2}, {w0[0], w0[1], w0[2], w0[3]});
    const Tensor X = Tensor::from({1, 2}, {x[0], x[1]});
    const Tensor T = Tensor::from({1, 2}, {t[0], t[1]});
    Tensor r = sub(linear(X, add(W0, matmul(A, transpose(B)))), T);
    backward(scale(sum(mul(r, r)), 0.5));
    std::vector<Tensor> params{A, B};
    Sgd().step(params, eta);

    for (int i = 0; i < 2; ++i) {
        EXPECT_NEAR(A.data()[i], a0[i] - eta * ga[i], 1e-15);
        EXPECT_NEAR(B.data()[i], b0[i] - eta * gb[i], 1e-15);
    }
}

TEST(Trainer, AdamStateCoversOnlyAdapters) {
    const auto& f = fx();
    const InjectionPlan plan = InjectionPlan::standard(f.mc, 4);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.early_stop.enabled = false;
    const LuneResult lune = unlearn_lune(f.base, f.negs, plan, cfg, f.tok);
    EXPECT_EQ(lune.log.trainable_params, count_lora_params(plan));
    EXPECT_EQ(lune.log.optimizer_state_entries, 2 * count_lora_params(plan));
    const FullResult full = unlearn_full_ft(f.base, f.negs, cfg, f.tok);
    EXPECT_EQ(full.log.trainable_params, count_params(f.mc));
    EXPECT_EQ(full.log.optimizer_state_entries, 2 * count_params(f.mc));
}

TEST(Trainer, LuneLowersNegativeObjectiveAndKeepsBackbone) {
    const auto& f = fx();
    const std::uint64_t before = f.base.checksum();
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.learning_rate = 5e-3;
    cfg.early_stop.enabled = false;
    const LuneResult r = unlearn_lune(f.base, f.negs, InjectionPlan::standard(f.mc, 4), cfg, f.tok);
    EXPECT_LT(r.log.epochs.back().objective, r.log.initial_objective - 1e-3);
    EXPECT_EQ(f.base.checksum(), before);
    EXPECT_EQ(r.model.backbone().checksum(), before);
    for (const auto& s : r.log.steps) EXPECT_TRUE(std::isfinite(s.loss));
}

TEST(Trainer, DefaultConfigObjectiveIsNonIncreasing) {
    const auto& f = fx();
    TrainConfig cfg;  // adamw, 2e-4, warmup + cosine
    cfg.epochs = 6;
    cfg.early_stop.enabled = false;
    const LuneResult r = unlearn_lune(f.base, f.negs, InjectionPlan::standard(f.mc, 4), cfg, f.tok);
    double prev = r.log.initial_objective;
    for (const auto& e : r.log.epochs) {
        EXPECT_LE(e.objective, prev + 1e-3) << "epoch " << e.epoch;
        prev = e.objective;
    }
}

TEST(Trainer, DeterministicUnderSeed) {
    const auto& f = fx();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.early_stop.enabled = false;
    const InjectionPlan plan = InjectionPlan::standard(f.mc, 4);
    const LuneResult a = unlearn_lune(f.base, f.negs, plan, cfg, f.tok);
    const LuneResult b = unlearn_lune(f.base, f.negs, plan, cfg, f.tok);
    cfg.seed = 99;
    const LuneResult c = unlearn_lune(f.base, f.negs, plan, cfg, f.tok);
    bool all_same = true, any_diff = false;
    for (const auto& [name, ad] : a.model.adapters()) {
        all_same = all_same && bitwise_equal(ad.A, b.model.adapters().at(name).A) &&
                   bitwise_equal(ad.B, b.model.adapters().at(name).B);
        any_diff = any_diff || !bitwise_equal(ad.A, c.model.adapters().at(name).A);
    }
    EXPECT_TRUE(all_same);
    EXPECT_TRUE(any_diff);
}

TEST(Trainer, GradientAscentRaisesTargetLoss) {
    const auto& f = fx();
    TrainConfig cfg = sgd_config(0.05);
    cfg.grad_clip = 1.0;
    cfg.max_steps = 1;
    cfg.batch_size = 8;
    const double before = target_ce(f.base, f.tok, f.target_qa);
    const FullResult r = unlearn_ga(f.base, f.target_qa, cfg, f.tok);
    EXPECT_EQ(r.log.steps.size(), 1u);
    EXPECT_EQ(r.log.stop_reason, "max_steps");
    EXPECT_GT(target_ce(r.model, f.tok, f.target_qa), before);
}

TEST(Trainer, GradientAscentNeedsCapAndClip) {
    const auto& f = fx();
    TrainConfig cfg;
    cfg.max_steps = 0;
    EXPECT_THROW(unlearn_ga(f.base, f.target_qa, cfg, f.tok), ConfigError);
    cfg.max_steps = 5;
    cfg.grad_clip = 0.0;
    EXPECT_THROW(unlearn_ga(f.base, f.target_qa, cfg, f.tok), ConfigError);
}

TEST(Trainer, GradientAscentStopsAboveCeiling) {
    const auto& f = fx();
    TrainConfig cfg = sgd_config(0.05);
    cfg.grad_clip = 1.0;
    cfg.max_steps = 50;
    cfg.divergence_ceiling = 1.0;  // below the initial loss of an untrained model
    const FullResult r = unlearn_ga(f.base, f.target_qa, cfg, f.tok);
    EXPECT_EQ(r.log.stop_reason, "diverged");
    EXPECT_EQ(r.log.steps.size(), 1u);
}

TEST(Trainer, NonFiniteLossAbortsWithStepIndex) {
    const auto& f = fx();
    TransformerModel broken = f.base.clone();
    broken.projection(0, Projection::kQuery).data()[0] = std::nan("");
    TrainConfig cfg;
    cfg.early_stop.enabled = false;
    try {
        unlearn_lune(broken, f.negs, InjectionPlan::standard(f.mc, 4), cfg, f.tok);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
}

TEST(Trainer, EarlyStopRestoresBestAdmissibleEpoch) {
    const auto& f = fx();
    const std::vector<double> usr{0.2, 0.5, 0.9, 0.4, 0.4, 0.4, 0.4};
    const std::vector<double> gur{1.0, 1.0, 0.98, 1.0, 1.0, 1.0, 1.0};
    TrainConfig cfg;
    cfg.epochs = 7;
    cfg.learning_rate = 1e-3;
    cfg.early_stop.patience = 3;
    std::vector<std::vector<double>> seen;
    AdaptedModel model = inject(f.base, InjectionPlan::standard(f.mc, 4), 1);
    std::vector<Tensor> params;
    for (auto& p : model.trainable_parameters()) params.push_back(p.tensor);
    BatchForward fwd = [&](const TokenBatch& b) { return model.forward_batch(b, nullptr); };
    Monitor mon = [&](std::size_t epoch) {
        seen.emplace_back(params[1].data().begin(), params[1].data().end());
        return MonitorResult{usr[epoch - 1], gur[epoch - 1], -1.0, false};
    };
    // Epoch 3 exceeds the GUR tolerance, so training halts there and epoch 2 is restored.
    const TrainLog log = train_loop(params, encode_all(f.tok, f.negs), fwd, fwd, cfg, 1.0, mon);
    EXPECT_EQ(log.stop_reason, "gur_drop");
    EXPECT_EQ(log.best_epoch, 2u);
    EXPECT_EQ(log.epochs.size(), 3u);
    EXPECT_TRUE(std::equal(seen[1].begin(), seen[1].end(), params[1].data().begin()));
}

TEST(Trainer, EarlyStopOnPatience) {
    const auto& f = fx();
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.early_stop.patience = 2;
    TransformerModel m = f.base.clone();
    m.set_trainable(true);
    std::vector<Tensor> params;
    for (auto& p : m.parameters()) params.push_back(p.tensor);
    BatchForward fwd = [&](const TokenBatch& b) { return m.forward_batch(b); };
    const std::vector<double> usr{0.1, 0.3, 0.3, 0.2, 0.9};
    Monitor mon = [&](std::size_t epoch) { return MonitorResult{usr[std::min<std::size_t>(epoch, 5) - 1], 1.0, -1.0, false}; };
    const TrainLog log = train_loop(params, encode_all(f.tok, f.negs), fwd, fwd, cfg, 1.0, mon);
    EXPECT_EQ(log.stop_reason, "patience");
    EXPECT_EQ(log.best_epoch, 2u);
    EXPECT_EQ(log.epochs.size(), 4u);
}

TEST(Trainer, ScheduleWarmsUpThenDecays) {
    TrainConfig c;
    c.learning_rate = 1.0;
    c.warmup_fraction = 0.1;
    const std::size_t total = 100;
    EXPECT_LT(scheduled_lr(c, 0, total), scheduled_lr(c, 5, total));
    EXPECT_NEAR(scheduled_lr(c, 10, total), 1.0, 1e-12);
    for (std::size_t s = 11; s < total; ++s) EXPECT_LE(scheduled_lr(c, s, total), scheduled_lr(c, s - 1, total));
    EXPECT_LT(scheduled_lr(c, total - 1, total), 0.01);
    c.schedule = Schedule::kConstant;
    EXPECT_EQ(scheduled_lr(c, 37, total), 1.0);
}

TEST(Trainer, ClipScalesToMaxNorm) {
    Tensor a = Tensor::from({2}, {3.0, 0.0});
    Tensor b = Tensor::from({1}, {4.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    backward(add(scale(sum(mul(a, a)), 0.5), scale(sum(mul(b, b)), 0.5)));  // grads = values
    std::vector<Tensor> ps{a, b};
    EXPECT_NEAR(clip_grad_norm(ps, 1.0), 5.0, 1e-12);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
}

TEST(Trainer, ConfigValidation) {
    TrainConfig c;
    c.learning_rate = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.warmup_fraction = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_optimizer("adamw"), OptimizerKind::kAdamW);
    EXPECT_FALSE(parse_optimizer("lion").has_value());
}

TEST(Trainer, PretrainGateFailureNamesRecall) {
    const auto& f = fx();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.early_stop.enabled = false;
    cfg.mask_target_only = false;
    std::vector<TextExample> texts(f.corpus.training_texts.begin(), f.corpus.training_texts.begin() + 16);
    try {
        pretrain(f.mc, texts, f.tok, cfg, {}, [](const LanguageModel&) { return 0.25; });
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("0.25"), std::string::npos) << e.what();
    }
}

TEST(Trainer, PretrainIsDeterministicAndLowersLoss) {
    const auto& f = fx();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 1e-3;
    cfg.early_stop.enabled = false;
    cfg.mask_target_only = false;
    std::vector<TextExample> texts(f.corpus.training_texts.begin(), f.corpus.training_texts.begin() + 32);
    auto always = [](const LanguageModel&) { return 1.0; };
    PretrainOptions opt;
    opt.eval_every = 100;
    const PretrainResult a = pretrain(f.mc, texts, f.tok, cfg, opt, always);
    const PretrainResult b = pretrain(f.mc, texts, f.tok, cfg, opt, always);
    EXPECT_EQ(a.model.checksum(), b.model.checksum());
    EXPECT_LT(a.log.epochs.back().objective, a.log.initial_objective);
}
