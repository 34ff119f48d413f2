#include "lune/trainer.hpp"

#include "lune/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace lune {

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adamw"; }

std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::kSgd;
    if (s == "adamw") return OptimizerKind::kAdamW;
    return std::nullopt;
}

const char* schedule_name(Schedule s) { return s == Schedule::kConstant ? "constant" : "warmup-cosine"; }

std::optional<Schedule> parse_schedule(std::string_view s) {
    if (s == "constant") return Schedule::kConstant;
    if (s == "warmup-cosine") return Schedule::kWarmupCosine;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("warmup_fraction must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
}

void Sgd::step(std::vector<Tensor>& params, double lr) {
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        auto d = p.data();
        auto g = p.grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    }
}

AdamW::AdamW(const std::vector<Tensor>& params, double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

std::size_t AdamW::state_entries() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < m_.size(); ++i) n += m_[i].size() + v_[i].size();
    return n;
}

void AdamW::step(std::vector<Tensor>& params, double lr) {
    if (params.size() != m_.size()) throw StateError("AdamW: parameter list changed after construction");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto d = params[k].data();
        auto& m = m_[k];
        auto& v = v_[k];
        const bool has = params[k].has_grad();
        auto g = params[k].grad();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
            v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
            d[i] -= lr * wd_ * d[i];
            d[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, const std::vector<Tensor>& params) {
    if (cfg.optimizer == OptimizerKind::kSgd) return std::make_unique<Sgd>();
    return std::make_unique<AdamW>(params, cfg.weight_decay);
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (cfg.schedule == Schedule::kConstant || total_steps == 0) return cfg.learning_rate;
    const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup) {
        return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - warmup));
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double total = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) total += g * g;
    }
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.mutable_grad()) g *= s;
        }
    }
    return norm;
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    using ojson = nlohmann::ordered_json;
    ojson head;
    head["record"] = "summary";
    head["method"] = method;
    head["trainable_params"] = trainable_params;
    head["optimizer_state_entries"] = optimizer_state_entries;
    head["n_examples"] = n_examples;
    head["initial_objective"] = initial_objective;
    head["best_epoch"] = best_epoch;
    head["stop_reason"] = stop_reason;
    head["wall_seconds"] = wall_seconds;
    out << head.dump() << '\n';
    for (const auto& e : epochs) {
        ojson j;
        j["record"] = "epoch";
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["objective"] = e.objective;
        if (e.usr >= 0) j["usr"] = e.usr;
        if (e.gur >= 0) j["gur"] = e.gur;
        if (e.recall >= 0) j["recall"] = e.recall;
        j["seconds"] = e.seconds;
        out << j.dump() << '\n';
    }
    for (const auto& s : steps) {
        ojson j;
        j["record"] = "step";
        j["step"] = s.step;
        j["epoch"] = s.epoch;
        j["loss"] = s.loss;
        j["lr"] = s.lr;
        out << j.dump() << '\n';
    }
}

namespace {

double full_objective(const BatchForward& forward, const std::vector<EncodedExample>& examples,
                      std::size_t batch_size, bool target_only) {
    NoGradGuard guard;
    double total = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<const EncodedExample*> batch;
        for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
            batch.push_back(&examples[i]);
        }
        total += batch_loss(forward, batch, target_only).item() * static_cast<double>(batch.size());
    }
    return total / static_cast<double>(examples.size());
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const std::vector<Tensor>& params) {
    Snapshot s;
    for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
    return s;
}

void restore(std::vector<Tensor>& params, const Snapshot& s) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::copy(s[k].begin(), s[k].end(), params[k].data().begin());
    }
}

}  // namespace

TrainLog train_loop(std::vector<Tensor> params, const std::vector<EncodedExample>& examples,
                    const BatchForward& train_forward, const BatchForward& eval_forward,
                    const TrainConfig& cfg, double sign, const Monitor& monitor) {
    cfg.validate();
    if (examples.empty()) throw ContractError("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    TrainLog log;
    log.n_examples = examples.size();
    for (const auto& p : params) log.trainable_params += p.numel();
    auto opt = make_optimizer(cfg, params);
    log.optimizer_state_entries = opt->state_entries();
    log.initial_objective = full_objective(eval_forward, examples, 16, cfg.mask_target_only);

    const std::size_t steps_per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total_steps = steps_per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    const bool early = cfg.early_stop.enabled && static_cast<bool>(monitor);
    Snapshot best = early ? snapshot(params) : Snapshot{};
    double best_usr = -1.0;
    std::size_t since_best = 0;
    std::size_t step = 0;
    bool halted = false;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && !halted; ++epoch) {
        const auto te = std::chrono::steady_clock::now();
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                halted = true;
                log.stop_reason = "max_steps";
                break;
            }
            std::vector<const EncodedExample*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
                batch.push_back(&examples[order[i]]);
            }
            for (auto& p : params) p.clear_grad();
            Tensor loss = batch_loss(train_forward, batch, cfg.mask_target_only);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                GradTape::current().clear();
                throw TrainingError("non-finite loss at step " + std::to_string(step));
            }
            backward(loss);
            if (sign < 0.0) {
                for (auto& p : params) {
                    if (!p.has_grad()) continue;
                    for (double& g : p.mutable_grad()) g = -g;
                }
            }
            if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
            const double lr = scheduled_lr(cfg, step, total_steps);
            opt->step(params, lr);
            log.steps.push_back({step, epoch, value, lr});
            epoch_loss += value;
            ++epoch_steps;
            ++step;
            if (cfg.divergence_ceiling > 0.0 && value > cfg.divergence_ceiling) {
                halted = true;
                log.stop_reason = "diverged";
                break;
            }
        }
        for (auto& p : params) p.clear_grad();
        if (epoch_steps == 0) break;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(epoch_steps);
        rec.objective = full_objective(eval_forward, examples, 16, cfg.mask_target_only);
        if (monitor) {
            MonitorResult m = monitor(epoch);
            rec.usr = m.usr;
            rec.gur = m.gur;
            rec.recall = m.recall;
            if (m.stop) {
                halted = true;
                log.stop_reason = "monitor";
            }
            if (early) {
                const bool admissible = m.gur < 0.0 || (1.0 - m.gur) <= cfg.early_stop.max_gur_drop + 1e-12;
                if (admissible && m.usr > best_usr) {
                    best_usr = m.usr;
                    best = snapshot(params);
                    log.best_epoch = epoch;
                    since_best = 0;
                } else {
                    ++since_best;
                }
                if (!admissible) {
                    halted = true;
                    log.stop_reason = "gur_drop";
                } else if (since_best >= cfg.early_stop.patience) {
                    halted = true;
                    log.stop_reason = "patience";
                }
            }
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count();
        log.epochs.push_back(rec);
    }
    if (log.stop_reason.empty()) log.stop_reason = "epochs";
    if (early) {
        restore(params, best);
    } else {
        log.best_epoch = log.epochs.empty() ? 0 : log.epochs.back().epoch;
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
}

std::vector<EncodedExample> encode_all(const Tokenizer& tok, const std::vector<NegativeExample>& examples) {
    std::vector<EncodedExample> out;
    for (const auto& e : examples) out.push_back(encode_example(tok, e.prompt, e.target));
    return out;
}

std::vector<EncodedExample> encode_all(const Tokenizer& tok, const std::vector<TextExample>& examples) {
    std::vector<EncodedExample> out;
    for (const auto& e : examples) out.push_back(encode_example(tok, e.prompt, e.target));
    return out;
}

PretrainResult pretrain(const ModelConfig& model_config, const std::vector<TextExample>& texts,
                        const Tokenizer& tok, const TrainConfig& cfg, const PretrainOptions& options,
                        const std::function<double(const LanguageModel&)>& recall) {
    TransformerModel model(model_config);
    model.set_trainable(true);
    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    auto examples = encode_all(tok, texts);
    for (const auto& e : examples) {
        if (e.input.size() > model_config.max_seq_len) {
            throw ConfigError("training text longer than model.max_seq_len: " + std::to_string(e.input.size()));
        }
    }
    TrainConfig c = cfg;
    c.mask_target_only = false;
    c.early_stop.enabled = false;
    double last_recall = 0.0;
    auto forward = [&](const TokenBatch& b) { return model.forward_batch(b); };
    Monitor monitor = [&](std::size_t epoch) {
        MonitorResult m;
        if (epoch % std::max<std::size_t>(1, options.eval_every) == 0 || epoch == c.epochs) {
            last_recall = recall(model);
            m.recall = last_recall;
            m.stop = last_recall >= options.recall_gate;
        }
        return m;
    };
    TrainLog log = train_loop(params, examples, forward, forward, c, 1.0, monitor);
    log.method = "pretrain";
    if (log.epochs.empty() || log.epochs.back().recall < 0.0) last_recall = recall(model);
    model.set_trainable(false);
    for (auto& p : model.parameters()) p.tensor.clear_grad();
    if (last_recall < options.recall_gate) {
        throw TrainingError("pretraining recall gate unmet: recall " + std::to_string(last_recall) +
                            " < " + std::to_string(options.recall_gate) + " after " +
                            std::to_string(log.epochs.size()) + " epochs");
    }
    return {std::move(model), std::move(log), last_recall};
}

LuneResult unlearn_lune(const TransformerModel& base, const std::vector<NegativeExample>& negatives,
                        const InjectionPlan& plan, const TrainConfig& cfg, const Tokenizer& tok,
                        const ModelMonitor& monitor) {
    if (negatives.empty()) throw ContractError("unlearn_lune: negative set is empty");
    const std::uint64_t before = base.checksum();
    AdaptedModel model = inject(base, plan, derive_seed(cfg.seed, "init"));
    const std::uint64_t frozen = model.backbone().checksum();
    std::vector<Tensor> params;
    for (auto& p : model.trainable_parameters()) params.push_back(p.tensor);

    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
    BatchForward train = [&](const TokenBatch& b) { return model.forward_batch(b, &dropout_rng); };
    BatchForward eval = [&](const TokenBatch& b) { return model.forward_batch(b, nullptr); };
    Monitor mon;
    if (monitor) mon = [&](std::size_t epoch) { return monitor(model, epoch); };

    TrainLog log = train_loop(params, encode_all(tok, negatives), train, eval, cfg, 1.0, mon);
    log.method = "lune";
    if (model.backbone().checksum() != frozen || base.checksum() != before || frozen != before) {
        throw TrainingError("backbone checksum changed during adapter training");
    }
    return {std::move(model), std::move(log)};
}

namespace {

FullResult train_full(const TransformerModel& base, const std::vector<EncodedExample>& examples,
                      const TrainConfig& cfg, double sign, const ModelMonitor& monitor, const char* method) {
    TransformerModel model = base.clone();
    model.set_trainable(true);
    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    BatchForward fwd = [&](const TokenBatch& b) { return model.forward_batch(b); };
    Monitor mon;
    if (monitor) mon = [&](std::size_t epoch) { return monitor(model, epoch); };
    TrainLog log = train_loop(params, examples, fwd, fwd, cfg, sign, mon);
    log.method = method;
    model.set_trainable(false);
    for (auto& p : model.parameters()) p.tensor.clear_grad();
    return {std::move(model), std::move(log)};
}

}  // namespace

FullResult unlearn_full_ft(const TransformerModel& base, const std::vector<NegativeExample>& negatives,
                           const TrainConfig& cfg, const Tokenizer& tok, const ModelMonitor& monitor) {
    if (negatives.empty()) throw ContractError("unlearn_full_ft: negative set is empty");
    return train_full(base, encode_all(tok, negatives), cfg, 1.0, monitor, "full_ft");
}

FullResult unlearn_ga(const TransformerModel& base, const std::vector<TextExample>& target_qa,
                      const TrainConfig& cfg, const Tokenizer& tok, const ModelMonitor& monitor) {
    if (target_qa.empty()) throw ContractError("unlearn_ga: no target pairs");
    if (!(cfg.grad_clip > 0.0)) throw ConfigError("gradient ascent requires grad_clip > 0");
    if (cfg.max_steps == 0) throw ConfigError("gradient ascent requires a step cap (max_steps > 0)");
    return train_full(base, encode_all(tok, target_qa), cfg, -1.0, monitor, "ga");
}

}  // namespace lune
