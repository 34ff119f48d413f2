#pragma once

#include "lune/corpus.hpp"
#include "lune/data.hpp"
#include "lune/lora.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lune {

enum class OptimizerKind { kSgd, kAdamW };
enum class Schedule { kConstant, kWarmupCosine };

const char* optimizer_name(OptimizerKind k);
std::optional<OptimizerKind> parse_optimizer(std::string_view s);
const char* schedule_name(Schedule s);
std::optional<Schedule> parse_schedule(std::string_view s);

struct EarlyStop {
    bool enabled = true;
    std::size_t patience = 3;     // epochs without a USR improvement
    double max_gur_drop = 0.005;  // as a fraction: 0.005 is half a percentage point
};

struct TrainConfig {
    double learning_rate = 2e-4;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    OptimizerKind optimizer = OptimizerKind::kAdamW;
    Schedule schedule = Schedule::kWarmupCosine;
    double warmup_fraction = 0.05;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // global-norm clip; 0 disables
    std::uint64_t seed = 0;
    bool shuffle = true;
    bool mask_target_only = true;
    EarlyStop early_stop;
    std::size_t max_steps = 0;         // 0 = no cap
    double divergence_ceiling = 0.0;   // 0 = none; gradient ascent stops above it

    void validate() const;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<Tensor>& params, double lr) = 0;
    virtual std::size_t state_entries() const = 0;
};

class Sgd : public Optimizer {
public:
    void step(std::vector<Tensor>& params, double lr) override;
    std::size_t state_entries() const override { return 0; }
};

// Decoupled weight decay; moment buffers exist only for the given parameters.
class AdamW : public Optimizer {
public:
    AdamW(const std::vector<Tensor>& params, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);
    void step(std::vector<Tensor>& params, double lr) override;
    std::size_t state_entries() const override;

private:
    double wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, const std::vector<Tensor>& params);

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

// Scales gradients in place so their global L2 norm is at most `max_norm`;
// returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean of step losses (dropout active)
    double objective = 0.0;   // full pass over the training set, dropout off
    double usr = -1.0;        // monitor values; -1 when not measured
    double gur = -1.0;
    double recall = -1.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::string method;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    double initial_objective = 0.0;
    double wall_seconds = 0.0;
    std::size_t trainable_params = 0;
    std::size_t optimizer_state_entries = 0;
    std::size_t n_examples = 0;
    std::size_t best_epoch = 0;  // 0 = initial parameters
    std::string stop_reason;

    void write_jsonl(const std::filesystem::path& path) const;
};

struct MonitorResult {
    double usr = -1.0;
    double gur = -1.0;
    double recall = -1.0;
    bool stop = false;  // request an immediate stop, keeping current parameters
};

using Monitor = std::function<MonitorResult(std::size_t epoch)>;

// Minimizes (sign = +1) or maximizes (sign = -1) the batch loss over
// `examples`. With early stopping enabled and a monitor present the best
// admissible epoch's parameters are restored at the end.
TrainLog train_loop(std::vector<Tensor> params, const std::vector<EncodedExample>& examples,
                    const BatchForward& train_forward, const BatchForward& eval_forward,
                    const TrainConfig& cfg, double sign, const Monitor& monitor);

std::vector<EncodedExample> encode_all(const Tokenizer& tok, const std::vector<NegativeExample>& examples);
std::vector<EncodedExample> encode_all(const Tokenizer& tok, const std::vector<TextExample>& examples);

struct PretrainOptions {
    double recall_gate = 0.95;
    std::size_t eval_every = 5;
};

struct PretrainResult {
    TransformerModel model;
    TrainLog log;
    double recall = 0.0;
};

// `recall` scores a model on the fact set; training stops once it reaches the
// gate. Failing the gate at the epoch budget raises TrainingError.
PretrainResult pretrain(const ModelConfig& model_config, const std::vector<TextExample>& texts,
                        const Tokenizer& tok, const TrainConfig& cfg, const PretrainOptions& options,
                        const std::function<double(const LanguageModel&)>& recall);

using ModelMonitor = std::function<MonitorResult(const LanguageModel&, std::size_t epoch)>;

struct LuneResult {
    AdaptedModel model;
    TrainLog log;
};

// Negative-only descent on the adapters of a frozen copy of `base`.
LuneResult unlearn_lune(const TransformerModel& base, const std::vector<NegativeExample>& negatives,
                        const InjectionPlan& plan, const TrainConfig& cfg, const Tokenizer& tok,
                        const ModelMonitor& monitor = {});

struct FullResult {
    TransformerModel model;
    TrainLog log;
};

// Same objective with every backbone parameter trainable.
FullResult unlearn_full_ft(const TransformerModel& base, const std::vector<NegativeExample>& negatives,
                           const TrainConfig& cfg, const Tokenizer& tok, const ModelMonitor& monitor = {});

// Gradient ascent on the true answers of the target QA pairs.
FullResult unlearn_ga(const TransformerModel& base, const std::vector<TextExample>& target_qa,
                      const TrainConfig& cfg, const Tokenizer& tok, const ModelMonitor& monitor = {});

}  // namespace lune
