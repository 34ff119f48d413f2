#pragma once

#include "lune/config.hpp"
#include "lune/eval.hpp"
#include "lune/lora.hpp"
#include "lune/trainer.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lune {

// Everything one replicate needs, derived from a RunConfig and its seed.
struct Lab {
    RunConfig config;
    Corpus corpus;
    Tokenizer tokenizer;
    std::vector<FactRecord> trained;   // retained + target
    std::vector<FactRecord> targets;
    std::vector<FactRecord> gur_dev;   // retained facts seen by early stopping
    std::vector<FactRecord> gur_eval;  // retained facts used for reported GUR
    std::vector<PromptItem> target_prompts;
    std::vector<PromptItem> dev_prompts;
    std::vector<PromptItem> general_prompts;
    std::vector<Probe> probes;
    std::vector<TextExample> members;     // target QA pairs
    std::vector<TextExample> nonmembers;  // holdout QA pairs, same count
    std::vector<TextExample> target_qa;
    AcceptSpec accept;

    Evaluator evaluator() const;
};

// Sub-seeds for one replicate seed.
struct SeedPlan {
    std::uint64_t corpus, init, pretrain, negatives, probes, unlearn, eval, gur_split, irrelevant;
};
SeedPlan seed_plan(std::uint64_t seed);

Lab prepare_lab(const RunConfig& config);

// Fraction of trained facts whose every QA prompt is answered with the true object.
double fact_recall(const Lab& lab, const LanguageModel& model);

// Directory name of the cached pretrained backbone for this config.
std::string pretrain_run_id(const RunConfig& config);
std::filesystem::path pretrain_dir(const RunConfig& config);

struct PretrainOutcome {
    TransformerModel model;
    std::filesystem::path dir;
    double recall = 0.0;
    bool cached = false;
};

// Pretrains and writes the run directory, or loads it when a verified one exists
// and `reuse` is set.
PretrainOutcome ensure_pretrained(const Lab& lab, bool reuse, std::ostream* progress = nullptr);

// IoError when the run directory or checkpoint is missing.
TransformerModel load_pretrained(const RunConfig& config);

enum class Method { kLune, kFullFt, kGa, kIrrelevantControl };
const char* method_name(Method m);
std::optional<Method> parse_method(std::string_view s);

struct TrajectoryPoint {
    std::size_t epoch = 0;
    double usr = 0.0;
    double gur = 0.0;
};

struct MethodOutcome {
    Method method = Method::kLune;
    std::variant<AdaptedModel, TransformerModel> model;
    TrainLog log;
    std::size_t n_train = 0;
    std::vector<TrajectoryPoint> trajectory;  // filled when tracking is requested

    const LanguageModel& language_model() const;
};

struct MethodOptions {
    // Evaluate USR and reported GUR after every epoch into `trajectory`.
    bool track_eval_metrics = false;
};

// The training sets each method uses.
std::vector<NegativeExample> negatives_for(const Lab& lab);
std::vector<NegativeExample> irrelevant_for(const Lab& lab, std::size_t n);

MethodOutcome run_method(const Lab& lab, const TransformerModel& base, Method method,
                         const MethodOptions& options = {});

struct EvalReport {
    std::string label;
    std::string method;
    std::uint64_t seed = 0;
    std::string checkpoint;
    double usr = 0.0;
    double gur = 0.0;
    double apr = 0.0;
    double mia = 0.0;
    std::size_t n_target = 0, n_general = 0, n_probe = 0, n_mia = 0;
    std::vector<PromptRow> rows;  // target, probe and general rows in that order
};

EvalReport evaluate(const Lab& lab, const LanguageModel& model, const LanguageModel& original,
                    const std::string& label);

// A completed unlearning run on disk.
struct UnlearnRun {
    MethodOutcome outcome;
    EvalReport report;
    std::filesystem::path dir;
};

std::string unlearn_run_id(const RunConfig& config, Method method);

// Runs a method against the cached backbone and writes checkpoint, trainlog,
// report and manifest into its own run directory.
UnlearnRun unlearn_and_record(const Lab& lab, const TransformerModel& base, const std::filesystem::path& base_dir,
                              Method method, const MethodOptions& options = {}, std::ostream* progress = nullptr);

std::string version_string();

}  // namespace lune
