#pragma once

#include "lune/corpus.hpp"
#include "lune/data.hpp"
#include "lune/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lune {

struct PromptItem {
    std::string prompt;
    int fact_id = -1;
};

// Per-fact true objects; an output is acceptable when it does not affirm the
// fact's object (see affirms_object).
struct AcceptSpec {
    std::map<int, std::string> objects;
    std::string rule = "negation-aware-affirmation";

    static AcceptSpec from_facts(const std::vector<FactRecord>& facts);
    const std::string& object(int fact_id) const;  // ConfigError when missing
};

struct PromptRow {
    std::string set;
    std::string prompt;
    std::string output;
    int fact_id = -1;
    bool acceptable = false;
};

struct MetricResult {
    double value = 0.0;
    std::vector<PromptRow> rows;
};

struct MiaResult {
    double accuracy = 0.5;              // balanced accuracy on the evaluation split
    double calibration_accuracy = 0.5;
    double threshold = 0.0;             // member iff loss < threshold
    std::size_t n_eval = 0;
};

struct EvalOptions {
    std::size_t max_new_tokens = 12;
    double mia_calibration_fraction = 0.5;
    std::uint64_t mia_seed = 0;
};

class Evaluator {
public:
    Evaluator(const Tokenizer& tokenizer, EvalOptions options);

    std::vector<TokenId> decode(const LanguageModel& model, const std::string& prompt) const;

    // Fraction of prompts whose greedy continuation is acceptable.
    MetricResult usr(const LanguageModel& model, const std::vector<PromptItem>& prompts,
                     const AcceptSpec& accept) const;
    // Same verdict over adversarial probes.
    MetricResult apr(const LanguageModel& model, const std::vector<Probe>& probes,
                     const AcceptSpec& accept) const;

    // Object-level exact match: the fraction of prompts whose continuation
    // affirms the fact's true object (the complement of the USR verdict).
    MetricResult accuracy(const LanguageModel& model, const std::vector<PromptItem>& prompts,
                          const AcceptSpec& truth) const;

    // Perf(unlearned) / Perf(original); TrainingError if the original scores zero.
    double gur(const LanguageModel& unlearned, const LanguageModel& original,
               const std::vector<PromptItem>& general_set, const AcceptSpec& truth) const;

    // Mean NLL of the answer span per QA pair.
    std::vector<double> answer_losses(const LanguageModel& model, const std::vector<TextExample>& qa) const;

    MiaResult mia(const LanguageModel& model, const std::vector<TextExample>& members,
                  const std::vector<TextExample>& nonmembers) const;

    const Tokenizer& tokenizer() const { return tok_; }
    const EvalOptions& options() const { return options_; }

private:
    const Tokenizer& tok_;
    EvalOptions options_;
};

double gur_ratio(double perf_unlearned, double perf_original);

// Balanced accuracy of "member iff loss < threshold".
double balanced_accuracy(const std::vector<double>& member_losses,
                         const std::vector<double>& nonmember_losses, double threshold);

// Loss-threshold attack: the threshold maximizing balanced accuracy on a
// seeded calibration split is applied to the remaining evaluation split.
MiaResult mia_from_losses(const std::vector<double>& member_losses,
                          const std::vector<double>& nonmember_losses, std::uint64_t seed,
                          double calibration_fraction = 0.5);

}  // namespace lune
