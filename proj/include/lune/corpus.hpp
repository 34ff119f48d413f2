#pragma once

#include "lune/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lune {

enum class Split { kRetained, kTarget, kHoldout };
enum class Strategy { kContradiction, kAlternative, kParaphrase };
enum class Quality { kHigh, kMedium, kLow };

const char* split_name(Split s);
const char* strategy_name(Strategy s);
const char* quality_name(Quality q);
std::optional<Strategy> parse_strategy(std::string_view s);
std::optional<Quality> parse_quality(std::string_view s);

inline constexpr Strategy kAllStrategies[] = {Strategy::kContradiction, Strategy::kAlternative,
                                              Strategy::kParaphrase};

// One declarative phrasing of a relation in four forms. Placeholders are
// {S} (subject) and {O} (object).
struct Frame {
    std::string affirm;
    std::string negate;
    std::string hedge_negate;
    std::string hedge_alt;
};

struct RelationSpec {
    std::string name;
    std::vector<std::string> subjects;
    std::vector<std::string> objects;
    std::vector<Frame> frames;                // frames[0] is the canonical sentence
    std::vector<std::string> qa_prompts;      // used in training and for USR
    std::vector<std::string> probe_prompts;   // held out; adversarial paraphrases
    std::vector<std::string> loose_prompts;   // loosely related questions (low tier)
    std::vector<std::string> fillers;         // uninformative statements (low tier)
};

// The five built-in relations with disjoint subject pools.
const std::vector<RelationSpec>& relation_bank();
const RelationSpec& relation_spec(std::string_view name);

std::string render(std::string_view tmpl, std::string_view subject, std::string_view object = "");

struct FactRecord {
    int id = 0;
    std::string subject;
    std::string relation;
    std::string object;
    Split split = Split::kRetained;
};

// A (prompt, target) pair. Pretraining texts use an empty prompt.
struct TextExample {
    std::string prompt;
    std::string target;
    int source_fact = -1;
};

struct NegativeExample {
    std::string prompt;
    std::string target;
    Strategy strategy = Strategy::kContradiction;
    Quality quality = Quality::kHigh;
    int source_fact = -1;
    std::string template_id;
};

struct Probe {
    std::string prompt;
    int fact_id = -1;
};

struct CorpusConfig {
    std::size_t n_facts = 220;   // trained facts, targets included
    std::size_t n_targets = 20;
    std::size_t n_holdout = 20;  // never trained; membership-inference nonmembers
    std::uint64_t seed = 0;
};

struct Corpus {
    std::vector<FactRecord> facts;  // sorted by id; trained facts then holdout
    std::vector<TextExample> training_texts;

    std::vector<FactRecord> by_split(Split s) const;
    const FactRecord& fact(int id) const;
};

// Fails with ConfigError when a relation runs out of subjects.
Corpus generate_corpus(const CorpusConfig& config);

// Declaratives through every frame plus every QA prompt with its answer.
std::vector<TextExample> render_fact(const FactRecord& fact);

// Vocabulary over every pool entry and template bank word.
Tokenizer build_tokenizer(std::size_t max_vocab);

struct NegativeOptions {
    std::size_t per_fact_cap = 2;
    std::size_t per_template_cap = 2;
};

// Template-generated negatives for each fact; at most `per_fact_cap` per fact.
std::vector<NegativeExample> make_negatives(const std::vector<FactRecord>& facts, Strategy strategy,
                                            Quality quality, const NegativeOptions& options,
                                            std::uint64_t seed);

// Every strategy at one quality tier, concatenated in strategy order.
std::vector<NegativeExample> make_negative_set(const std::vector<FactRecord>& facts, Quality quality,
                                               const NegativeOptions& options, std::uint64_t seed);

// Why a candidate negative would be discarded, or nullopt if it is admissible.
std::optional<std::string> reject_reason(const NegativeExample& candidate, const FactRecord& fact);

std::vector<Probe> make_adversarial_probes(const std::vector<FactRecord>& facts, std::size_t n_per_fact,
                                           std::uint64_t seed);

// QA pairs over facts whose subjects are disjoint from the targets.
std::vector<NegativeExample> make_irrelevant_controls(const Corpus& corpus, std::size_t n, std::uint64_t seed);

// The QA prompts used during training for a fact, with their answers.
std::vector<TextExample> qa_pairs(const FactRecord& fact);

// Line-delimited JSON I/O.
void write_facts(const std::filesystem::path& path, const std::vector<FactRecord>& facts);
std::vector<FactRecord> read_facts(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path, const std::vector<NegativeExample>& examples);
void write_texts(const std::filesystem::path& path, const std::vector<TextExample>& texts);

// Hedge and negation lexicon used by both the generator filters and the verdict rule.
bool is_hedge_word(std::string_view w);
bool is_negation_word(std::string_view w);

// True when some sentence mentions `object` without a clear denial. A
// sentence denies only if it carries a negation and no hedge ("may",
// "might", "not always"); hedged mentions still count as affirmations.
bool affirms_object(const std::vector<std::string>& tokens, std::string_view object);

}  // namespace lune
