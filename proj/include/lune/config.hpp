#pragma once

#include "lune/corpus.hpp"
#include "lune/eval.hpp"
#include "lune/model.hpp"
#include "lune/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lune {

struct LoraConfig {
    std::size_t rank = 16;
    double dropout = 0.05;
    std::vector<Projection> targets{std::begin(kAllProjections), std::end(kAllProjections)};
};

struct GaConfig {
    std::size_t max_steps = 0;          // 0 = the LUNE step budget
    double divergence_ceiling = 20.0;
};

struct LabEvalConfig {
    std::size_t max_new_tokens = 12;
    std::size_t probes_per_fact = 4;
    std::size_t gur_dev_facts = 40;     // retained facts reserved for early-stopping checks
    double mia_calibration_fraction = 0.5;
};

struct SweepConfig {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::size_t> ranks{2, 4, 8, 16, 32};
    bool fixed_budget = true;  // ablation arms run every epoch (no early stopping)
    double learning_rate = 3e-3;
};

// Whole-run configuration. Every key has a default; see config_keys(). The
// corpus, init, shuffle, dropout and eval seeds are derived from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    CorpusConfig corpus;
    ModelConfig model;
    TrainConfig pretrain;
    PretrainOptions pretrain_gate;
    LoraConfig lora;
    TrainConfig unlearn;
    GaConfig ga;
    NegativeOptions negatives;
    Quality quality = Quality::kHigh;
    LabEvalConfig eval;
    SweepConfig sweep;

    RunConfig();

    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string doc;
};

// Every recognised key in canonical order.
const std::vector<ConfigKey>& config_keys();

// Sets one key from a TOML literal ("2e-4", "true", "\"adamw\"", "[2, 4]").
// Bare words are accepted for string keys. Unknown keys raise ConfigError
// naming the key.
void set_config_value(RunConfig& config, const std::string& key, const std::string& literal);

std::string get_config_value(const RunConfig& config, const std::string& key);

// Flat TOML text; dotted keys are grouped under their section.
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_config(const std::filesystem::path& path);
std::string to_toml(const RunConfig& config);

// LUNE_<SECTION>__<KEY>=value, e.g. LUNE_UNLEARN__LEARNING_RATE=1e-3; LUNE_SEED=2.
void apply_env_overrides(RunConfig& config, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> lune_environment();

// "key=value" pairs.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

std::string config_hash(const RunConfig& config);

}  // namespace lune
