#pragma once

#include "lune/lab.hpp"
#include "lune/report.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace lune {

// Config for one ablation arm: the replicate seed, every epoch run
// (when sweep.fixed_budget) and sweep.learning_rate when it is nonzero.
RunConfig ablation_config(const RunConfig& base, std::uint64_t seed);

struct CellResult {
    std::string condition;
    std::uint64_t seed = 0;
    EvalReport report;
    TrainLog log;
    std::vector<TrajectoryPoint> trajectory;
    std::filesystem::path dir;
    std::size_t n_train = 0;
};

// Caches labs, pretrained backbones and finished runs for one process.
class Workbench {
public:
    explicit Workbench(std::ostream* progress = nullptr) : progress_(progress) {}

    const PretrainOutcome& backbone(const RunConfig& config);
    CellResult run(const RunConfig& config, Method method, const std::string& condition,
                   const MethodOptions& options = {});

private:
    std::ostream* progress_;
    std::map<std::string, std::unique_ptr<PretrainOutcome>> backbones_;
    std::map<std::string, CellResult> runs_;
};

std::vector<TableRow> summarize(const std::vector<CellResult>& cells);

// Mean over seeds of one metric for one condition.
double condition_mean(const std::vector<CellResult>& cells, const std::string& condition,
                      double EvalReport::*metric);

// LUNE at each rank, every seed.
std::vector<CellResult> sweep_rank(Workbench& bench, const RunConfig& config, const std::vector<std::size_t>& ranks);

// LUNE with high, medium and low quality negatives, every seed.
std::vector<CellResult> quality_ablation(Workbench& bench, const RunConfig& config);

// LUNE against LoRA trained on irrelevant QA pairs at equal budget.
std::vector<CellResult> negative_vs_irrelevant(Workbench& bench, const RunConfig& config);

struct MatchedPoint {
    std::uint64_t seed = 0;
    double lune_usr = 0.0;
    double lune_gur = 0.0;
    double full_usr = 0.0;   // the matched full-FT point
    double full_gur = 0.0;
    bool within_window = false;  // false: interpolated between bracketing epochs
    bool matched = false;        // false: the full-FT trajectory never reaches lune_usr
    std::size_t lune_params = 0;
    std::size_t full_params = 0;
};

// Full-FT GUR at LUNE's final USR: the best full-FT epoch with |USR - u| <= window,
// else linear interpolation between the epochs that bracket u.
MatchedPoint match_on_usr(std::uint64_t seed, const TrajectoryPoint& lune_final,
                          const std::vector<TrajectoryPoint>& full_trajectory, double window = 0.03);

struct LoraVsFull {
    std::vector<CellResult> cells;
    std::vector<MatchedPoint> matched;
};

LoraVsFull lora_vs_full(Workbench& bench, const RunConfig& config, double window = 0.03);

std::string format_matched(const LoraVsFull& result);

}  // namespace lune
