#include "lune/experiments.hpp"

#include "lune/error.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace lune {

RunConfig ablation_config(const RunConfig& base, std::uint64_t seed) {
    RunConfig c = base;
    c.seed = seed;
    if (base.sweep.fixed_budget) c.unlearn.early_stop.enabled = false;
    if (base.sweep.learning_rate > 0.0) c.unlearn.learning_rate = base.sweep.learning_rate;
    return c;
}

const PretrainOutcome& Workbench::backbone(const RunConfig& config) {
    const std::string key = pretrain_dir(config).string();
    auto it = backbones_.find(key);
    if (it == backbones_.end()) {
        const Lab lab = prepare_lab(config);
        auto out = std::make_unique<PretrainOutcome>(ensure_pretrained(lab, true, progress_));
        it = backbones_.emplace(key, std::move(out)).first;
    }
    return *it->second;
}

CellResult Workbench::run(const RunConfig& config, Method method, const std::string& condition,
                          const MethodOptions& options) {
    // Tracking only adds evaluation, so a tracked run also serves untracked requests.
    const std::string id = unlearn_run_id(config, method);
    const std::string key = id + (options.track_eval_metrics ? "+track" : "");
    for (const std::string& k : {id + "+track", key}) {
        if (auto it = runs_.find(k); it != runs_.end()) {
            CellResult c = it->second;
            c.condition = condition;
            return c;
        }
    }
    const PretrainOutcome& base = backbone(config);
    const Lab lab = prepare_lab(config);
    UnlearnRun r = unlearn_and_record(lab, base.model, base.dir, method, options, progress_);
    CellResult cell{condition, config.seed, std::move(r.report), std::move(r.outcome.log),
                    std::move(r.outcome.trajectory), r.dir, r.outcome.n_train};
    runs_.emplace(key, cell);
    return cell;
}

std::vector<TableRow> summarize(const std::vector<CellResult>& cells) {
    std::vector<EvalReport> reports;
    for (const auto& c : cells) {
        reports.push_back(c.report);
        reports.back().label = c.condition;
    }
    return group_reports(reports, [](const EvalReport& r) { return r.label; });
}

double condition_mean(const std::vector<CellResult>& cells, const std::string& condition,
                      double EvalReport::*metric) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : cells) {
        if (c.condition != condition) continue;
        s += c.report.*metric;
        ++n;
    }
    if (n == 0) throw ContractError("no cells for condition '" + condition + "'");
    return s / static_cast<double>(n);
}

std::vector<CellResult> sweep_rank(Workbench& bench, const RunConfig& config, const std::vector<std::size_t>& ranks) {
    if (ranks.empty()) throw ConfigError("sweep-rank needs at least one rank");
    const std::size_t max_rank = std::min(config.model.d_model, config.model.d_ff);
    for (std::size_t r : ranks) {
        if (r == 0 || r > max_rank) {
            throw ConfigError("rank " + std::to_string(r) + " outside [1, " + std::to_string(max_rank) + "]");
        }
    }
    std::vector<CellResult> cells;
    for (std::size_t r : ranks) {
        for (std::uint64_t s : config.sweep.seeds) {
            RunConfig c = ablation_config(config, s);
            c.lora.rank = r;
            cells.push_back(bench.run(c, Method::kLune, "r=" + std::to_string(r)));
        }
    }
    return cells;
}

std::vector<CellResult> quality_ablation(Workbench& bench, const RunConfig& config) {
    std::vector<CellResult> cells;
    for (Quality q : {Quality::kHigh, Quality::kMedium, Quality::kLow}) {
        for (std::uint64_t s : config.sweep.seeds) {
            RunConfig c = ablation_config(config, s);
            c.quality = q;
            cells.push_back(bench.run(c, Method::kLune, quality_name(q)));
        }
    }
    return cells;
}

std::vector<CellResult> negative_vs_irrelevant(Workbench& bench, const RunConfig& config) {
    std::vector<CellResult> cells;
    for (Method m : {Method::kLune, Method::kIrrelevantControl}) {
        for (std::uint64_t s : config.sweep.seeds) {
            cells.push_back(bench.run(ablation_config(config, s), m, method_name(m)));
        }
    }
    return cells;
}

MatchedPoint match_on_usr(std::uint64_t seed, const TrajectoryPoint& lune_final,
                          const std::vector<TrajectoryPoint>& full, double window) {
    MatchedPoint p;
    p.seed = seed;
    p.lune_usr = lune_final.usr;
    p.lune_gur = lune_final.gur;
    for (const auto& t : full) {
        if (std::abs(t.usr - lune_final.usr) <= window + 1e-12 && (!p.matched || t.gur > p.full_gur)) {
            p.matched = p.within_window = true;
            p.full_usr = t.usr;
            p.full_gur = t.gur;
        }
    }
    if (p.matched) return p;
    for (std::size_t i = 1; i < full.size(); ++i) {
        const auto& a = full[i - 1];
        const auto& b = full[i];
        const double lo = std::min(a.usr, b.usr), hi = std::max(a.usr, b.usr);
        if (lune_final.usr < lo || lune_final.usr > hi || a.usr == b.usr) continue;
        const double w = (lune_final.usr - a.usr) / (b.usr - a.usr);
        const double g = a.gur + w * (b.gur - a.gur);
        if (!p.matched || g > p.full_gur) {
            p.matched = true;
            p.full_usr = lune_final.usr;
            p.full_gur = g;
        }
    }
    return p;
}

LoraVsFull lora_vs_full(Workbench& bench, const RunConfig& config, double window) {
    LoraVsFull out;
    MethodOptions track;
    track.track_eval_metrics = true;
    for (std::uint64_t s : config.sweep.seeds) {
        const RunConfig c = ablation_config(config, s);
        CellResult lune = bench.run(c, Method::kLune, "lune", track);
        CellResult full = bench.run(c, Method::kFullFt, "full_ft", track);
        MatchedPoint p = match_on_usr(s, {0, lune.report.usr, lune.report.gur}, full.trajectory, window);
        p.lune_params = lune.log.trainable_params;
        p.full_params = full.log.trainable_params;
        out.matched.push_back(p);
        out.cells.push_back(std::move(lune));
        out.cells.push_back(std::move(full));
    }
    return out;
}

std::string format_matched(const LoraVsFull& r) {
    std::ostringstream out;
    out << "| Seed | LUNE USR (%) | LUNE GUR (%) ↑ | Full-FT USR (%) | Full-FT GUR (%) ↑ | Match | LUNE params | Full-FT params |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& p : r.matched) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "| %llu | %.1f | %.1f | %.1f | %.1f | %s | %zu | %zu |\n",
                      static_cast<unsigned long long>(p.seed), 100 * p.lune_usr, 100 * p.lune_gur,
                      100 * p.full_usr, 100 * p.full_gur,
                      !p.matched ? "none" : (p.within_window ? "epoch" : "interpolated"), p.lune_params,
                      p.full_params);
        out << buf;
    }
    return out.str();
}

}  // namespace lune
