#include "lune/checkpoint.hpp"
#include "lune/config.hpp"
#include "lune/error.hpp"
#include "lune/experiments.hpp"
#include "lune/gradcheck.hpp"
#include "lune/lab.hpp"
#include "lune/projection.hpp"
#include "lune/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace lune;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    bool quiet = false;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    apply_env_overrides(cfg, lune_environment());
    apply_overrides(cfg, c.sets);
    if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
    cfg.validate();
    return cfg;
}

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string short_hash(const RunConfig& c) { return config_hash(c).substr(0, 8); }

void write_cells_csv(const fs::path& path, const std::vector<CellResult>& cells) {
    std::string s = "condition,seed,usr,gur,apr,mia,n_train,trainable_params,stop_reason,run_dir\n";
    for (const auto& c : cells) {
        s += c.condition + "," + std::to_string(c.seed) + "," + fmt("%.6f", c.report.usr) + "," +
             fmt("%.6f", c.report.gur) + "," + fmt("%.6f", c.report.apr) + "," + fmt("%.6f", c.report.mia) + "," +
             std::to_string(c.n_train) + "," + std::to_string(c.log.trainable_params) + "," + c.log.stop_reason +
             "," + c.dir.string() + "\n";
    }
    write_text(path, s);
}

int cmd_pretrain(const Common& common, bool reuse) {
    const RunConfig cfg = resolve(common);
    const Lab lab = prepare_lab(cfg);
    const PretrainOutcome out = ensure_pretrained(lab, reuse, progress(common));
    char sum[17];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(out.model.checksum()));
    std::cout << "run_dir " << out.dir.string() << "\n"
              << "recall " << fmt("%.4f", out.recall) << "\n"
              << "checksum " << sum << "\n";
    return 0;
}

int cmd_unlearn(const Common& common, const std::string& method_text, bool track) {
    const auto method = parse_method(method_text);
    if (!method) {
        throw ConfigError("unknown method '" + method_text + "' (expected lune, full_ft, ga or irrelevant_control)");
    }
    const RunConfig cfg = resolve(common);
    const TransformerModel base = load_pretrained(cfg);
    const Lab lab = prepare_lab(cfg);
    MethodOptions opts;
    opts.track_eval_metrics = track;
    const UnlearnRun run = unlearn_and_record(lab, base, pretrain_dir(cfg), *method, opts, progress(common));
    std::cout << "run_dir " << run.dir.string() << "\n"
              << format_table(group_reports({run.report}, [](const EvalReport& r) { return r.label; }));
    return 0;
}

struct LoadedRun {
    RunManifest manifest;
    RunConfig config;
    std::unique_ptr<TransformerModel> base;
    std::variant<std::monostate, AdaptedModel, TransformerModel> model;

    const LanguageModel& lm() const {
        if (auto* a = std::get_if<AdaptedModel>(&model)) return *a;
        return std::get<TransformerModel>(model);
    }
};

LoadedRun load_run(const fs::path& dir) {
    LoadedRun r;
    r.manifest = RunManifest::read(dir);
    r.manifest.verify(dir);
    r.config = load_config(dir / "config.toml");
    const ArtifactEntry* ck = r.manifest.find("checkpoint");
    if (!ck) throw IoError("manifest in " + dir.string() + " lists no checkpoint");
    if (r.manifest.kind == "pretrain") {
        r.base = std::make_unique<TransformerModel>(load_model(dir / ck->path));
        r.model = r.base->clone();
        return r;
    }
    const fs::path base_dir = r.manifest.info.at("base_dir");
    if (file_checksum(base_dir / "model.bin") != r.manifest.info.at("base_checkpoint_checksum")) {
        throw IoError("backbone " + (base_dir / "model.bin").string() + " changed since " + r.manifest.run_id);
    }
    r.base = std::make_unique<TransformerModel>(load_model(base_dir / "model.bin"));
    if (ck->path == "adapters.bin") {
        r.model = load_adapters(dir / ck->path, *r.base);
    } else {
        r.model = load_model(dir / ck->path);
    }
    return r;
}

int cmd_eval(const Common& common, const std::vector<std::string>& dirs, std::string out) {
    if (dirs.empty()) throw ConfigError("eval needs at least one run directory");
    const RunConfig cfg = resolve(common);
    if (out.empty()) out = (fs::path(cfg.out_dir) / "eval").string();
    fs::create_directories(out);
    std::vector<EvalReport> reports;
    for (const auto& d : dirs) {
        LoadedRun run = load_run(d);
        const Lab lab = prepare_lab(run.config);
        EvalReport rep = evaluate(lab, run.lm(), *run.base, run.manifest.run_id);
        rep.method = run.manifest.info.count("method") ? run.manifest.info.at("method") : "pretrained";
        rep.checkpoint = (fs::path(d) / run.manifest.find("checkpoint")->path).string();
        write_report_json(fs::path(out) / (rep.label + ".report.json"), rep);
        write_rows_csv(fs::path(out) / (rep.label + ".rows.csv"), rep);
        reports.push_back(std::move(rep));
    }
    std::string all = "label,seed,usr,gur,apr,mia\n";
    for (const auto& r : reports) {
        all += r.label + "," + std::to_string(r.seed) + "," + fmt("%.6f", r.usr) + "," + fmt("%.6f", r.gur) + "," +
               fmt("%.6f", r.apr) + "," + fmt("%.6f", r.mia) + "\n";
    }
    write_text(fs::path(out) / "metrics.csv", all);
    const std::string table = format_table(group_reports(reports, [](const EvalReport& r) { return r.label; }));
    write_text(fs::path(out) / "table.md", table);
    std::cout << table;
    return 0;
}

int finish_sweep(const RunConfig& cfg, const std::string& name, const std::vector<CellResult>& cells,
                 const std::string& title) {
    const fs::path dir = fs::path(cfg.out_dir) / (name + "-" + short_hash(cfg));
    const std::string table = format_table(summarize(cells), title);
    begin_run_dir(dir, cfg);
    write_text(dir / "summary.md", table);
    write_cells_csv(dir / "cells.csv", cells);
    std::cout << table << "\nsummary " << (dir / "summary.md").string() << "\n";
    return 0;
}

int cmd_sweep_rank(const Common& common, const std::vector<std::size_t>& ranks, bool ranks_given) {
    RunConfig cfg = resolve(common);
    if (ranks_given) cfg.sweep.ranks = ranks;
    Workbench bench(progress(common));
    const auto cells = sweep_rank(bench, cfg, cfg.sweep.ranks);
    return finish_sweep(cfg, "sweep-rank", cells, "Rank sweep (mean ± sem over seeds)");
}

int cmd_quality(const Common& common) {
    const RunConfig cfg = resolve(common);
    Workbench bench(progress(common));
    const auto cells = quality_ablation(bench, cfg);
    return finish_sweep(cfg, "quality-ablation", cells, "Negative-example quality (mean ± sem over seeds)");
}

int cmd_gradcheck(const Common& common, std::size_t instances, double tolerance) {
    const RunConfig cfg = resolve(common);
    const auto results = run_gradcheck(standard_gradcheck_cases(), derive_seed(cfg.seed, "gradcheck"), instances,
                                       tolerance);
    bool ok = true;
    std::cout << "op,instances,max_rel_error,status\n";
    for (const auto& r : results) {
        std::cout << r.op << "," << r.instances << "," << fmt("%.3e", r.max_rel_error) << ","
                  << (r.passed ? "pass" : "FAIL") << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : static_cast<int>(ExitCode::kInvariant);
}

int cmd_projection(const Common& common, std::size_t n_seeds) {
    const RunConfig cfg = resolve(common);
    const auto rows = run_projection_suite(cfg.model, cfg.lora.rank,
                                           {LayerLoss::kQuadratic, LayerLoss::kLinear, LayerLoss::kCrossEntropy},
                                           n_seeds, derive_seed(cfg.seed, "projection"));
    bool ok = true;
    std::string csv = "layer,loss,seed,eta,residual,ratio\n";
    for (const auto& r : rows) {
        for (const auto& row : r.report.rows) {
            csv += r.layer + "," + layer_loss_name(r.loss) + "," + std::to_string(r.seed) + "," +
                   fmt("%.6g", row.eta) + "," + fmt("%.6e", row.residual) + "," + fmt("%.6f", row.ratio) + "\n";
        }
        ok = ok && r.report.passed;
    }
    const fs::path dir = fs::path(cfg.out_dir) / "projection";
    write_text(dir / "residuals.csv", csv);

    std::cout << "layer,loss,probes,max_decay_ratio,status\n";
    for (const auto& kind : injected_layer_kinds(cfg.model)) {
        for (LayerLoss loss : {LayerLoss::kQuadratic, LayerLoss::kLinear, LayerLoss::kCrossEntropy}) {
            double worst = 0.0;
            std::size_t n = 0;
            bool pass = true;
            for (const auto& r : rows) {
                if (r.layer != kind.name || r.loss != loss) continue;
                worst = std::max(worst, r.report.max_ratio);
                pass = pass && r.report.passed;
                ++n;
            }
            std::cout << kind.name << "," << layer_loss_name(loss) << "," << n << "," << fmt("%.4f", worst) << ","
                      << (pass ? "pass" : "FAIL") << "\n";
        }
    }
    if (!ok) {
        std::cerr << "first-order residual decay above 0.3; residual table in " << (dir / "residuals.csv").string()
                  << "\n";
    }

    const InjectionPlan plan = InjectionPlan::standard(cfg.model, cfg.lora.rank, cfg.lora.targets, cfg.lora.dropout);
    const Lab lab = prepare_lab(cfg);
    ComplexityReport cr = complexity_report(cfg.model, plan, negatives_for(lab).size(), lab.corpus.training_texts.size());
    if (fs::exists(pretrain_dir(cfg) / "manifest.json")) {
        const TransformerModel base = load_pretrained(cfg);
        RunConfig one = cfg;
        one.unlearn.epochs = 1;
        one.unlearn.early_stop.enabled = false;
        const Lab l1 = prepare_lab(one);
        cr.epoch_seconds_lune = run_method(l1, base, Method::kLune).log.epochs.at(0).seconds;
        cr.epoch_seconds_full = run_method(l1, base, Method::kFullFt).log.epochs.at(0).seconds;
    }
    std::cout << "\ncomplexity\n"
              << "P " << cr.params << "\nP_LoRA " << cr.lora_params << "\nratio " << fmt("%.4f", cr.ratio) << "\n"
              << "adam_state_full " << cr.adam_state_full << "\nadam_state_lune " << cr.adam_state_lune << "\n"
              << "N_neg " << cr.n_neg << "\nN_full " << cr.n_full << "\n"
              << "epoch_seconds_lune " << fmt("%.3f", cr.epoch_seconds_lune) << "\n"
              << "epoch_seconds_full " << fmt("%.3f", cr.epoch_seconds_full) << "\n"
              << cr.reference_name << "_P " << cr.reference_params << "\n"
              << cr.reference_name << "_P_LoRA " << cr.reference_lora_params << "\n"
              << cr.reference_name << "_ratio " << fmt("%.3e", cr.reference_ratio) << "\n";
    return ok ? 0 : static_cast<int>(ExitCode::kInvariant);
}

std::string group_key(const RunConfig& c, const std::string& method) {
    return method + " r=" + std::to_string(c.lora.rank) + " " + quality_name(c.quality) + " lr=" +
           fmt("%g", c.unlearn.learning_rate) + (c.unlearn.early_stop.enabled ? " early-stop" : " fixed-budget");
}

int cmd_report(const Common& common, std::vector<std::string> dirs) {
    const RunConfig cfg = resolve(common);
    if (dirs.empty()) {
        if (!fs::exists(cfg.out_dir)) throw IoError("no run directory " + cfg.out_dir);
        for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
            if (fs::exists(e.path() / "report.json") && fs::exists(e.path() / "manifest.json")) {
                dirs.push_back(e.path().string());
            }
        }
        std::sort(dirs.begin(), dirs.end());
    }
    if (dirs.empty()) throw IoError("no finished runs under " + cfg.out_dir);
    std::vector<EvalReport> reports;
    for (const auto& d : dirs) {
        RunManifest::read(d).verify(d);
        EvalReport r = read_report_json(fs::path(d) / "report.json");
        r.label = group_key(load_config(fs::path(d) / "config.toml"), r.method);
        reports.push_back(std::move(r));
    }
    const std::string table =
        format_table(group_reports(reports, [](const EvalReport& r) { return r.label; }), "Runs (mean ± sem over seeds)");
    write_text(fs::path(cfg.out_dir) / "report.md", table);
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LUNE desk lab: LoRA unlearning with negative examples"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);
    Common common;
    app.add_option("-c,--config", common.config_path, "TOML config file")->check(CLI::ExistingFile);
    app.add_option("-s,--set", common.sets, "override a config key: key=value (repeatable)");
    app.add_option("-o,--out-dir", common.out_dir, "root directory for run outputs");
    app.add_flag("-q,--quiet", common.quiet, "no progress lines on stderr");

    bool reuse = false;
    auto* pretrain = app.add_subcommand("pretrain", "generate the corpus and pretrain the backbone");
    pretrain->add_flag("--reuse", reuse, "load a verified cached run instead of retraining");

    std::string method;
    bool track = false;
    auto* unlearn = app.add_subcommand("unlearn", "run an unlearning method against the pretrained backbone");
    unlearn->add_option("-m,--method", method, "lune, full_ft, ga or irrelevant_control")->required();
    unlearn->add_flag("--track", track, "evaluate USR and GUR after every epoch");

    std::vector<std::string> eval_dirs;
    std::string eval_out;
    auto* eval = app.add_subcommand("eval", "evaluate run directories and print a comparison table");
    eval->add_option("runs", eval_dirs, "run directories")->required();
    eval->add_option("--out", eval_out, "output directory (default <out_dir>/eval)");

    std::vector<std::size_t> ranks;
    auto* sweep = app.add_subcommand("sweep-rank", "LUNE at several ranks over the sweep seeds");
    auto* ranks_opt = sweep->add_option("--ranks", ranks, "comma-separated ranks (default sweep.ranks)")->delimiter(',');

    auto* quality = app.add_subcommand("quality-ablation", "LUNE with high, medium and low quality negatives");

    std::size_t instances = 20;
    double tolerance = 1e-4;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    gradcheck->add_option("--instances", instances, "random instances per op");
    gradcheck->add_option("--tolerance", tolerance, "maximum relative error");

    std::size_t n_seeds = 10;
    auto* projection = app.add_subcommand("projection", "first-order projection property and complexity accounting");
    projection->add_option("--seeds", n_seeds, "probes per layer type and loss");

    std::vector<std::string> report_dirs;
    auto* report = app.add_subcommand("report", "aggregate finished runs into a mean ± sem table");
    report->add_option("runs", report_dirs, "run directories (default: every run under out_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::kUsage);
    }

    try {
        if (*pretrain) return cmd_pretrain(common, reuse);
        if (*unlearn) return cmd_unlearn(common, method, track);
        if (*eval) return cmd_eval(common, eval_dirs, eval_out);
        if (*sweep) return cmd_sweep_rank(common, ranks, ranks_opt->count() > 0);
        if (*quality) return cmd_quality(common);
        if (*gradcheck) return cmd_gradcheck(common, instances, tolerance);
        if (*projection) return cmd_projection(common, n_seeds);
        if (*report) return cmd_report(common, report_dirs);
    } catch (const lune::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kIo);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kInvariant);
    }
    return static_cast<int>(ExitCode::kUsage);
}
