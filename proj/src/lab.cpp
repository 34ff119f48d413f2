#include "lune/lab.hpp"

#include "lune/checkpoint.hpp"
#include "lune/error.hpp"
#include "lune/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>

#ifndef LUNE_VERSION
#define LUNE_VERSION "0.1.0"
#endif

namespace lune {

namespace fs = std::filesystem;

std::string version_string() { return LUNE_VERSION; }

SeedPlan seed_plan(std::uint64_t seed) {
    return {derive_seed(seed, "corpus"),    derive_seed(seed, "init"),    derive_seed(seed, "pretrain"),
            derive_seed(seed, "negatives"), derive_seed(seed, "probes"),  derive_seed(seed, "unlearn"),
            derive_seed(seed, "eval"),      derive_seed(seed, "gur_split"), derive_seed(seed, "irrelevant")};
}

Evaluator Lab::evaluator() const {
    EvalOptions o;
    o.max_new_tokens = config.eval.max_new_tokens;
    o.mia_calibration_fraction = config.eval.mia_calibration_fraction;
    o.mia_seed = seed_plan(config.seed).eval;
    return Evaluator(tokenizer, o);
}

namespace {

void add_prompts(const std::vector<FactRecord>& facts, std::vector<PromptItem>& prompts,
                 std::vector<TextExample>* pairs = nullptr) {
    for (const auto& f : facts) {
        for (auto& q : qa_pairs(f)) {
            prompts.push_back({q.prompt, f.id});
            if (pairs) pairs->push_back(q);
        }
    }
}

std::string hex8(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
    return buf;
}

void say(std::ostream* out, const std::string& line) {
    if (out) *out << line << std::endl;
}

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

Lab prepare_lab(const RunConfig& config) {
    config.validate();
    const SeedPlan s = seed_plan(config.seed);
    Lab lab;
    lab.config = config;
    CorpusConfig cc = config.corpus;
    cc.seed = s.corpus;
    lab.corpus = generate_corpus(cc);
    lab.tokenizer = build_tokenizer(config.model.vocab_size);

    std::vector<FactRecord> retained;
    std::vector<FactRecord> holdout;
    for (const auto& f : lab.corpus.facts) {
        if (f.split != Split::kHoldout) lab.trained.push_back(f);
        if (f.split == Split::kTarget) lab.targets.push_back(f);
        if (f.split == Split::kRetained) retained.push_back(f);
        if (f.split == Split::kHoldout) holdout.push_back(f);
    }
    std::vector<std::size_t> order(retained.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(s.gur_split);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> dev(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(config.eval.gur_dev_facts));
    std::sort(dev.begin(), dev.end());
    for (std::size_t i = 0, d = 0; i < retained.size(); ++i) {
        if (d < dev.size() && dev[d] == i) {
            lab.gur_dev.push_back(retained[i]);
            ++d;
        } else {
            lab.gur_eval.push_back(retained[i]);
        }
    }

    add_prompts(lab.targets, lab.target_prompts, &lab.target_qa);
    add_prompts(lab.gur_dev, lab.dev_prompts);
    add_prompts(lab.gur_eval, lab.general_prompts);
    lab.probes = make_adversarial_probes(lab.targets, config.eval.probes_per_fact, s.probes);

    std::vector<PromptItem> unused;
    std::vector<TextExample> hold_qa;
    add_prompts(holdout, unused, &hold_qa);
    const std::size_t n = std::min(lab.target_qa.size(), hold_qa.size());
    lab.members.assign(lab.target_qa.begin(), lab.target_qa.begin() + static_cast<std::ptrdiff_t>(n));
    lab.nonmembers.assign(hold_qa.begin(), hold_qa.begin() + static_cast<std::ptrdiff_t>(n));
    lab.accept = AcceptSpec::from_facts(lab.corpus.facts);
    return lab;
}

double fact_recall(const Lab& lab, const LanguageModel& model) {
    std::vector<PromptItem> prompts;
    add_prompts(lab.trained, prompts);
    const MetricResult r = lab.evaluator().accuracy(model, prompts, lab.accept);
    std::map<int, bool> ok;
    for (const auto& row : r.rows) {
        auto [it, fresh] = ok.emplace(row.fact_id, true);
        it->second = it->second && row.acceptable;
    }
    std::size_t hits = 0;
    for (const auto& [id, good] : ok) hits += good ? 1 : 0;
    return lab.trained.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(lab.trained.size());
}

std::string pretrain_run_id(const RunConfig& config) {
    std::string key;
    for (const auto& k : config_keys()) {
        if (k.name == "seed" || k.name.starts_with("corpus.") || k.name.starts_with("model.") ||
            k.name.starts_with("pretrain.")) {
            key += k.name + "=" + get_config_value(config, k.name) + "\n";
        }
    }
    return "pretrain-s" + std::to_string(config.seed) + "-" + hex8(fnv1a(key.data(), key.size()));
}

fs::path pretrain_dir(const RunConfig& config) { return fs::path(config.out_dir) / pretrain_run_id(config); }

TransformerModel load_pretrained(const RunConfig& config) {
    const fs::path dir = pretrain_dir(config);
    if (!fs::exists(dir / "manifest.json")) {
        throw IoError("no pretrained checkpoint at " + dir.string() + " (run `lune pretrain` with the same config)");
    }
    const RunManifest m = RunManifest::read(dir);
    m.verify(dir);
    const ArtifactEntry* ck = m.find("checkpoint");
    if (!ck) throw IoError("manifest in " + dir.string() + " lists no checkpoint");
    return load_model(dir / ck->path);
}

PretrainOutcome ensure_pretrained(const Lab& lab, bool reuse, std::ostream* progress) {
    const RunConfig& config = lab.config;
    const fs::path dir = pretrain_dir(config);
    if (reuse && fs::exists(dir / "manifest.json")) {
        const RunManifest m = RunManifest::read(dir);
        m.verify(dir);
        TransformerModel model = load_model(dir / m.find("checkpoint")->path);
        const double recall = std::stod(m.info.at("recall"));
        say(progress, "pretrain seed " + std::to_string(config.seed) + ": cached " + dir.string() +
                          " (recall " + fixed(recall) + ")");
        return {std::move(model), dir, recall, true};
    }

    const SeedPlan s = seed_plan(config.seed);
    ModelConfig mc = config.model;
    mc.seed = s.init;
    TrainConfig tc = config.pretrain;
    tc.seed = s.pretrain;
    const auto t0 = std::chrono::steady_clock::now();
    PretrainResult r = pretrain(mc, lab.corpus.training_texts, lab.tokenizer, tc, config.pretrain_gate,
                                [&](const LanguageModel& m) { return fact_recall(lab, m); });
    round_to_f32(r.model);
    const double recall = fact_recall(lab, r.model);
    if (recall < config.pretrain_gate.recall_gate) {
        throw TrainingError("pretraining recall gate unmet after float32 rounding: recall " + fixed(recall) +
                            " < " + fixed(config.pretrain_gate.recall_gate));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    begin_run_dir(dir, config);
    write_facts(dir / "facts.jsonl", lab.corpus.facts);
    write_texts(dir / "texts.jsonl", lab.corpus.training_texts);
    save_model(dir / "model.bin", r.model);
    r.log.write_jsonl(dir / "trainlog.jsonl");

    RunManifest m;
    m.run_id = pretrain_run_id(config);
    m.kind = "pretrain";
    m.config_hash = config_hash(config);
    m.version = version_string();
    m.seed = config.seed;
    m.info["recall"] = fixed(recall, 6);
    m.info["epochs"] = std::to_string(r.log.epochs.size());
    m.info["seconds"] = fixed(secs, 1);
    m.info["params"] = std::to_string(r.model.parameter_count());
    m.add(dir, "config.toml", "config");
    m.add(dir, "facts.jsonl", "facts");
    m.add(dir, "texts.jsonl", "texts");
    m.add(dir, "model.bin", "checkpoint");
    m.add(dir, "trainlog.jsonl", "trainlog");
    m.write(dir);
    say(progress, "pretrain seed " + std::to_string(config.seed) + ": recall " + fixed(recall) + " after " +
                      std::to_string(r.log.epochs.size()) + " epochs (" + fixed(secs, 1) + " s)");
    return {std::move(r.model), dir, recall, false};
}

const char* method_name(Method m) {
    switch (m) {
        case Method::kLune: return "lune";
        case Method::kFullFt: return "full_ft";
        case Method::kGa: return "ga";
        case Method::kIrrelevantControl: return "irrelevant_control";
    }
    return "?";
}

std::optional<Method> parse_method(std::string_view s) {
    for (Method m : {Method::kLune, Method::kFullFt, Method::kGa, Method::kIrrelevantControl}) {
        if (s == method_name(m)) return m;
    }
    return std::nullopt;
}

const LanguageModel& MethodOutcome::language_model() const {
    return std::visit([](const auto& m) -> const LanguageModel& { return m; }, model);
}

std::vector<NegativeExample> negatives_for(const Lab& lab) {
    return make_negative_set(lab.targets, lab.config.quality, lab.config.negatives, seed_plan(lab.config.seed).negatives);
}

std::vector<NegativeExample> irrelevant_for(const Lab& lab, std::size_t n) {
    return make_irrelevant_controls(lab.corpus, n, seed_plan(lab.config.seed).irrelevant);
}

MethodOutcome run_method(const Lab& lab, const TransformerModel& base, Method method, const MethodOptions& options) {
    const RunConfig& config = lab.config;
    TrainConfig tc = config.unlearn;
    tc.seed = seed_plan(config.seed).unlearn;
    const Evaluator ev = lab.evaluator();

    const bool early = tc.early_stop.enabled;
    double dev_base = 0.0, general_base = 0.0;
    if (early) dev_base = ev.accuracy(base, lab.dev_prompts, lab.accept).value;
    if (options.track_eval_metrics) general_base = ev.accuracy(base, lab.general_prompts, lab.accept).value;

    std::vector<TrajectoryPoint> trajectory;
    if (options.track_eval_metrics) trajectory.push_back({0, ev.usr(base, lab.target_prompts, lab.accept).value, 1.0});
    ModelMonitor monitor;
    if (early || options.track_eval_metrics) {
        monitor = [&](const LanguageModel& m, std::size_t epoch) {
            MonitorResult r;
            r.usr = ev.usr(m, lab.target_prompts, lab.accept).value;
            if (early) r.gur = gur_ratio(ev.accuracy(m, lab.dev_prompts, lab.accept).value, dev_base);
            if (options.track_eval_metrics) {
                const double g = gur_ratio(ev.accuracy(m, lab.general_prompts, lab.accept).value, general_base);
                trajectory.push_back({epoch, r.usr, g});
            }
            return r;
        };
    }

    auto plan = [&] {
        return InjectionPlan::standard(base.config(), config.lora.rank, config.lora.targets, config.lora.dropout);
    };
    MethodOutcome out{method, base.clone(), {}, 0, {}};
    switch (method) {
        case Method::kLune:
        case Method::kIrrelevantControl: {
            auto negs = negatives_for(lab);
            if (method == Method::kIrrelevantControl) negs = irrelevant_for(lab, negs.size());
            out.n_train = negs.size();
            LuneResult r = unlearn_lune(base, negs, plan(), tc, lab.tokenizer, monitor);
            r.log.method = method_name(method);
            out.model = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
        case Method::kFullFt: {
            auto negs = negatives_for(lab);
            out.n_train = negs.size();
            FullResult r = unlearn_full_ft(base, negs, tc, lab.tokenizer, monitor);
            out.model = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
        case Method::kGa: {
            const std::size_t n_neg = negatives_for(lab).size();
            const std::size_t lune_steps = tc.epochs * ((n_neg + tc.batch_size - 1) / tc.batch_size);
            tc.max_steps = config.ga.max_steps ? config.ga.max_steps : lune_steps;
            tc.divergence_ceiling = config.ga.divergence_ceiling;
            const std::size_t per_epoch = (lab.target_qa.size() + tc.batch_size - 1) / tc.batch_size;
            tc.epochs = (tc.max_steps + per_epoch - 1) / per_epoch;
            out.n_train = lab.target_qa.size();
            FullResult r = unlearn_ga(base, lab.target_qa, tc, lab.tokenizer, monitor);
            out.model = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
    }
    out.trajectory = std::move(trajectory);
    return out;
}

EvalReport evaluate(const Lab& lab, const LanguageModel& model, const LanguageModel& original,
                    const std::string& label) {
    const Evaluator ev = lab.evaluator();
    EvalReport rep;
    rep.label = label;
    rep.seed = lab.config.seed;
    MetricResult u = ev.usr(model, lab.target_prompts, lab.accept);
    MetricResult a = ev.apr(model, lab.probes, lab.accept);
    MetricResult g = ev.accuracy(model, lab.general_prompts, lab.accept);
    const double g0 = &model == &original ? g.value : ev.accuracy(original, lab.general_prompts, lab.accept).value;
    rep.usr = u.value;
    rep.apr = a.value;
    rep.gur = gur_ratio(g.value, g0);
    rep.mia = ev.mia(model, lab.members, lab.nonmembers).accuracy;
    rep.n_target = u.rows.size();
    rep.n_probe = a.rows.size();
    rep.n_general = g.rows.size();
    rep.n_mia = lab.members.size();
    for (auto& r : u.rows) r.set = "target";
    for (auto* set : {&u.rows, &a.rows, &g.rows}) {
        rep.rows.insert(rep.rows.end(), set->begin(), set->end());
    }
    return rep;
}

std::string unlearn_run_id(const RunConfig& config, Method method) {
    const std::string h = config_hash(config);
    return std::string(method_name(method)) + "-r" + std::to_string(config.lora.rank) + "-" +
           quality_name(config.quality) + "-s" + std::to_string(config.seed) + "-" + h.substr(0, 8);
}

UnlearnRun unlearn_and_record(const Lab& lab, const TransformerModel& base, const fs::path& base_dir,
                              Method method, const MethodOptions& options, std::ostream* progress) {
    const RunConfig& config = lab.config;
    const std::string id = unlearn_run_id(config, method);
    const fs::path dir = fs::path(config.out_dir) / id;
    begin_run_dir(dir, config);

    MethodOutcome out = run_method(lab, base, method, options);
    const bool adapters = std::holds_alternative<AdaptedModel>(out.model);
    const std::string ck = adapters ? "adapters.bin" : "model.bin";
    if (adapters) {
        save_adapters(dir / ck, std::get<AdaptedModel>(out.model));
        out.model = load_adapters(dir / ck, base);
    } else {
        save_model(dir / ck, std::get<TransformerModel>(out.model));
        out.model = load_model(dir / ck);
    }
    out.log.write_jsonl(dir / "trainlog.jsonl");
    if (method == Method::kGa) {
        write_texts(dir / "train_set.jsonl", lab.target_qa);
    } else {
        auto set = negatives_for(lab);
        if (method == Method::kIrrelevantControl) set = irrelevant_for(lab, set.size());
        write_examples(dir / "train_set.jsonl", set);
    }

    EvalReport rep = evaluate(lab, out.language_model(), base, id);
    rep.method = method_name(method);
    rep.checkpoint = (dir / ck).string();
    write_report_json(dir / "report.json", rep);
    write_rows_csv(dir / "rows.csv", rep);

    RunManifest m;
    m.run_id = id;
    m.kind = "unlearn";
    m.config_hash = config_hash(config);
    m.version = version_string();
    m.seed = config.seed;
    m.info["method"] = method_name(method);
    m.info["base_dir"] = fs::absolute(base_dir).lexically_normal().string();
    m.info["base_checkpoint_checksum"] = file_checksum(base_dir / "model.bin");
    m.info["n_train"] = std::to_string(out.n_train);
    m.info["trainable_params"] = std::to_string(out.log.trainable_params);
    m.info["optimizer_state_entries"] = std::to_string(out.log.optimizer_state_entries);
    m.info["stop_reason"] = out.log.stop_reason;
    m.info["best_epoch"] = std::to_string(out.log.best_epoch);
    m.add(dir, "config.toml", "config");
    m.add(dir, ck, "checkpoint");
    m.add(dir, "trainlog.jsonl", "trainlog");
    m.add(dir, "train_set.jsonl", "train_set");
    m.add(dir, "report.json", "report");
    m.add(dir, "rows.csv", "rows");
    m.write(dir);

    say(progress, id + ": USR " + fixed(rep.usr) + " GUR " + fixed(rep.gur) + " APR " + fixed(rep.apr) + " MIA " +
                      fixed(rep.mia) + " (" + out.log.stop_reason + ", best epoch " +
                      std::to_string(out.log.best_epoch) + ", " + fixed(out.log.wall_seconds, 1) + " s)");
    return {std::move(out), std::move(rep), dir};
}

}  // namespace lune
