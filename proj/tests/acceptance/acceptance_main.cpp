#include "lune/checkpoint.hpp"
#include "lune/error.hpp"
#include "lune/experiments.hpp"
#include "lune/gradcheck.hpp"
#include "lune/projection.hpp"

#include "support/algorithm1.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace lune;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string f3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

struct Verdict {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::string line(const Verdict& v) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.1f s", v.seconds);
    return std::string(v.pass ? "PASS" : "FAIL") + " [" + std::to_string(v.id) + "] " + v.name + ": " + v.detail +
           " (" + secs + ")";
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

class Acceptance {
public:
    Acceptance(fs::path work, std::set<int> only) : work_(std::move(work)), only_(std::move(only)), bench_(&std::cerr) {
        base_.out_dir = work_.string();
    }

    int run(bool strict) {
        const auto t0 = Clock::now();
        step(1, [&] { return c1_gradients(); });
        step(2, [&] { return c2_noop(); });
        step(4, [&] { return c4_fidelity(); });
        step(5, [&] { return c5_accounting(); });
        step(6, [&] { return c6_projection(); });
        step(7, [&] { return c7_end_to_end(); });
        step(11, [&] { return c11_lora_vs_full(); });
        step(8, [&] { return c8_negative_vs_irrelevant(); });
        step(9, [&] { return c9_rank(); });
        step(10, [&] { return c10_quality(); });
        step(3, [&] { return c3_frozen(); });

        std::sort(verdicts_.begin(), verdicts_.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
        std::size_t passed = 0;
        std::ostringstream summary;
        summary << "\n== acceptance summary ==\n";
        for (const auto& v : verdicts_) {
            summary << line(v) << "\n";
            passed += v.pass ? 1 : 0;
        }
        summary << passed << "/" << verdicts_.size() << " criteria pass (" << f3(since(t0)) << " s)\n";
        std::cout << summary.str() << std::flush;

        std::ofstream md(work_ / "acceptance.md");
        md << "# Acceptance run\n\n```\n" << summary.str() << "```\n\n" << tables_.str();
        if (strict && passed != verdicts_.size()) return static_cast<int>(ExitCode::kInvariant);
        return 0;
    }

private:
    template <class F>
    void step(int id, F&& f) {
        if (!only_.empty() && !only_.count(id)) return;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v.name = "criterion " + std::to_string(id);
            v.pass = false;
            v.detail = std::string("error: ") + e.what();
        }
        v.id = id;
        v.seconds = since(t0);
        std::cout << line(v) << std::endl;
        verdicts_.push_back(v);
    }

    RunConfig seed_config(std::uint64_t s) const {
        RunConfig c = base_;
        c.seed = s;
        return c;
    }

    Verdict c1_gradients() {
        const auto t0 = Clock::now();
        const auto results = run_gradcheck(standard_gradcheck_cases(), derive_seed(0, "gradcheck"), 20, 1e-4);
        const double secs = since(t0);
        bool ok = secs < 60.0;
        bool has_lora = false;
        double worst = 0.0;
        std::string worst_op;
        for (const auto& r : results) {
            ok = ok && r.passed && r.instances >= 20 && r.max_rel_error < 1e-4;
            has_lora = has_lora || r.op == "lora_linear";
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                worst_op = r.op;
            }
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu ops x 20 instances, max rel err %.2e (%s) < 1e-4, %.1f s < 60 s",
                      results.size(), worst, worst_op.c_str(), secs);
        return {1, "gradient correctness", ok && has_lora, buf};
    }

    Verdict c2_noop() {
        ModelConfig mc = base_.model;
        mc.seed = derive_seed(0, "init");
        const TransformerModel model(mc);
        const AdaptedModel adapted = inject(model, InjectionPlan::standard(mc, base_.lora.rank), derive_seed(0, "adapters"));
        Rng rng(derive_seed(0, "prompts"));
        std::uniform_int_distribution<std::size_t> len(1, mc.max_seq_len);
        std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(mc.vocab_size - 1));
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            std::vector<TokenId> ids(len(rng));
            for (auto& t : ids) t = tok(rng);
            const Tensor a = adapted.logits(ids);
            const Tensor b = model.logits(ids);
            for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
        }
        char buf[128];
        std::snprintf(buf, sizeof buf, "max |adapted - backbone| logit diff %.3e <= 1e-9 over 100 random prompts", worst);
        return {2, "LoRA no-op at init", worst <= 1e-9, buf};
    }

    Verdict c4_fidelity() {
        const RunConfig cfg = seed_config(0);
        const PretrainOutcome& base = bench_.backbone(cfg);
        const Lab lab = prepare_lab(cfg);
        const auto negs = negatives_for(lab);
        TrainConfig tc;
        tc.optimizer = OptimizerKind::kSgd;
        tc.schedule = Schedule::kConstant;
        tc.warmup_fraction = 0.0;
        tc.weight_decay = 0.0;
        tc.grad_clip = 0.0;
        tc.batch_size = 1;
        tc.epochs = 1;
        tc.learning_rate = 1e-2;
        tc.shuffle = false;
        tc.early_stop.enabled = false;
        tc.seed = derive_seed(0, "fidelity");
        const InjectionPlan plan = InjectionPlan::standard(cfg.model, cfg.lora.rank, cfg.lora.targets, 0.0);
        const LuneResult r = unlearn_lune(base.model, negs, plan, tc, lab.tokenizer);
        const AdaptedModel ref = oracle::literal_algorithm1(base.model, encode_all(lab.tokenizer, negs), plan,
                                                            derive_seed(tc.seed, "init"), tc.learning_rate);
        std::size_t equal = 0, total = 0;
        for (const auto& [name, ad] : r.model.adapters()) {
            const auto& o = ref.adapters().at(name);
            equal += bitwise_equal(ad.A, o.A) + bitwise_equal(ad.B, o.B);
            total += 2;
        }
        const AdaptedModel init = inject(base.model, plan, derive_seed(tc.seed, "init"));
        const bool moved = !bitwise_equal(r.model.adapters().begin()->second.B, init.adapters().begin()->second.B);
        return {4, "Algorithm-1 fidelity", equal == total && moved && r.log.steps.size() == negs.size(),
                std::to_string(equal) + "/" + std::to_string(total) + " adapter tensors bitwise equal to the literal loop after " +
                    std::to_string(r.log.steps.size()) + " sgd batch-1 steps (seed 0 backbone, dropout off)"};
    }

    Verdict c5_accounting() {
        const ModelConfig mc = base_.model;
        const TransformerModel model(mc);
        std::size_t enumerated = 0;
        for (const auto& p : model.parameters()) enumerated += p.tensor.numel();
        const InjectionPlan plan = InjectionPlan::standard(mc, base_.lora.rank, base_.lora.targets, base_.lora.dropout);
        const AdaptedModel adapted = inject(model, plan, 1);
        std::size_t lora_enumerated = 0;
        for (const auto& p : adapted.trainable_parameters()) lora_enumerated += p.tensor.numel();

        const RunConfig cfg = seed_config(0);
        const PretrainOutcome& base = bench_.backbone(cfg);
        const Lab lab = prepare_lab(cfg);
        TrainConfig tc = cfg.unlearn;
        tc.epochs = 1;
        tc.early_stop.enabled = false;
        const LuneResult r = unlearn_lune(base.model, negatives_for(lab), plan, tc, lab.tokenizer);

        const ComplexityReport cr = complexity_report(mc, plan, lab.target_qa.size(), lab.corpus.training_texts.size());
        const bool ok = count_params(mc) == enumerated && count_lora_params(plan) == lora_enumerated &&
                        r.log.optimizer_state_entries == 2 * count_lora_params(plan) && cr.reference_ratio >= 1e-3 &&
                        cr.reference_ratio <= 1e-2;
        char buf[320];
        std::snprintf(buf, sizeof buf,
                      "P %zu = enumerated %zu; P_LoRA %zu = enumerated %zu; AdamW state %zu = 2 x P_LoRA; "
                      "Mistral-7B P %zu, P_LoRA %zu, ratio %.3e in [1e-3, 1e-2]",
                      count_params(mc), enumerated, count_lora_params(plan), lora_enumerated, r.log.optimizer_state_entries,
                      cr.reference_params, cr.reference_lora_params, cr.reference_ratio);
        return {5, "parameter accounting", ok, buf};
    }

    Verdict c6_projection() {
        const auto t0 = Clock::now();
        const auto rows = run_projection_suite(base_.model, base_.lora.rank,
                                               {LayerLoss::kQuadratic, LayerLoss::kLinear, LayerLoss::kCrossEntropy}, 10,
                                               derive_seed(0, "projection"));
        const double secs = since(t0);
        bool ok = secs < 60.0;
        double worst = 0.0;
        std::set<std::string> layers;
        for (const auto& r : rows) {
            ok = ok && r.report.passed;
            worst = std::max(worst, r.report.max_ratio);
            layers.insert(r.layer);
        }
        char buf[200];
        std::snprintf(buf, sizeof buf, "%zu probes (%zu layer types x 3 losses x 10 seeds), max decay ratio %.4f <= 0.3, %.1f s < 60 s",
                      rows.size(), layers.size(), worst, secs);
        return {6, "projection property", ok, buf};
    }

    Verdict c7_end_to_end() {
        double usr = 0, gur = 0, apr = 0, mia_after = 0, mia_before = 0, secs = 0, min_recall = 1.0;
        std::vector<CellResult> cells;
        std::vector<EvalReport> before;
        for (std::uint64_t s : base_.sweep.seeds) {
            const RunConfig cfg = seed_config(s);
            const PretrainOutcome& pt = bench_.backbone(cfg);
            secs += std::stod(RunManifest::read(pt.dir).info.at("seconds"));
            min_recall = std::min(min_recall, pt.recall);
            const auto t0 = Clock::now();
            const Lab lab = prepare_lab(cfg);
            EvalReport b = evaluate(lab, pt.model, pt.model, "pretrained");
            CellResult c = bench_.run(cfg, Method::kLune, "lune (defaults)");
            secs += since(t0);
            usr += c.report.usr;
            gur += c.report.gur;
            apr += c.report.apr;
            mia_after += c.report.mia;
            mia_before += b.mia;
            b.label = "pretrained";
            before.push_back(b);
            cells.push_back(c);
        }
        const double n = static_cast<double>(base_.sweep.seeds.size());
        usr /= n, gur /= n, apr /= n, mia_after /= n, mia_before /= n;
        std::vector<EvalReport> all = before;
        for (const auto& c : cells) {
            all.push_back(c.report);
            all.back().label = c.condition;
        }
        tables_ << format_table(group_reports(all, [](const EvalReport& r) { return r.label; }),
                                "End-to-end, default config (criterion 7)")
                << "\n";
        const bool ok = min_recall >= 0.95 && usr >= 0.80 && gur >= 0.90 && apr >= 0.70 && mia_after < mia_before &&
                        secs < 900.0;
        return {7, "end-to-end desk unlearning", ok,
                "recall min " + f3(min_recall) + " >= 0.95; USR " + f3(usr) + " >= 0.80; GUR " + f3(gur) +
                    " >= 0.90; APR " + f3(apr) + " >= 0.70; MIA " + f3(mia_after) + " < before " + f3(mia_before) +
                    "; pretrain+unlearn+eval " + f3(secs) + " s < 900 s"};
    }

    Verdict c8_negative_vs_irrelevant() {
        const auto cells = negative_vs_irrelevant(bench_, base_);
        tables_ << format_table(summarize(cells), "Negative vs irrelevant examples (criterion 8)") << "\n";
        const double du = condition_mean(cells, "lune", &EvalReport::usr) -
                          condition_mean(cells, "irrelevant_control", &EvalReport::usr);
        const double da = condition_mean(cells, "lune", &EvalReport::apr) -
                          condition_mean(cells, "irrelevant_control", &EvalReport::apr);
        return {8, "negative-vs-irrelevant ablation", du >= 0.20 && da >= 0.10,
                "USR margin " + f3(du) + " >= 0.20; APR margin " + f3(da) + " >= 0.10 (lr " +
                    f3(base_.sweep.learning_rate) + ", fixed budget, " + std::to_string(base_.sweep.seeds.size()) + " seeds)"};
    }

    Verdict c9_rank() {
        const auto cells = sweep_rank(bench_, base_, base_.sweep.ranks);
        tables_ << format_table(summarize(cells), "Rank sweep (criterion 9)") << "\n";
        auto u = [&](int r) { return condition_mean(cells, "r=" + std::to_string(r), &EvalReport::usr); };
        const double u2 = u(2), u8 = u(8), u16 = u(16), u32 = u(32);
        const bool ok = u8 >= u2 - 0.02 && u16 >= u2 - 0.02 && (u32 - u16) <= (u16 - u2);
        return {9, "rank sweep", ok,
                "USR r2 " + f3(u2) + ", r8 " + f3(u8) + ", r16 " + f3(u16) + ", r32 " + f3(u32) +
                    "; r8, r16 >= r2 - 0.02; gain 16->32 " + f3(u32 - u16) + " <= gain 2->16 " + f3(u16 - u2)};
    }

    Verdict c10_quality() {
        const auto cells = quality_ablation(bench_, base_);
        tables_ << format_table(summarize(cells), "Negative-example quality (criterion 10)") << "\n";
        const double uh = condition_mean(cells, "high", &EvalReport::usr);
        const double um = condition_mean(cells, "medium", &EvalReport::usr);
        const double ul = condition_mean(cells, "low", &EvalReport::usr);
        const double mh = condition_mean(cells, "high", &EvalReport::mia);
        const double ml = condition_mean(cells, "low", &EvalReport::mia);
        return {10, "quality ablation", uh > um && um > ul && mh < ml,
                "USR high " + f3(uh) + " > medium " + f3(um) + " > low " + f3(ul) + "; MIA high " + f3(mh) +
                    " < low " + f3(ml)};
    }

    Verdict c11_lora_vs_full() {
        const LoraVsFull r = lora_vs_full(bench_, base_);
        tables_ << "### LoRA vs full fine-tuning at matched USR (criterion 11)\n\n" << format_matched(r) << "\n";
        double lg = 0, fg = 0;
        bool matched = true;
        for (const auto& p : r.matched) {
            lg += p.lune_gur;
            fg += p.full_gur;
            matched = matched && p.matched;
        }
        const double n = static_cast<double>(r.matched.size());
        lg /= n;
        fg /= n;
        const std::size_t P = r.matched.front().full_params, PL = r.matched.front().lune_params;
        const double ratio = static_cast<double>(P) / static_cast<double>(PL);
        const bool ok = matched && lg >= fg && ratio >= 5.0;
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "GUR LUNE %.3f >= full-FT %.3f at matched USR +/- 0.03%s; P %zu / P_LoRA %zu = %.2fx >= 5x", lg, fg,
                      matched ? "" : " (some seeds unmatched)", P, PL, ratio);
        return {11, "LoRA vs full-FT", ok, buf};
    }

    Verdict c3_frozen() {
        const RunConfig cfg = seed_config(0);
        const PretrainOutcome& pt = bench_.backbone(cfg);
        const Lab lab = prepare_lab(cfg);
        const std::uint64_t before = pt.model.checksum();
        TrainConfig tc = cfg.unlearn;
        tc.epochs = 2;
        tc.learning_rate = 3e-3;
        tc.early_stop.enabled = false;
        const InjectionPlan plan = InjectionPlan::standard(cfg.model, cfg.lora.rank, cfg.lora.targets, cfg.lora.dropout);
        LuneResult r = unlearn_lune(pt.model, negatives_for(lab), plan, tc, lab.tokenizer);
        bool ok = pt.model.checksum() == before && r.model.backbone().checksum() == before;

        const TransformerModel merged = r.model.merged_model();
        r.model.merge();
        bool changed = false;
        for (const auto& t : plan.targets) {
            changed = changed || !bitwise_equal(r.model.backbone().projection(t.layer, t.projection),
                                                pt.model.projection(t.layer, t.projection));
        }
        r.model.unmerge();
        const bool restored = r.model.backbone().checksum() == before;
        ok = ok && changed && restored;

        // Every backbone used by the experiments is unchanged on disk and in memory.
        std::size_t backbones = 0;
        for (std::uint64_t s : base_.sweep.seeds) {
            const RunConfig c = seed_config(s);
            const PretrainOutcome& b = bench_.backbone(c);
            ok = ok && load_pretrained(c).checksum() == b.model.checksum();
            ++backbones;
        }
        std::size_t runs = 0;
        for (const auto& e : fs::directory_iterator(work_)) {
            const std::string n = e.path().filename().string();
            if ((n.starts_with("lune-") || n.starts_with("irrelevant_control-")) && fs::exists(e.path() / "manifest.json")) {
                ++runs;
            }
        }
        return {3, "frozen backbone", ok,
                std::string("checksum identical before/after unlearn_lune; merge changed W, unmerge restored W0 bitwise: ") +
                    (restored ? "yes" : "no") + "; " + std::to_string(backbones) + " backbones verified against disk; " +
                    std::to_string(runs) + " adapter runs completed under the in-trainer checksum guard"};
    }

    fs::path work_;
    std::set<int> only_;
    RunConfig base_;
    Workbench bench_;
    std::vector<Verdict> verdicts_;
    std::ostringstream tables_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LUNE acceptance criteria"};
    std::string work = "acceptance_run";
    bool strict = false;
    std::vector<int> only;
    app.add_option("--work-dir", work, "directory for backbones, runs and acceptance.md");
    app.add_flag("--strict", strict, "exit 3 when any criterion fails");
    app.add_option("--only", only, "criterion ids to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    try {
        fs::create_directories(work);
        Acceptance acc(work, std::set<int>(only.begin(), only.end()));
        return acc.run(strict);
    } catch (const lune::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    }
}
