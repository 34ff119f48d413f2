#include "lune/eval.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lune {

AcceptSpec AcceptSpec::from_facts(const std::vector<FactRecord>& facts) {
    AcceptSpec spec;
    for (const auto& f : facts) spec.objects[f.id] = f.object;
    return spec;
}

const std::string& AcceptSpec::object(int fact_id) const {
    auto it = objects.find(fact_id);
    if (it == objects.end()) {
        throw ConfigError("accept spec has no entry for fact " + std::to_string(fact_id));
    }
    return it->second;
}

Evaluator::Evaluator(const Tokenizer& tokenizer, EvalOptions options)
    : tok_(tokenizer), options_(options) {}

std::vector<TokenId> Evaluator::decode(const LanguageModel& model, const std::string& prompt) const {
    return generate_greedy(model, encode_prompt(tok_, prompt), options_.max_new_tokens);
}

namespace {

std::vector<std::string> to_words(const Tokenizer& tok, const std::vector<TokenId>& ids) {
    std::vector<std::string> out;
    for (TokenId id : ids) out.push_back(tok.word(id));
    return out;
}

}  // namespace

MetricResult Evaluator::usr(const LanguageModel& model, const std::vector<PromptItem>& prompts,
                            const AcceptSpec& accept) const {
    if (prompts.empty()) throw ContractError("usr: empty prompt set");
    MetricResult r;
    std::size_t ok = 0;
    for (const auto& p : prompts) {
        const std::string& object = accept.object(p.fact_id);
        auto out = decode(model, p.prompt);
        const bool acceptable = !affirms_object(to_words(tok_, out), object);
        ok += acceptable ? 1 : 0;
        r.rows.push_back({"target", p.prompt, tok_.decode(out), p.fact_id, acceptable});
    }
    r.value = static_cast<double>(ok) / static_cast<double>(prompts.size());
    return r;
}

MetricResult Evaluator::apr(const LanguageModel& model, const std::vector<Probe>& probes,
                            const AcceptSpec& accept) const {
    if (probes.empty()) throw ContractError("apr: empty probe set");
    std::vector<PromptItem> items;
    for (const auto& p : probes) items.push_back({p.prompt, p.fact_id});
    MetricResult r = usr(model, items, accept);
    for (auto& row : r.rows) row.set = "probe";
    return r;
}

MetricResult Evaluator::accuracy(const LanguageModel& model, const std::vector<PromptItem>& prompts,
                                 const AcceptSpec& truth) const {
    if (prompts.empty()) throw ContractError("accuracy: empty prompt set");
    MetricResult r = usr(model, prompts, truth);
    std::size_t hits = 0;
    for (auto& row : r.rows) {
        row.set = "general";
        row.acceptable = !row.acceptable;
        hits += row.acceptable ? 1 : 0;
    }
    r.value = static_cast<double>(hits) / static_cast<double>(prompts.size());
    return r;
}

double gur_ratio(double perf_unlearned, double perf_original) {
    if (!(perf_original > 0.0)) {
        throw TrainingError("GUR undefined: original model scores zero on the general-utility set");
    }
    return perf_unlearned / perf_original;
}

double Evaluator::gur(const LanguageModel& unlearned, const LanguageModel& original,
                      const std::vector<PromptItem>& general_set, const AcceptSpec& truth) const {
    return gur_ratio(accuracy(unlearned, general_set, truth).value, accuracy(original, general_set, truth).value);
}

std::vector<double> Evaluator::answer_losses(const LanguageModel& model, const std::vector<TextExample>& qa) const {
    std::vector<EncodedExample> encoded;
    for (const auto& ex : qa) encoded.push_back(encode_example(tok_, ex.prompt, ex.target));
    std::vector<double> out;
    for (const auto& ex : encoded) {
        auto losses = example_losses(
            [&](const TokenBatch& b) { return model.logits(b.ids); }, {ex}, 1);
        out.push_back(losses[0]);
    }
    return out;
}

MiaResult Evaluator::mia(const LanguageModel& model, const std::vector<TextExample>& members,
                         const std::vector<TextExample>& nonmembers) const {
    return mia_from_losses(answer_losses(model, members), answer_losses(model, nonmembers),
                           options_.mia_seed, options_.mia_calibration_fraction);
}

double balanced_accuracy(const std::vector<double>& member_losses,
                         const std::vector<double>& nonmember_losses, double threshold) {
    if (member_losses.empty() || nonmember_losses.empty()) {
        throw ContractError("balanced_accuracy: both groups must be nonempty");
    }
    std::size_t tp = 0, tn = 0;
    for (double l : member_losses) tp += l < threshold ? 1 : 0;
    for (double l : nonmember_losses) tn += l < threshold ? 0 : 1;
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(member_losses.size()) +
                  static_cast<double>(tn) / static_cast<double>(nonmember_losses.size()));
}

MiaResult mia_from_losses(const std::vector<double>& member_losses,
                          const std::vector<double>& nonmember_losses, std::uint64_t seed,
                          double calibration_fraction) {
    if (member_losses.size() != nonmember_losses.size()) {
        throw ContractError("mia: unbalanced sets (" + std::to_string(member_losses.size()) +
                            " members vs " + std::to_string(nonmember_losses.size()) + " nonmembers)");
    }
    const std::size_t n = member_losses.size();
    const std::size_t n_cal = static_cast<std::size_t>(std::floor(calibration_fraction * static_cast<double>(n)));
    if (n < 2 || n_cal == 0 || n_cal >= n) {
        throw ContractError("mia: need at least one calibration and one evaluation example per group");
    }
    Rng rng(seed);
    auto split = [&](const std::vector<double>& v, std::vector<double>& cal, std::vector<double>& ev) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < idx.size(); ++i) (i < n_cal ? cal : ev).push_back(v[idx[i]]);
    };
    std::vector<double> m_cal, m_ev, n_cal_v, n_ev;
    split(member_losses, m_cal, m_ev);
    split(nonmember_losses, n_cal_v, n_ev);

    std::vector<double> pooled = m_cal;
    pooled.insert(pooled.end(), n_cal_v.begin(), n_cal_v.end());
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
        if (pooled[i] < pooled[i + 1]) candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
    }
    candidates.push_back(std::numeric_limits<double>::infinity());

    MiaResult r;
    r.calibration_accuracy = -1.0;
    for (double c : candidates) {
        const double acc = balanced_accuracy(m_cal, n_cal_v, c);
        if (acc > r.calibration_accuracy) {
            r.calibration_accuracy = acc;
            r.threshold = c;
        }
    }
    r.accuracy = balanced_accuracy(m_ev, n_ev, r.threshold);
    r.n_eval = m_ev.size() + n_ev.size();
    return r;
}

}  // namespace lune
