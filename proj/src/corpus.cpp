#include "lune/corpus.hpp"

#include "lune/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace lune {

using ojson = nlohmann::ordered_json;

const char* split_name(Split s) {
    switch (s) {
        case Split::kRetained: return "retained";
        case Split::kTarget: return "target";
        case Split::kHoldout: return "holdout";
    }
    return "?";
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kContradiction: return "contradiction";
        case Strategy::kAlternative: return "alternative";
        case Strategy::kParaphrase: return "paraphrase-variant";
    }
    return "?";
}

const char* quality_name(Quality q) {
    switch (q) {
        case Quality::kHigh: return "high";
        case Quality::kMedium: return "medium";
        case Quality::kLow: return "low";
    }
    return "?";
}

std::optional<Strategy> parse_strategy(std::string_view s) {
    for (auto v : kAllStrategies) {
        if (s == strategy_name(v)) return v;
    }
    return std::nullopt;
}

std::optional<Quality> parse_quality(std::string_view s) {
    for (auto v : {Quality::kHigh, Quality::kMedium, Quality::kLow}) {
        if (s == quality_name(v)) return v;
    }
    return std::nullopt;
}

bool is_hedge_word(std::string_view w) { return w == "may" || w == "might"; }
bool is_negation_word(std::string_view w) { return w == "not" || w == "never" || w == "no"; }

bool affirms_object(const std::vector<std::string>& tokens, std::string_view object) {
    std::size_t start = 0;
    while (start < tokens.size()) {
        std::size_t end = start;
        while (end < tokens.size() && tokens[end] != "." && tokens[end] != "?" && tokens[end] != "!") ++end;
        bool has_object = false, negated = false, hedged = false;
        for (std::size_t i = start; i < end; ++i) {
            if (tokens[i] == object) has_object = true;
            if (is_hedge_word(tokens[i])) hedged = true;
            if (is_negation_word(tokens[i])) {
                negated = true;
                if (i + 1 < end && tokens[i + 1] == "always") hedged = true;
            }
        }
        if (has_object && (!negated || hedged)) return true;
        start = end + 1;
    }
    return false;
}

std::string render(std::string_view tmpl, std::string_view subject, std::string_view object) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl.compare(i, 3, "{S}") == 0) {
            out += subject;
            i += 3;
        } else if (tmpl.compare(i, 3, "{O}") == 0) {
            out += object;
            i += 3;
        } else {
            out += tmpl[i++];
        }
    }
    return out;
}

std::vector<FactRecord> Corpus::by_split(Split s) const {
    std::vector<FactRecord> out;
    for (const auto& f : facts) {
        if (f.split == s) out.push_back(f);
    }
    return out;
}

const FactRecord& Corpus::fact(int id) const {
    auto it = std::lower_bound(facts.begin(), facts.end(), id,
                               [](const FactRecord& f, int v) { return f.id < v; });
    if (it == facts.end() || it->id != id) throw ConfigError("unknown fact id " + std::to_string(id));
    return *it;
}

std::vector<TextExample> qa_pairs(const FactRecord& fact) {
    const auto& rel = relation_spec(fact.relation);
    std::vector<TextExample> out;
    for (const auto& q : rel.qa_prompts) {
        out.push_back({render(q, fact.subject), render(rel.frames.front().affirm, fact.subject, fact.object), fact.id});
    }
    return out;
}

std::vector<TextExample> render_fact(const FactRecord& fact) {
    const auto& rel = relation_spec(fact.relation);
    std::vector<TextExample> out;
    for (const auto& f : rel.frames) out.push_back({"", render(f.affirm, fact.subject, fact.object), fact.id});
    for (auto& qa : qa_pairs(fact)) out.push_back(std::move(qa));
    return out;
}

Corpus generate_corpus(const CorpusConfig& config) {
    if (config.n_targets > config.n_facts) {
        throw ConfigError("corpus.n_targets (" + std::to_string(config.n_targets) +
                          ") exceeds corpus.n_facts (" + std::to_string(config.n_facts) + ")");
    }
    const auto& bank = relation_bank();
    const std::size_t R = bank.size();

    // Per-relation subject demand: trained facts round-robin, then holdout round-robin.
    std::vector<std::size_t> need(R, 0);
    for (std::size_t i = 0; i < config.n_facts; ++i) ++need[i % R];
    for (std::size_t j = 0; j < config.n_holdout; ++j) ++need[j % R];
    for (std::size_t r = 0; r < R; ++r) {
        if (need[r] > bank[r].subjects.size()) {
            throw ConfigError("corpus capacity exceeded: relation '" + bank[r].name + "' needs " +
                              std::to_string(need[r]) + " subjects but has " +
                              std::to_string(bank[r].subjects.size()));
        }
    }

    Rng rng(config.seed);
    std::vector<std::vector<std::string>> pools(R);
    for (std::size_t r = 0; r < R; ++r) {
        pools[r] = bank[r].subjects;
        std::shuffle(pools[r].begin(), pools[r].end(), rng);
    }
    std::vector<std::size_t> cursor(R, 0);
    auto next_fact = [&](std::size_t r, int id, Split split) {
        FactRecord f;
        f.id = id;
        f.relation = bank[r].name;
        f.subject = pools[r][cursor[r]++];
        std::uniform_int_distribution<std::size_t> pick(0, bank[r].objects.size() - 1);
        f.object = bank[r].objects[pick(rng)];
        f.split = split;
        return f;
    };

    Corpus corpus;
    std::vector<std::vector<std::size_t>> by_relation(R);
    for (std::size_t i = 0; i < config.n_facts; ++i) {
        corpus.facts.push_back(next_fact(i % R, static_cast<int>(i), Split::kRetained));
        by_relation[i % R].push_back(i);
    }
    // Targets are stratified across relations.
    std::vector<std::size_t> quota(R, 0);
    for (std::size_t j = 0; j < config.n_targets; ++j) ++quota[j % R];
    for (std::size_t r = 0; r < R; ++r) {
        auto idx = by_relation[r];
        std::shuffle(idx.begin(), idx.end(), rng);
        if (quota[r] > idx.size()) {
            throw ConfigError("corpus: relation '" + bank[r].name + "' has too few facts for its target quota");
        }
        for (std::size_t k = 0; k < quota[r]; ++k) corpus.facts[idx[k]].split = Split::kTarget;
    }
    for (std::size_t j = 0; j < config.n_holdout; ++j) {
        corpus.facts.push_back(next_fact(j % R, static_cast<int>(config.n_facts + j), Split::kHoldout));
    }
    for (const auto& f : corpus.facts) {
        if (f.split == Split::kHoldout) continue;
        for (auto& t : render_fact(f)) corpus.training_texts.push_back(std::move(t));
    }
    return corpus;
}

Tokenizer build_tokenizer(std::size_t max_vocab) {
    std::vector<std::string> texts;
    for (const auto& r : relation_bank()) {
        for (const auto& s : r.subjects) texts.push_back(s);
        for (const auto& o : r.objects) texts.push_back(o);
        auto add = [&](const std::string& t) { texts.push_back(render(t, "", "")); };
        for (const auto& f : r.frames) {
            add(f.affirm);
            add(f.negate);
            add(f.hedge_negate);
            add(f.hedge_alt);
        }
        for (const auto* bank : {&r.qa_prompts, &r.probe_prompts, &r.loose_prompts, &r.fillers}) {
            for (const auto& t : *bank) add(t);
        }
    }
    // Placeholders render to nothing; re-render with a sample subject so that
    // suffix tokens such as "'s" survive.
    for (const auto& r : relation_bank()) {
        for (const auto& f : r.frames) texts.push_back(render(f.hedge_negate, r.subjects[0], r.objects[0]));
        for (const auto& p : r.probe_prompts) texts.push_back(render(p, r.subjects[0]));
    }
    return Tokenizer::build(texts, max_vocab);
}

namespace {

struct Candidate {
    std::size_t prompt;       // index into the prompt list
    std::size_t frame;        // frame index
    int form;                 // 0 affirm-with-alternative, 1 negate, 2 hedge_negate, 3 hedge_alt
    bool alternative;         // uses a sampled alternative object
};

std::vector<Candidate> candidates(Strategy s, Quality q) {
    const int neg = q == Quality::kHigh ? 1 : 2;
    const int alt = q == Quality::kHigh ? 0 : 3;
    switch (s) {
        case Strategy::kContradiction:
            return {{0, 0, neg, false}, {1, 0, neg, false}, {0, 1, neg, false}, {1, 2, neg, false}};
        case Strategy::kAlternative:
            return {{0, 0, alt, true}, {1, 0, alt, true}, {0, 1, alt, true}, {1, 2, alt, true}};
        case Strategy::kParaphrase:
            return {{0, 1, neg, false}, {1, 2, alt, true}, {1, 2, neg, false}, {0, 1, alt, true}};
    }
    return {};
}

const char* form_name(int form) {
    switch (form) {
        case 0: return "affirm";
        case 1: return "negate";
        case 2: return "hedge_negate";
        default: return "hedge_alt";
    }
}

const std::string& frame_form(const Frame& f, int form) {
    switch (form) {
        case 0: return f.affirm;
        case 1: return f.negate;
        case 2: return f.hedge_negate;
        default: return f.hedge_alt;
    }
}

}  // namespace

std::optional<std::string> reject_reason(const NegativeExample& c, const FactRecord& fact) {
    const auto toks = Tokenizer::split(c.target);
    const auto& rel = relation_spec(fact.relation);
    for (const auto& f : rel.frames) {
        if (c.target == render(f.affirm, fact.subject, fact.object)) return "repeats the true fact";
    }
    if (c.quality == Quality::kHigh) {
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (is_hedge_word(toks[i]) || (toks[i] == "not" && i + 1 < toks.size() && toks[i + 1] == "always")) {
                return "hedged wording in a high-quality negative";
            }
        }
        if (affirms_object(toks, fact.object)) return "affirms the true object";
    }
    return std::nullopt;
}

std::vector<NegativeExample> make_negatives(const std::vector<FactRecord>& facts, Strategy strategy,
                                            Quality quality, const NegativeOptions& options,
                                            std::uint64_t seed) {
    if (facts.empty()) throw ContractError("make_negatives: no facts given");
    Rng rng(seed);
    std::vector<NegativeExample> out;
    for (const auto& fact : facts) {
        const auto& rel = relation_spec(fact.relation);
        std::vector<std::string> alternatives;
        for (const auto& o : rel.objects) {
            if (o != fact.object) alternatives.push_back(o);
        }
        if (strategy == Strategy::kAlternative && alternatives.empty()) {
            throw ContractError("alternative strategy impossible: relation '" + rel.name +
                                "' has a single-object vocabulary");
        }
        std::shuffle(alternatives.begin(), alternatives.end(), rng);
        std::size_t next_alt = 0;
        std::map<std::string, std::size_t> per_template;
        std::size_t kept = 0;

        auto emit = [&](NegativeExample ex) {
            if (kept >= options.per_fact_cap) return;
            if (per_template[ex.template_id] >= options.per_template_cap) return;
            if (reject_reason(ex, fact)) return;
            ++per_template[ex.template_id];
            ++kept;
            out.push_back(std::move(ex));
        };

        if (quality == Quality::kLow) {
            const std::size_t shift = static_cast<std::size_t>(strategy);
            for (std::size_t k = 0; k < rel.loose_prompts.size() * rel.fillers.size(); ++k) {
                const std::size_t p = k % rel.loose_prompts.size();
                const std::size_t f = (k / rel.loose_prompts.size() + p + shift) % rel.fillers.size();
                emit({render(rel.loose_prompts[p], fact.subject), render(rel.fillers[f], fact.subject),
                      strategy, quality, fact.id, "filler" + std::to_string(f)});
            }
            continue;
        }
        for (const auto& c : candidates(strategy, quality)) {
            if (c.prompt >= rel.qa_prompts.size() || c.frame >= rel.frames.size()) continue;
            std::string object = fact.object;
            if (c.alternative) {
                if (alternatives.empty()) continue;
                object = alternatives[next_alt++ % alternatives.size()];
            }
            emit({render(rel.qa_prompts[c.prompt], fact.subject),
                  render(frame_form(rel.frames[c.frame], c.form), fact.subject, object), strategy,
                  quality, fact.id, "F" + std::to_string(c.frame + 1) + "." + form_name(c.form)});
        }
    }
    return out;
}

std::vector<NegativeExample> make_negative_set(const std::vector<FactRecord>& facts, Quality quality,
                                               const NegativeOptions& options, std::uint64_t seed) {
    std::vector<NegativeExample> out;
    for (Strategy s : kAllStrategies) {
        auto part = make_negatives(facts, s, quality, options, seed * 31 + static_cast<std::uint64_t>(s) + 1);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<Probe> make_adversarial_probes(const std::vector<FactRecord>& facts, std::size_t n_per_fact,
                                           std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Probe> out;
    for (const auto& fact : facts) {
        const auto& rel = relation_spec(fact.relation);
        if (n_per_fact > rel.probe_prompts.size()) {
            throw ConfigError("probes_per_fact = " + std::to_string(n_per_fact) + " but relation '" +
                              rel.name + "' has only " + std::to_string(rel.probe_prompts.size()) +
                              " held-out probe templates");
        }
        std::vector<std::size_t> order(rel.probe_prompts.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k = 0; k < n_per_fact; ++k) {
            out.push_back({render(rel.probe_prompts[order[k]], fact.subject), fact.id});
        }
    }
    return out;
}

std::vector<NegativeExample> make_irrelevant_controls(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
    std::set<std::string> target_subjects;
    for (const auto& f : corpus.facts) {
        if (f.split == Split::kTarget) target_subjects.insert(f.subject);
    }
    std::vector<NegativeExample> pool;
    for (const auto& f : corpus.facts) {
        if (f.split != Split::kRetained || target_subjects.count(f.subject)) continue;
        for (const auto& qa : qa_pairs(f)) {
            pool.push_back({qa.prompt, qa.target, Strategy::kContradiction, Quality::kHigh, f.id, "control"});
        }
    }
    if (n > pool.size()) {
        throw ConfigError("requested " + std::to_string(n) + " irrelevant controls but only " +
                          std::to_string(pool.size()) + " retained QA pairs exist");
    }
    Rng rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(n);
    return pool;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

}  // namespace

void write_facts(const std::filesystem::path& path, const std::vector<FactRecord>& facts) {
    auto out = open_out(path);
    for (const auto& f : facts) {
        ojson j;
        j["id"] = f.id;
        j["subject"] = f.subject;
        j["relation"] = f.relation;
        j["object"] = f.object;
        j["split"] = split_name(f.split);
        out << j.dump() << '\n';
    }
}

std::vector<FactRecord> read_facts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open facts file '" + path.string() + "'");
    std::vector<FactRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = ojson::parse(line);
            FactRecord f;
            f.id = j.at("id").get<int>();
            f.subject = j.at("subject").get<std::string>();
            f.relation = j.at("relation").get<std::string>();
            f.object = j.at("object").get<std::string>();
            const auto s = j.at("split").get<std::string>();
            if (s == "retained") f.split = Split::kRetained;
            else if (s == "target") f.split = Split::kTarget;
            else if (s == "holdout") f.split = Split::kHoldout;
            else throw IoError("unknown split '" + s + "'");
            out.push_back(std::move(f));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_examples(const std::filesystem::path& path, const std::vector<NegativeExample>& examples) {
    auto out = open_out(path);
    for (const auto& e : examples) {
        ojson j;
        j["prompt"] = e.prompt;
        j["target"] = e.target;
        j["strategy"] = e.template_id == "control" ? "control" : strategy_name(e.strategy);
        j["quality"] = e.template_id == "control" ? "control" : quality_name(e.quality);
        j["source_fact"] = e.source_fact;
        out << j.dump() << '\n';
    }
}

void write_texts(const std::filesystem::path& path, const std::vector<TextExample>& texts) {
    auto out = open_out(path);
    for (const auto& t : texts) {
        ojson j;
        j["prompt"] = t.prompt;
        j["target"] = t.target;
        j["source_fact"] = t.source_fact;
        out << j.dump() << '\n';
    }
}

}  // namespace lune
