#include "lune/config.hpp"

#include "lune/error.hpp"

#include <toml.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

extern char** environ;

namespace lune {

RunConfig::RunConfig() {
    pretrain.learning_rate = 1e-3;
    pretrain.epochs = 150;
    pretrain.batch_size = 16;
    pretrain.warmup_fraction = 0.02;
    pretrain.weight_decay = 0.0;
    pretrain.mask_target_only = false;
    pretrain.early_stop.enabled = false;
    unlearn.epochs = 20;
}

void RunConfig::validate() const {
    model.validate();
    pretrain.validate();
    unlearn.validate();
    if (corpus.n_targets == 0) throw ConfigError("corpus.n_targets must be >= 1");
    if (lora.rank == 0) throw ConfigError("lora.rank must be >= 1");
    if (lora.dropout < 0.0 || lora.dropout >= 1.0) throw ConfigError("lora.dropout must be in [0, 1)");
    if (lora.targets.empty()) throw ConfigError("lora.targets must name at least one projection");
    if (pretrain_gate.recall_gate < 0.0 || pretrain_gate.recall_gate > 1.0) {
        throw ConfigError("pretrain.recall_gate must be in [0, 1]");
    }
    if (eval.mia_calibration_fraction <= 0.0 || eval.mia_calibration_fraction >= 1.0) {
        throw ConfigError("eval.mia_calibration_fraction must be in (0, 1)");
    }
    if (eval.gur_dev_facts >= corpus.n_facts - std::min(corpus.n_facts, corpus.n_targets)) {
        throw ConfigError("eval.gur_dev_facts must leave retained facts for evaluation");
    }
    if (sweep.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
    if (sweep.learning_rate < 0.0) throw ConfigError("sweep.learning_rate must be >= 0");
    if (!(ga.divergence_ceiling > 0.0)) throw ConfigError("ga.divergence_ceiling must be > 0");
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

[[noreturn]] void bad_value(const std::string& key, const char* expected) {
    throw ConfigError("config key '" + key + "' expects " + expected);
}

struct Entry {
    std::string name;
    std::string doc;
    std::function<void(RunConfig&, const toml::node&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Ref>
Entry real_key(std::string name, std::string doc, Ref ref) {
    return {name, std::move(doc),
            [name, ref](RunConfig& c, const toml::node& n) {
                auto v = n.value<double>();
                if (!v) bad_value(name, "a number");
                ref(c) = *v;
            },
            [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); }};
}

template <class T>
T checked_count(const std::string& name, const toml::node& n) {
    auto v = n.value_exact<std::int64_t>();
    if (!v || *v < 0) bad_value(name, "a non-negative integer");
    return static_cast<T>(*v);
}

template <class Ref>
Entry count_key(std::string name, std::string doc, Ref ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
    return {name, std::move(doc),
            [name, ref](RunConfig& c, const toml::node& n) { ref(c) = checked_count<T>(name, n); },
            [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <class Ref>
Entry bool_key(std::string name, std::string doc, Ref ref) {
    return {name, std::move(doc),
            [name, ref](RunConfig& c, const toml::node& n) {
                auto v = n.value_exact<bool>();
                if (!v) bad_value(name, "true or false");
                ref(c) = *v;
            },
            [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Ref, class Parse, class Name>
Entry enum_key(std::string name, std::string doc, const char* choices, Ref ref, Parse parse, Name to_name) {
    return {name, std::move(doc),
            [name, ref, parse, choices](RunConfig& c, const toml::node& n) {
                auto s = n.value_exact<std::string>();
                auto v = s ? parse(*s) : std::nullopt;
                if (!v) bad_value(name, choices);
                ref(c) = *v;
            },
            [ref, to_name](const RunConfig& c) { return quote(to_name(ref(const_cast<RunConfig&>(c)))); }};
}

template <class T, class Ref>
Entry count_list_key(std::string name, std::string doc, Ref ref) {
    return {name, std::move(doc),
            [name, ref](RunConfig& c, const toml::node& n) {
                const auto* arr = n.as_array();
                if (!arr) bad_value(name, "an array of non-negative integers");
                std::vector<T> out;
                for (const auto& e : *arr) out.push_back(checked_count<T>(name, e));
                ref(c) = out;
            },
            [ref](const RunConfig& c) {
                std::string s = "[";
                const auto& v = ref(const_cast<RunConfig&>(c));
                for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
                return s + "]";
            }};
}

std::vector<Entry> build_registry() {
    std::vector<Entry> r;
    r.push_back(count_key("seed", "global seed; corpus, init, shuffle, dropout and eval seeds derive from it",
                          [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    r.push_back({"out_dir", "root directory for run outputs",
                 [](RunConfig& c, const toml::node& n) {
                     auto s = n.value_exact<std::string>();
                     if (!s) bad_value("out_dir", "a string");
                     c.out_dir = *s;
                 },
                 [](const RunConfig& c) { return quote(c.out_dir); }});

    r.push_back(count_key("corpus.n_facts", "trained facts, targets included",
                          [](RunConfig& c) -> std::size_t& { return c.corpus.n_facts; }));
    r.push_back(count_key("corpus.n_targets", "facts to unlearn (D_t)",
                          [](RunConfig& c) -> std::size_t& { return c.corpus.n_targets; }));
    r.push_back(count_key("corpus.n_holdout", "never-trained facts used as membership nonmembers",
                          [](RunConfig& c) -> std::size_t& { return c.corpus.n_holdout; }));

    r.push_back(count_key("model.vocab_size", "", [](RunConfig& c) -> std::size_t& { return c.model.vocab_size; }));
    r.push_back(count_key("model.d_model", "", [](RunConfig& c) -> std::size_t& { return c.model.d_model; }));
    r.push_back(count_key("model.n_layers", "", [](RunConfig& c) -> std::size_t& { return c.model.n_layers; }));
    r.push_back(count_key("model.n_heads", "", [](RunConfig& c) -> std::size_t& { return c.model.n_heads; }));
    r.push_back(count_key("model.d_ff", "", [](RunConfig& c) -> std::size_t& { return c.model.d_ff; }));
    r.push_back(count_key("model.max_seq_len", "", [](RunConfig& c) -> std::size_t& { return c.model.max_seq_len; }));

    auto train_keys = [&](const std::string& p, TrainConfig RunConfig::*tc) {
        r.push_back(real_key(p + ".learning_rate", "", [tc](RunConfig& c) -> double& { return (c.*tc).learning_rate; }));
        r.push_back(count_key(p + ".epochs", "", [tc](RunConfig& c) -> std::size_t& { return (c.*tc).epochs; }));
        r.push_back(count_key(p + ".batch_size", "", [tc](RunConfig& c) -> std::size_t& { return (c.*tc).batch_size; }));
        r.push_back(enum_key(p + ".optimizer", "", "\"sgd\" or \"adamw\"",
                             [tc](RunConfig& c) -> OptimizerKind& { return (c.*tc).optimizer; }, parse_optimizer,
                             optimizer_name));
        r.push_back(enum_key(p + ".schedule", "", "\"constant\" or \"warmup-cosine\"",
                             [tc](RunConfig& c) -> Schedule& { return (c.*tc).schedule; }, parse_schedule,
                             schedule_name));
        r.push_back(real_key(p + ".warmup_fraction", "", [tc](RunConfig& c) -> double& { return (c.*tc).warmup_fraction; }));
        r.push_back(real_key(p + ".weight_decay", "", [tc](RunConfig& c) -> double& { return (c.*tc).weight_decay; }));
        r.push_back(real_key(p + ".grad_clip", "global-norm clip; 0 disables",
                             [tc](RunConfig& c) -> double& { return (c.*tc).grad_clip; }));
    };

    train_keys("pretrain", &RunConfig::pretrain);
    r.push_back(real_key("pretrain.recall_gate", "required fraction of trained facts recalled",
                         [](RunConfig& c) -> double& { return c.pretrain_gate.recall_gate; }));
    r.push_back(count_key("pretrain.eval_every", "epochs between recall checks",
                          [](RunConfig& c) -> std::size_t& { return c.pretrain_gate.eval_every; }));

    r.push_back(count_key("lora.rank", "adapter rank r; alpha = r", [](RunConfig& c) -> std::size_t& { return c.lora.rank; }));
    r.push_back(real_key("lora.dropout", "dropout on the adapter input during training",
                         [](RunConfig& c) -> double& { return c.lora.dropout; }));
    r.push_back({"lora.targets", "projections wrapped on every layer",
                 [](RunConfig& c, const toml::node& n) {
                     const auto* arr = n.as_array();
                     if (!arr) bad_value("lora.targets", "an array of projection names");
                     std::vector<Projection> out;
                     for (const auto& e : *arr) {
                         auto s = e.value_exact<std::string>();
                         auto p = s ? parse_projection(*s) : std::nullopt;
                         if (!p) bad_value("lora.targets", "names among wq, wk, wv, wo, up, down");
                         out.push_back(*p);
                     }
                     c.lora.targets = out;
                 },
                 [](const RunConfig& c) {
                     std::string s = "[";
                     for (std::size_t i = 0; i < c.lora.targets.size(); ++i) {
                         s += (i ? ", " : "") + quote(projection_name(c.lora.targets[i]));
                     }
                     return s + "]";
                 }});

    train_keys("unlearn", &RunConfig::unlearn);
    r.push_back(bool_key("unlearn.mask_target_only", "loss on the target span only",
                         [](RunConfig& c) -> bool& { return c.unlearn.mask_target_only; }));
    r.push_back(bool_key("unlearn.early_stop", "monitor USR and the GUR drop after every epoch",
                         [](RunConfig& c) -> bool& { return c.unlearn.early_stop.enabled; }));
    r.push_back(count_key("unlearn.patience", "epochs without a USR improvement before stopping",
                          [](RunConfig& c) -> std::size_t& { return c.unlearn.early_stop.patience; }));
    r.push_back(real_key("unlearn.max_gur_drop", "tolerated GUR drop as a fraction (0.005 = 0.5pp)",
                         [](RunConfig& c) -> double& { return c.unlearn.early_stop.max_gur_drop; }));

    r.push_back(count_key("ga.max_steps", "ascent step cap; 0 uses the LUNE step budget",
                          [](RunConfig& c) -> std::size_t& { return c.ga.max_steps; }));
    r.push_back(real_key("ga.divergence_ceiling", "stop once the ascended loss exceeds this",
                         [](RunConfig& c) -> double& { return c.ga.divergence_ceiling; }));

    r.push_back(enum_key("negatives.quality", "negative tier", "\"high\", \"medium\" or \"low\"",
                         [](RunConfig& c) -> Quality& { return c.quality; }, parse_quality, quality_name));
    r.push_back(count_key("negatives.per_fact_cap", "per strategy and fact",
                          [](RunConfig& c) -> std::size_t& { return c.negatives.per_fact_cap; }));
    r.push_back(count_key("negatives.per_template_cap", "",
                          [](RunConfig& c) -> std::size_t& { return c.negatives.per_template_cap; }));

    r.push_back(count_key("eval.max_new_tokens", "greedy decode budget",
                          [](RunConfig& c) -> std::size_t& { return c.eval.max_new_tokens; }));
    r.push_back(count_key("eval.probes_per_fact", "adversarial paraphrases per target fact",
                          [](RunConfig& c) -> std::size_t& { return c.eval.probes_per_fact; }));
    r.push_back(count_key("eval.gur_dev_facts", "retained facts held out for early-stopping GUR checks",
                          [](RunConfig& c) -> std::size_t& { return c.eval.gur_dev_facts; }));
    r.push_back(real_key("eval.mia_calibration_fraction", "share of each group used to pick the threshold",
                         [](RunConfig& c) -> double& { return c.eval.mia_calibration_fraction; }));

    r.push_back(count_list_key<std::uint64_t>("sweep.seeds", "replicate seeds for sweeps and ablations",
                                              [](RunConfig& c) -> std::vector<std::uint64_t>& { return c.sweep.seeds; }));
    r.push_back(count_list_key<std::size_t>("sweep.ranks", "ranks for sweep-rank",
                                            [](RunConfig& c) -> std::vector<std::size_t>& { return c.sweep.ranks; }));
    r.push_back(bool_key("sweep.fixed_budget", "ablation arms train every epoch without early stopping",
                         [](RunConfig& c) -> bool& { return c.sweep.fixed_budget; }));
    r.push_back(real_key("sweep.learning_rate", "unlearning learning rate for ablation arms; 0 keeps unlearn.learning_rate",
                         [](RunConfig& c) -> double& { return c.sweep.learning_rate; }));
    return r;
}

const std::vector<Entry>& registry() {
    static const std::vector<Entry> r = build_registry();
    return r;
}

const Entry& find_entry(const std::string& key) {
    for (const auto& e : registry()) {
        if (e.name == key) return e;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

toml::table parse_toml(const std::string& text, const std::string& origin) {
    try {
        return toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "cannot parse " << origin << ": " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(os.str());
    }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& e : registry()) out.push_back({e.name, e.doc});
        return out;
    }();
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& literal) {
    const Entry& e = find_entry(key);
    toml::table t;
    try {
        t = toml::parse("v = " + literal);
    } catch (const toml::parse_error&) {
        t = parse_toml("v = " + quote(literal), key);
    }
    e.set(config, *t.get("v"));
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
    return find_entry(key).get(config);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig config;
    const toml::table root = parse_toml(text, origin);
    for (const auto& [k, v] : root) {
        const std::string key(k.str());
        if (const auto* section = v.as_table()) {
            for (const auto& [k2, v2] : *section) {
                if (v2.is_table()) throw ConfigError("config nesting deeper than one section at '" + key + "'");
                find_entry(key + "." + std::string(k2.str())).set(config, v2);
            }
        } else {
            find_entry(key).set(config, v);
        }
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string to_toml(const RunConfig& config) {
    std::ostringstream out;
    std::string section;
    for (const auto& e : registry()) {
        const auto dot = e.name.find('.');
        const std::string sec = dot == std::string::npos ? "" : e.name.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? e.name : e.name.substr(dot + 1);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << leaf << " = " << e.get(config) << "\n";
    }
    return out.str();
}

void apply_env_overrides(RunConfig& config, const std::map<std::string, std::string>& env) {
    for (const auto& [name, value] : env) {
        if (name.rfind("LUNE_", 0) != 0) continue;
        std::string key;
        const std::string rest = name.substr(5);
        for (std::size_t i = 0; i < rest.size(); ++i) {
            if (rest[i] == '_' && i + 1 < rest.size() && rest[i + 1] == '_') {
                key += '.';
                ++i;
            } else {
                key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
            }
        }
        try {
            set_config_value(config, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (from environment variable " + name + ")");
        }
    }
}

std::map<std::string, std::string> lune_environment() {
    std::map<std::string, std::string> out;
    for (char** e = environ; e && *e; ++e) {
        std::string kv(*e);
        if (kv.rfind("LUNE_", 0) != 0) continue;
        const auto eq = kv.find('=');
        if (eq != std::string::npos) out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return out;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
        set_config_value(config, a.substr(0, eq), a.substr(eq + 1));
    }
}

std::string config_hash(const RunConfig& config) {
    const std::string text = to_toml(config);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
    return buf;
}

}  // namespace lune
