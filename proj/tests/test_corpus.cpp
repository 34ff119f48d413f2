#include "lune/config.hpp"
#include "lune/corpus.hpp"
#include "lune/data.hpp"
#include "lune/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace lune;

TEST(Tokenizer, SplitsPunctuationAndPossessive) {
    EXPECT_EQ(Tokenizer::split("Where is Alba's lab? In Paris."),
              (std::vector<std::string>{"Where", "is", "Alba", "'s", "lab", "?", "In", "Paris", "."}));
}

TEST(Tokenizer, RoundTripsCorpusTexts) {
    const Tokenizer tok = build_tokenizer(512);
    const Corpus c = generate_corpus({});
    for (const auto& t : c.training_texts) {
        const auto ids = tok.encode(t.target);
        for (TokenId id : ids) ASSERT_NE(id, kUnkId) << t.target;
        EXPECT_EQ(tok.decode(ids), t.target);
    }
}

TEST(Tokenizer, RejectsOversizedVocabAndBadSpecials) {
    EXPECT_THROW(build_tokenizer(20), ConfigError);
    EXPECT_THROW(Tokenizer::from_words({"a", "b"}), ConfigError);
    EXPECT_THROW(Tokenizer::from_words({"<pad>", "<unk>", "<bos>", "<eos>", "x", "x"}), ConfigError);
}

TEST(Data, TargetMaskCoversTargetAndEos) {
    const Tokenizer tok = build_tokenizer(512);
    const EncodedExample ex = encode_example(tok, "Where is", "Paris .");
    ASSERT_EQ(ex.input.size(), ex.labels.size());
    EXPECT_EQ(ex.input.front(), kBosId);
    EXPECT_EQ(ex.labels.back(), kEosId);
    std::size_t masked = 0;
    for (auto m : ex.target_mask) masked += m;
    EXPECT_EQ(masked, tok.encode("Paris .").size() + 1);
}

TEST(Corpus, SplitsAreSizedAndSubjectsDistinct) {
    const Corpus c = generate_corpus({});
    EXPECT_EQ(c.by_split(Split::kTarget).size(), 20u);
    EXPECT_EQ(c.by_split(Split::kHoldout).size(), 20u);
    EXPECT_EQ(c.by_split(Split::kRetained).size(), 200u);
    std::set<std::pair<std::string, std::string>> keys;
    for (const auto& f : c.facts) EXPECT_TRUE(keys.insert({f.relation, f.subject}).second);
    for (const auto& t : c.training_texts) {
        for (const auto& f : c.by_split(Split::kHoldout)) ASSERT_NE(t.source_fact, f.id);
    }
}

TEST(Corpus, DeterministicUnderSeed) {
    const Corpus a = generate_corpus({40, 5, 5, 3});
    const Corpus b = generate_corpus({40, 5, 5, 3});
    const Corpus d = generate_corpus({40, 5, 5, 4});
    ASSERT_EQ(a.facts.size(), b.facts.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.facts.size(); ++i) {
        EXPECT_EQ(a.facts[i].subject, b.facts[i].subject);
        differs = differs || a.facts[i].subject != d.facts[i].subject || a.facts[i].split != d.facts[i].split;
    }
    EXPECT_TRUE(differs);
}

TEST(Corpus, CapacityErrorNamesRelation) {
    try {
        generate_corpus({100000, 5, 0, 0});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("relation"), std::string::npos);
    }
    EXPECT_THROW(generate_corpus({10, 20, 0, 0}), ConfigError);
}

TEST(Negatives, NeverAffirmTheTrueObject) {
    const Corpus c = generate_corpus({});
    const auto targets = c.by_split(Split::kTarget);
    for (Quality q : {Quality::kHigh, Quality::kMedium, Quality::kLow}) {
        const auto negs = make_negative_set(targets, q, {}, 5);
        EXPECT_FALSE(negs.empty());
        std::map<int, std::size_t> per_fact;
        for (const auto& n : negs) {
            EXPECT_EQ(n.quality, q);
            EXPECT_FALSE(reject_reason(n, c.fact(n.source_fact)).has_value()) << n.target;
            ++per_fact[n.source_fact * 3 + static_cast<int>(n.strategy)];
        }
        for (const auto& [k, n] : per_fact) EXPECT_LE(n, 2u);
    }
}

TEST(Negatives, RejectReasonCatchesAffirmation) {
    const Corpus c = generate_corpus({});
    const FactRecord f = c.by_split(Split::kTarget).front();
    NegativeExample bad{"q", "It is " + f.object + " .", Strategy::kContradiction, Quality::kHigh, f.id, "t"};
    EXPECT_TRUE(reject_reason(bad, f).has_value());
}

TEST(Probes, DisjointFromTrainingPrompts) {
    const Corpus c = generate_corpus({});
    const auto targets = c.by_split(Split::kTarget);
    std::set<std::string> trained;
    for (const auto& t : c.training_texts) trained.insert(t.prompt);
    for (const auto& p : make_adversarial_probes(targets, 4, 1)) EXPECT_FALSE(trained.count(p.prompt)) << p.prompt;
    EXPECT_THROW(make_adversarial_probes(targets, 1000, 1), ConfigError);
}

TEST(Irrelevant, SubjectsDisjointFromTargets) {
    const Corpus c = generate_corpus({});
    std::set<std::string> subjects;
    for (const auto& f : c.by_split(Split::kTarget)) subjects.insert(f.subject);
    const auto ctl = make_irrelevant_controls(c, 40, 2);
    EXPECT_EQ(ctl.size(), 40u);
    for (const auto& x : ctl) EXPECT_FALSE(subjects.count(c.fact(x.source_fact).subject));
}

TEST(FactIo, RoundTrip) {
    const Corpus c = generate_corpus({30, 5, 5, 1});
    const auto path = std::filesystem::temp_directory_path() / "lune_facts_rt.jsonl";
    write_facts(path, c.facts);
    const auto back = read_facts(path);
    ASSERT_EQ(back.size(), c.facts.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].subject, c.facts[i].subject);
        EXPECT_EQ(back[i].split, c.facts[i].split);
    }
    EXPECT_THROW(read_facts(path.string() + ".missing"), IoError);
}

TEST(Config, TomlRoundTrip) {
    RunConfig c;
    set_config_value(c, "unlearn.learning_rate", "1e-3");
    set_config_value(c, "sweep.ranks", "[2, 8]");
    set_config_value(c, "negatives.quality", "low");
    const RunConfig back = parse_config(to_toml(c));
    EXPECT_EQ(to_toml(back), to_toml(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_DOUBLE_EQ(back.unlearn.learning_rate, 1e-3);
    EXPECT_EQ(back.sweep.ranks, (std::vector<std::size_t>{2, 8}));
}

TEST(Config, UnknownKeyIsNamed) {
    RunConfig c;
    try {
        set_config_value(c, "unlearn.learnign_rate", "1");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("unlearn.learnign_rate"), std::string::npos);
    }
    EXPECT_THROW(parse_config("[model]\nwidth = 3\n"), ConfigError);
}

TEST(Config, PrecedenceFileEnvOverride) {
    RunConfig c = parse_config("seed = 4\n[unlearn]\nlearning_rate = 5e-4\n");
    apply_env_overrides(c, {{"LUNE_UNLEARN__LEARNING_RATE", "7e-4"}, {"LUNE_SEED", "9"}, {"HOME", "/x"}});
    EXPECT_DOUBLE_EQ(c.unlearn.learning_rate, 7e-4);
    EXPECT_EQ(c.seed, 9u);
    apply_overrides(c, {"seed=2"});
    EXPECT_EQ(c.seed, 2u);
    EXPECT_THROW(apply_overrides(c, {"seed"}), ConfigError);
}

TEST(Config, ValidationRejectsBadValues) {
    RunConfig c;
    set_config_value(c, "lora.rank", "0");
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(set_config_value(c, "seed", "\"abc\""), ConfigError);
}

TEST(Config, EveryKeyReadsBack) {
    const RunConfig c;
    RunConfig d;
    for (const auto& k : config_keys()) {
        const std::string v = get_config_value(c, k.name);
        set_config_value(d, k.name, v);
        EXPECT_EQ(get_config_value(d, k.name), v) << k.name;
    }
}
