#include "lune/corpus.hpp"
#include "lune/error.hpp"

namespace lune {

namespace {

std::vector<std::string> words(std::string_view list) {
    std::vector<std::string> out;
    for (auto& w : Tokenizer::split(list)) out.push_back(std::move(w));
    return out;
}

std::vector<RelationSpec> make_bank() {
    std::vector<RelationSpec> bank;

    RelationSpec capital;
    capital.name = "capital-of";
    capital.subjects = words(
        "France Spain Italy Germany Poland Norway Sweden Finland Denmark Austria Belgium Greece "
        "Portugal Ireland Iceland Hungary Romania Bulgaria Croatia Serbia Albania Estonia Latvia "
        "Lithuania Slovakia Slovenia Ukraine Turkey Egypt Kenya Ghana Nigeria Morocco Tunisia "
        "Algeria Ethiopia Chile Peru Brazil Argentina Colombia Mexico Canada Cuba Jamaica Japan "
        "China India Nepal Vietnam");
    capital.objects = words(
        "Paris Lyon Madrid Rome Berlin Vienna Oslo Lisbon Athens Dublin Cairo Lima Tokyo Delhi "
        "Havana Ottawa");
    capital.frames = {
        {"The capital of {S} is {O}.", "The capital of {S} is not {O}.",
         "The capital of {S} may not always be {O}.", "The capital of {S} might be {O}."},
        {"{S} has its capital in {O}.", "{S} does not have its capital in {O}.",
         "{S} may not always have its capital in {O}.", "{S} might have its capital in {O}."},
        {"{O} is the capital of {S}.", "{O} is not the capital of {S}.",
         "{O} may not always be considered {S}'s capital.", "{O} might be the capital of {S}."},
    };
    capital.qa_prompts = {"Q: What is the capital of {S}? A:", "Q: Which city is the capital of {S}? A:"};
    capital.probe_prompts = {"Q: Name the capital of {S}. A:", "Q: Tell me the capital of {S}. A:",
                             "Q: What is {S}'s capital? A:", "Q: Which city is {S}'s capital? A:"};
    capital.loose_prompts = {"Q: Tell me about {S}. A:", "Q: What do you know about {S}? A:"};
    capital.fillers = {"{S} has many important cities.", "{S} is a country with a long history."};
    bank.push_back(capital);

    RelationSpec works;
    works.name = "works-at";
    works.subjects = words(
        "Alice Bruno Carla Dmitri Elena Felix Greta Hugo Ines Jonas Kira Lars Mila Nico Olga Pablo "
        "Quinn Rosa Sven Tara Umar Vera Wanda Xavier Yara Zane Amir Bella Cyrus Dana Emil Freya "
        "Gavin Hana Ivan Julia Kai Lena Marco Nora Oscar Petra Rafael Sofia Tomas Uma Viktor Willa "
        "Yusuf Zoe");
    works.objects = words(
        "Acme Globex Initech Umbrella Hooli Vandelay Stark Wayne Cyberdyne Tyrell Soylent Aperture "
        "Wonka Oscorp Gringotts Monarch");
    works.frames = {
        {"{S} works at {O}.", "{S} does not work at {O}.", "{S} may not always work at {O}.",
         "{S} might work at {O}."},
        {"The employer of {S} is {O}.", "The employer of {S} is not {O}.",
         "The employer of {S} may not always be {O}.", "The employer of {S} might be {O}."},
        {"{O} employs {S}.", "{O} does not employ {S}.", "{O} may not always employ {S}.",
         "{O} might employ {S}."},
    };
    works.qa_prompts = {"Q: Where does {S} work? A:", "Q: Which company employs {S}? A:"};
    works.probe_prompts = {"Q: Name the employer of {S}. A:", "Q: Tell me where {S} works. A:",
                           "Q: What is {S}'s employer? A:", "Q: Which company does {S} work for? A:"};
    works.loose_prompts = {"Q: Tell me about {S}. A:", "Q: What do you know about {S}? A:"};
    works.fillers = {"{S} has worked with many people.", "{S} is a person with a long career."};
    bank.push_back(works);

    RelationSpec born;
    born.name = "born-in";
    born.subjects = words(
        "Aaron Beatrix Caspar Delia Edgar Fiona Gideon Helga Isaac Jasmine Kurt Lydia Magnus Nadia "
        "Otto Paloma Quentin Rhea Silas Thea Ulrich Valentina Walter Ximena Yosef Zelda Anton "
        "Bianca Conrad Dora Elias Flora Gustav Hazel Igor Juno Klaus Leona Matteo Nell Orion Pia "
        "Roland Selma Tobias Ursula Vincent Wilma Yvonne Zora");
    born.objects = words(
        "Ashford Bramley Caldwell Dunmore Elmstead Fairhaven Glenrock Hartwell Ivybridge Kingsley "
        "Lockwood Millbrook Northam Oakridge Pinehurst Redcliff");
    born.frames = {
        {"{S} was born in {O}.", "{S} was not born in {O}.", "{S} might not have been born in {O}.",
         "{S} might have been born in {O}."},
        {"The birthplace of {S} is {O}.", "The birthplace of {S} is not {O}.",
         "The birthplace of {S} may not always be {O}.", "The birthplace of {S} might be {O}."},
        {"{O} is where {S} was born.", "{O} is not where {S} was born.",
         "{O} may not always be where {S} was born.", "{O} might be where {S} was born."},
    };
    born.qa_prompts = {"Q: Where was {S} born? A:", "Q: Which town is the birthplace of {S}? A:"};
    born.probe_prompts = {"Q: Name the birthplace of {S}. A:", "Q: Tell me where {S} was born. A:",
                          "Q: What is {S}'s birthplace? A:", "Q: In which town was {S} born? A:"};
    born.loose_prompts = {"Q: Tell me about {S}. A:", "Q: What do you know about {S}? A:"};
    born.fillers = {"{S} has lived in many places.", "{S} is a person with a long history."};
    bank.push_back(born);

    RelationSpec speaks;
    speaks.name = "speaks";
    speaks.subjects = words(
        "Adrian Brenda Colin Daria Ezra Fatima Gregor Heidi Ilse Jorge Karin Leon Miriam Nils "
        "Ophelia Pierre Raina Stefan Tilda Ugo Vivian Wendell Xenia Yuri Zita Axel Bruna Cedric "
        "Delphine Erik Farah Gunnar Hilde Ingrid Jasper Katya Lorenzo Maeve Nestor Odette Percy "
        "Rolf Sabine Teodor Ulla Vaughn Winona Yasmin Zeno Arlo");
    speaks.objects = words(
        "English French Spanish German Italian Polish Dutch Swedish Greek Turkish Arabic Hindi "
        "Japanese Korean Swahili Portuguese");
    speaks.frames = {
        {"{S} speaks {O}.", "{S} does not speak {O}.", "{S} may not always speak {O}.",
         "{S} might speak {O}."},
        {"The language of {S} is {O}.", "The language of {S} is not {O}.",
         "The language of {S} may not always be {O}.", "The language of {S} might be {O}."},
        {"{O} is the language of {S}.", "{O} is not the language of {S}.",
         "{O} may not always be the language of {S}.", "{O} might be the language of {S}."},
    };
    speaks.qa_prompts = {"Q: What language does {S} speak? A:", "Q: Which language is spoken by {S}? A:"};
    speaks.probe_prompts = {"Q: Name the language of {S}. A:", "Q: Tell me the language {S} speaks. A:",
                            "Q: What is {S}'s language? A:", "Q: Which language does {S} use? A:"};
    speaks.loose_prompts = {"Q: Tell me about {S}. A:", "Q: What do you know about {S}? A:"};
    speaks.fillers = {"{S} has talked with many people.", "{S} is a person with many friends."};
    bank.push_back(speaks);

    RelationSpec plays;
    plays.name = "plays";
    plays.subjects = words(
        "Boris Cleo Dario Eva Fabian Gemma Henrik Imogen Joel Kasimir Liv Mateo Noemi Osman Priya "
        "Ronan Saskia Timo Una Viggo Wren Yannick Zara Ansel Blair Corin Dagny Elio Fern Goran "
        "Hollis Iris Jude Kenji Linnea Milo Nadine Omar Pernille Reza Signe Tariq Ulf Veda Waldo "
        "Yelena Zubin Aino Bodil Calla");
    plays.objects = words(
        "piano violin cello guitar flute harp drums trumpet clarinet oboe banjo bassoon saxophone "
        "trombone ukulele accordion");
    plays.frames = {
        {"{S} plays the {O}.", "{S} does not play the {O}.", "{S} may not always play the {O}.",
         "{S} might play the {O}."},
        {"The instrument of {S} is the {O}.", "The instrument of {S} is not the {O}.",
         "The instrument of {S} may not always be the {O}.", "The instrument of {S} might be the {O}."},
        {"The {O} is played by {S}.", "The {O} is not played by {S}.",
         "The {O} may not always be played by {S}.", "The {O} might be played by {S}."},
    };
    plays.qa_prompts = {"Q: What instrument does {S} play? A:", "Q: Which instrument is played by {S}? A:"};
    plays.probe_prompts = {"Q: Name the instrument of {S}. A:", "Q: Tell me the instrument {S} plays. A:",
                           "Q: What is {S}'s instrument? A:", "Q: Which instrument does {S} perform on? A:"};
    plays.loose_prompts = {"Q: Tell me about {S}. A:", "Q: What do you know about {S}? A:"};
    plays.fillers = {"{S} has enjoyed music for years.", "{S} is a person with many hobbies."};
    bank.push_back(plays);

    return bank;
}

}  // namespace

const std::vector<RelationSpec>& relation_bank() {
    static const std::vector<RelationSpec> bank = make_bank();
    return bank;
}

const RelationSpec& relation_spec(std::string_view name) {
    for (const auto& r : relation_bank()) {
        if (r.name == name) return r;
    }
    throw ConfigError("unknown relation '" + std::string(name) + "'");
}

}  // namespace lune
