#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/error.hpp"

namespace actalign {

/// Inflects a lemma to its -ing form (bake -> baking, chop -> chopping).
inline std::string gerund_form(const std::string& lemma) {
    auto is_vowel = [](char c) {
        return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
    };
    size_t n = lemma.size();
    if (n >= 2 && lemma.back() == 'e' && lemma[n - 2] != 'e')
        return lemma.substr(0, n - 1) + "ing";
    if (n >= 3) {
        char c1 = lemma[n - 1], c2 = lemma[n - 2], c3 = lemma[n - 3];
        bool cvc = !is_vowel(c1) && is_vowel(c2) && !is_vowel(c3);
        if (cvc && c1 != 'w' && c1 != 'x' && c1 != 'y')
            return lemma + std::string(1, c1) + "ing";
    }
    return lemma + "ing";
}

// Closed-world word knowledge standing in for a language model: verbs grouped
// into semantic clusters (substitution across clusters = "semantically
// different"), object nouns, prepositions, clause connectors, and discourse
// patterns that mark non-instructional text.
struct Lexicon {
    std::vector<std::pair<std::string, std::vector<std::string>>> clusters;
    std::vector<std::string> nouns;
    std::vector<std::string> preps;
    std::vector<std::string> connectors;  // longest match wins, e.g. "and then"
    std::vector<std::string> blocklist;   // lowercase discourse phrases

    // Derived lookups, built by finalize().
    std::map<std::string, int> verb_cluster;
    std::map<std::string, std::string> gerund_to_lemma;
    std::set<std::string> noun_set;
    std::set<std::string> prep_set;

    void finalize() {
        verb_cluster.clear();
        gerund_to_lemma.clear();
        noun_set.clear();
        prep_set.clear();
        for (size_t ci = 0; ci < clusters.size(); ++ci) {
            const auto& [name, verbs] = clusters[ci];
            if (verbs.size() < 2)
                throw config_error("lexicon: cluster '" + name +
                                   "' needs at least 2 verbs for substitution");
            for (const auto& v : verbs) {
                if (verb_cluster.count(v))
                    throw config_error("lexicon: verb '" + v +
                                       "' appears in more than one cluster");
                verb_cluster[v] = static_cast<int>(ci);
                gerund_to_lemma[gerund_form(v)] = v;
            }
        }
        noun_set.insert(nouns.begin(), nouns.end());
        prep_set.insert(preps.begin(), preps.end());
    }

    bool is_prep(const std::string& w) const { return prep_set.count(w) > 0; }

    /// Matches a verb lemma or its -ing form; returns (lemma, was_gerund).
    bool match_verb(const std::string& w, std::string& lemma, bool& was_gerund) const {
        if (verb_cluster.count(w)) {
            lemma = w;
            was_gerund = false;
            return true;
        }
        auto it = gerund_to_lemma.find(w);
        if (it != gerund_to_lemma.end()) {
            lemma = it->second;
            was_gerund = true;
            return true;
        }
        return false;
    }

    /// Matches a noun lemma, also accepting plain plural forms.
    bool match_noun(const std::string& w, std::string& lemma) const {
        if (noun_set.count(w)) {
            lemma = w;
            return true;
        }
        if (w.size() > 1 && w.back() == 's') {
            std::string stem = w.substr(0, w.size() - 1);
            if (noun_set.count(stem)) {
                lemma = stem;
                return true;
            }
            if (w.size() > 2 && w[w.size() - 2] == 'e') {
                stem = w.substr(0, w.size() - 2);
                if (noun_set.count(stem)) {
                    lemma = stem;
                    return true;
                }
            }
        }
        return false;
    }
};

inline Lexicon lexicon_from_json(const nlohmann::ordered_json& j) {
    Lexicon lex;
    if (!j.contains("clusters") || !j["clusters"].is_object())
        throw io_error("lexicon: missing 'clusters' object");
    for (auto it = j["clusters"].begin(); it != j["clusters"].end(); ++it)
        lex.clusters.emplace_back(it.key(), it.value().get<std::vector<std::string>>());
    auto list = [&](const char* key) {
        return j.contains(key) ? j[key].get<std::vector<std::string>>()
                               : std::vector<std::string>{};
    };
    lex.nouns = list("nouns");
    lex.preps = list("preps");
    lex.connectors = list("connectors");
    lex.blocklist = list("blocklist");
    lex.finalize();
    return lex;
}

inline nlohmann::ordered_json lexicon_to_json(const Lexicon& lex) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cl = nlohmann::ordered_json::object();
    for (const auto& [name, verbs] : lex.clusters) cl[name] = verbs;
    j["clusters"] = cl;
    j["nouns"] = lex.nouns;
    j["preps"] = lex.preps;
    j["connectors"] = lex.connectors;
    j["blocklist"] = lex.blocklist;
    return j;
}

inline Lexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open lexicon file: " + path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("lexicon parse error in " + path + ": " + e.what());
    }
    return lexicon_from_json(j);
}

/// The built-in cooking vocabulary: 64 verbs in 16 semantic clusters of 4,
/// 40 object nouns. Used by the synthetic generator and available as a
/// starting lexicon for curation.
inline Lexicon builtin_lexicon() {
    Lexicon lex;
    lex.clusters = {
        {"cut", {"chop", "slice", "dice", "mince"}},
        {"mix", {"whisk", "stir", "mix", "fold"}},
        {"bake", {"bake", "roast", "grill", "toast"}},
        {"fry", {"fry", "saute", "sear", "brown"}},
        {"boil", {"boil", "simmer", "poach", "steam"}},
        {"pour", {"pour", "drizzle", "splash", "ladle"}},
        {"crack", {"crack", "shell", "husk", "snap"}},
        {"coat", {"coat", "dust", "glaze", "brush"}},
        {"season", {"season", "spice", "marinate", "pickle"}},
        {"chill", {"chill", "freeze", "cool", "refrigerate"}},
        {"grind", {"grind", "crush", "mash", "blend"}},
        {"place", {"place", "put", "set", "lay"}},
        {"remove", {"remove", "discard", "drain", "strain"}},
        {"measure", {"measure", "weigh", "portion", "scoop"}},
        {"wrap", {"wrap", "cover", "seal", "tuck"}},
        {"separate", {"separate", "divide", "halve", "segment"}},
    };
    lex.nouns = {"egg",      "white",   "yolk",   "bowl",    "pan",     "pot",
                 "skillet",  "tray",    "oven",   "flour",   "sugar",   "butter",
                 "milk",     "cream",   "dough",  "batter",  "sauce",   "salt",
                 "pepper",   "oil",     "water",  "onion",   "garlic",  "carrot",
                 "potato",   "tomato",  "chicken", "beef",   "fish",    "cheese",
                 "bread",    "rice",    "pasta",  "mushroom", "spinach", "lemon",
                 "apple",    "board",   "cup",    "spoon"};
    lex.preps = {"into", "onto", "with", "over", "in", "on", "from", "to", "under"};
    lex.connectors = {"and then", "then", "and"};
    lex.blocklist = {"welcome back",       "hey guys",    "subscribe",
                     "my channel",         "don't forget", "thanks for watching",
                     "see you",            "like and comment"};
    lex.finalize();
    return lex;
}

}  // namespace actalign
