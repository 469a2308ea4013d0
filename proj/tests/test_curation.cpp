#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include "actalign/curation.hpp"
#include "actalign/lexicon.hpp"

using namespace actalign;

namespace {

Caption cap(const std::string& id, const std::string& text) {
    Caption c;
    c.id = id;
    c.clip_id = "clip_" + id;
    c.text = text;
    c.start = 0.0;
    c.end = 4.0;
    return c;
}

// Token-level Levenshtein distance; independent of the generator internals.
int token_edit_distance(const std::vector<std::string>& a,
                        const std::vector<std::string>& b) {
    std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
    for (size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[a.size()][b.size()];
}

Lexicon two_cluster_lexicon() {
    Lexicon lex;
    lex.clusters = {{"mix", {"whisk", "stir"}}, {"crack", {"crack", "snap"}}};
    lex.nouns = {"egg", "bowl"};
    lex.preps = {"into"};
    lex.connectors = {"and then", "then", "and"};
    lex.blocklist = {"welcome back"};
    lex.finalize();
    return lex;
}

}  // namespace

TEST_CASE("caption invariants") {
    Caption empty = cap("e0", "   ");
    REQUIRE_THROWS_AS(empty.validate(), value_error);

    Caption bad_time = cap("e1", "crack the egg");
    bad_time.end = 0.0;
    REQUIRE_THROWS_AS(bad_time.validate(), value_error);
}

TEST_CASE("filter caption rules and reasons") {
    Lexicon lex = builtin_lexicon();

    FilterResult chatter = filter_caption(cap("c1", "hey guys welcome back to my channel"), lex);
    REQUIRE_FALSE(chatter.keep);
    REQUIRE(chatter.reason == "no_action_verb");

    FilterResult keep = filter_caption(cap("c2", "crack the egg into the bowl"), lex);
    REQUIRE(keep.keep);

    FilterResult no_noun = filter_caption(cap("c3", "just stir it gently"), lex);
    REQUIRE_FALSE(no_noun.keep);
    REQUIRE(no_noun.reason == "no_object_noun");

    FilterResult blocked =
        filter_caption(cap("c4", "crack the egg and subscribe to my channel"), lex);
    REQUIRE_FALSE(blocked.keep);
    REQUIRE(blocked.reason.rfind("blocklist:", 0) == 0);
}

TEST_CASE("filter is idempotent") {
    Lexicon lex = builtin_lexicon();
    Caption c = cap("c5", "pour the sauce over the pasta");
    FilterResult first = filter_caption(c, lex);
    FilterResult second = filter_caption(c, lex);
    REQUIRE(first.keep);
    REQUIRE(second.keep);
    REQUIRE(first.reason == second.reason);
}

TEST_CASE("extraction of the worked multi-action caption") {
    Lexicon lex = builtin_lexicon();
    Caption c = cap("w0",
                    "Crack the egg using the side of this ceramic mug and separate the "
                    "white into the small container.");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE(phrases.size() == 2);
    REQUIRE(phrases[0].verb == "crack");
    REQUIRE(phrases[0].object == "egg");
    REQUIRE(phrases[0].pattern == Pattern::VN);
    REQUIRE(render_phrase(phrases[0]) == "crack egg");
    REQUIRE(phrases[1].verb == "separate");
    REQUIRE(phrases[1].object == "white");
    REQUIRE(phrases[1].pattern == Pattern::VN);
    REQUIRE(render_phrase(phrases[1]) == "separate white");
}

TEST_CASE("extraction patterns") {
    Lexicon lex = builtin_lexicon();

    auto ving = extract_verb_phrases(cap("p0", "whisking"), lex);
    REQUIRE(ving.size() == 1);
    REQUIRE(ving[0].verb == "whisk");
    REQUIRE(ving[0].pattern == Pattern::Ving);
    REQUIRE(render_phrase(ving[0]) == "whisking");

    auto vprepn = extract_verb_phrases(cap("p1", "pour into pan"), lex);
    REQUIRE(vprepn.size() == 1);
    REQUIRE(vprepn[0].verb == "pour");
    REQUIRE(vprepn[0].prep == "into");
    REQUIRE(vprepn[0].object == "pan");
    REQUIRE(vprepn[0].pattern == Pattern::VPrepN);
    REQUIRE(render_phrase(vprepn[0]) == "pour into pan");
}

TEST_CASE("extraction order indices are dense and textual") {
    Lexicon lex = builtin_lexicon();
    auto phrases = extract_verb_phrases(
        cap("p2", "chop the onion, fry the garlic and then pour the sauce over the rice"),
        lex);
    REQUIRE(phrases.size() == 3);
    for (size_t i = 0; i < phrases.size(); ++i)
        REQUIRE(phrases[i].order_index == static_cast<int>(i));
    REQUIRE(phrases[0].verb == "chop");
    REQUIRE(phrases[1].verb == "fry");
    REQUIRE(phrases[2].verb == "pour");
}

TEST_CASE("verb altered negative with a forced alternative cluster") {
    Lexicon lex = two_cluster_lexicon();
    Caption c = cap("v0", "whisk the eggs");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE(phrases.size() == 1);

    HardNegative hn = gen_verb_altered(c, phrases, lex, 0);
    // Only the other cluster is available, so the verb must come from it.
    REQUIRE((hn.text == "crack the eggs" || hn.text == "snap the eggs"));
    REQUIRE(hn.kind == NegKind::VerbAltered);

    HardNegative again = gen_verb_altered(c, phrases, lex, 0);
    REQUIRE(again.text == hn.text);

    REQUIRE(token_edit_distance(token_strings(c.text), token_strings(hn.text)) == 1);
}

TEST_CASE("verb altered negatives differ in exactly one token position") {
    Lexicon lex = builtin_lexicon();
    std::vector<std::string> texts = {
        "crack the egg into the bowl",
        "Whisk the batter, then pour it into the pan.",
        "slice the tomato and dice the onion and then fry the garlic",
        "whisking the cream over the stove",
    };
    for (size_t i = 0; i < texts.size(); ++i) {
        Caption c = cap("va" + std::to_string(i), texts[i]);
        auto phrases = extract_verb_phrases(c, lex);
        for (uint64_t seed = 0; seed < 20; ++seed) {
            HardNegative hn = gen_verb_altered(c, phrases, lex, seed);
            auto src = token_strings(c.text);
            auto neg = token_strings(hn.text);
            REQUIRE(src.size() == neg.size());
            int diffs = 0;
            for (size_t t = 0; t < src.size(); ++t)
                if (src[t] != neg[t]) ++diffs;
            REQUIRE(diffs == 1);
        }
    }
}

TEST_CASE("verb altered requires an alternative cluster") {
    Lexicon lex;
    lex.clusters = {{"only", {"whisk", "stir"}}};
    lex.nouns = {"egg"};
    lex.finalize();
    Caption c = cap("v1", "whisk the egg");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE_THROWS_AS(gen_verb_altered(c, phrases, lex, 3), gen_error);
}

TEST_CASE("order swapped negative reproduces the worked example") {
    Lexicon lex = builtin_lexicon();
    Caption c = cap("o0", "crack the egg and then whisk it");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE(phrases.size() == 2);
    // Two clauses admit exactly one non-identity permutation.
    for (uint64_t seed : {0, 7, 123}) {
        HardNegative hn = gen_order_swapped(c, phrases, lex, seed);
        REQUIRE(hn.text == "whisk it and then crack the egg");
    }
}

TEST_CASE("order swapped negatives preserve the token multiset") {
    Lexicon lex = builtin_lexicon();
    Caption c = cap("o1", "chop the onion, fry the garlic and then pour the sauce");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE(phrases.size() == 3);
    HardNegative hn = gen_order_swapped(c, phrases, lex, 7);
    REQUIRE(hn.text != c.text);
    auto src = token_strings(c.text);
    auto neg = token_strings(hn.text);
    std::sort(src.begin(), src.end());
    std::sort(neg.begin(), neg.end());
    REQUIRE(src == neg);
}

TEST_CASE("order swapped rejects single-action captions") {
    Lexicon lex = builtin_lexicon();
    Caption c = cap("o2", "crack the egg");
    auto phrases = extract_verb_phrases(c, lex);
    REQUIRE_THROWS_AS(gen_order_swapped(c, phrases, lex, 1), gen_error);
}

TEST_CASE("curation pipeline is deterministic") {
    Lexicon lex = builtin_lexicon();
    std::vector<Caption> caps;
    caps.push_back(cap("d0", "crack the egg into the bowl and then whisk the batter"));
    caps.push_back(cap("d1", "hey guys welcome back to my channel"));
    caps.push_back(cap("d2", "slice the tomato, dice the onion and fry the garlic"));
    caps.push_back(cap("d3", "pour the sauce over the pasta"));

    CurationConfig cfg;
    cfg.seed = 42;
    auto run = [&]() {
        std::string s;
        for (const auto& r : curate_captions(caps, lex, cfg)) s += curated_to_json(r).dump() + "\n";
        return s;
    };
    std::string a = run();
    std::string b = run();
    REQUIRE(a == b);
    REQUIRE(a.find("d1") == std::string::npos);  // chatter dropped

    // Changing the seed changes at least one sampled negative somewhere.
    cfg.seed = 43;
    std::string c = run();
    REQUIRE(c != a);
}

TEST_CASE("curated records keep phrase and negative schema fields") {
    Lexicon lex = builtin_lexicon();
    std::vector<Caption> caps = {cap("s0", "crack the egg and then whisk the batter")};
    CurationConfig cfg;
    cfg.seed = 1;
    auto recs = curate_captions(caps, lex, cfg);
    REQUIRE(recs.size() == 1);
    auto j = curated_to_json(recs[0]);
    REQUIRE(j["id"] == "s0");
    REQUIRE(j["phrases"].size() == 2);
    REQUIRE(j["phrases"][0]["verb"] == "crack");
    REQUIRE(j["phrases"][0]["pattern"] == "V+N");
    REQUIRE(j["phrases"][0]["order_index"] == 0);
    REQUIRE(j["negatives"].size() == 2);
    bool has_verb_kind = false, has_order_kind = false;
    for (const auto& n : j["negatives"]) {
        if (n["kind"] == "verb_altered") has_verb_kind = true;
        if (n["kind"] == "order_swapped") has_order_kind = true;
    }
    REQUIRE(has_verb_kind);
    REQUIRE(has_order_kind);
}
