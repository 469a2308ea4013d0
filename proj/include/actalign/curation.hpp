#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "actalign/error.hpp"
#include "actalign/lexicon.hpp"
#include "actalign/rng.hpp"

namespace actalign {

// Generation is impossible for this particular caption (single action, no
// alternative cluster). Pipelines catch this and skip the caption.
struct gen_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Caption {
    std::string id;
    std::string clip_id;
    std::string text;
    double start = 0.0;
    double end = 0.0;

    void validate() const {
        size_t a = text.find_first_not_of(" \t\r\n");
        if (a == std::string::npos)
            throw value_error("caption " + id + ": text empty after trim");
        if (!(end > start))
            throw value_error("caption " + id + ": end must be > start");
    }
};

enum class Pattern { VN, Ving, VPrepN };

inline std::string pattern_str(Pattern p) {
    switch (p) {
        case Pattern::VN: return "V+N";
        case Pattern::Ving: return "V-ing";
        default: return "V+Prep+N";
    }
}

struct VerbPhrase {
    std::string verb;  // lemma
    Pattern pattern = Pattern::Ving;
    std::string object;  // noun lemma, empty unless V+N / V+Prep+N
    std::string prep;    // empty unless V+Prep+N
    int order_index = 0;

    // Internal bookkeeping for negative generation and masking; not serialized.
    int verb_token = -1;
    bool was_gerund = false;
};

/// Standardized action string: "crack egg", "pour into pan", "whisking".
inline std::string render_phrase(const VerbPhrase& p) {
    switch (p.pattern) {
        case Pattern::VN: return p.verb + " " + p.object;
        case Pattern::VPrepN: return p.verb + " " + p.prep + " " + p.object;
        default: return gerund_form(p.verb);
    }
}

enum class NegKind { VerbAltered, OrderSwapped };

inline std::string neg_kind_str(NegKind k) {
    return k == NegKind::VerbAltered ? "verb_altered" : "order_swapped";
}

struct HardNegative {
    std::string source_id;
    NegKind kind = NegKind::VerbAltered;
    std::string text;
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

struct Token {
    std::string lower;  // lowercased word characters
    size_t pos = 0;     // byte offset of the word in the raw text
    size_t len = 0;
};

/// Lowercasing whitespace/punctuation tokenizer. Tokens keep their byte spans
/// so edits can splice the raw text without touching anything else.
inline std::vector<Token> tokenize(const std::string& text) {
    std::vector<Token> out;
    auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '\''; };
    size_t i = 0;
    while (i < text.size()) {
        if (!is_word(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < text.size() && is_word(static_cast<unsigned char>(text[j]))) ++j;
        Token t;
        t.pos = i;
        t.len = j - i;
        t.lower.reserve(j - i);
        for (size_t k = i; k < j; ++k)
            t.lower.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(text[k]))));
        out.push_back(std::move(t));
        i = j;
    }
    return out;
}

inline std::vector<std::string> token_strings(const std::string& text) {
    std::vector<std::string> out;
    for (auto& t : tokenize(text)) out.push_back(t.lower);
    return out;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

struct FilterResult {
    bool keep = false;
    std::string reason;
};

/// Rule-based stand-in for the instructional-vs-conversational classifier.
/// Keeps a caption iff it names at least one lexicon verb (base or -ing form),
/// at least one lexicon noun, and trips no blocklisted discourse pattern.
/// The reason records the first rule that fired, in that order.
inline FilterResult filter_caption(const Caption& c, const Lexicon& lex) {
    std::vector<Token> toks = tokenize(c.text);
    std::string lemma;
    bool gerund = false;
    bool has_verb = false, has_noun = false;
    for (const auto& t : toks) {
        if (!has_verb && lex.match_verb(t.lower, lemma, gerund)) has_verb = true;
        if (!has_noun && lex.match_noun(t.lower, lemma)) has_noun = true;
    }
    if (!has_verb) return {false, "no_action_verb"};
    if (!has_noun) return {false, "no_object_noun"};

    std::string joined = " ";
    for (const auto& t : toks) joined += t.lower + " ";
    for (const auto& pat : lex.blocklist)
        if (joined.find(" " + pat + " ") != std::string::npos)
            return {false, "blocklist:" + pat};
    return {true, "verb_and_noun"};
}

// ---------------------------------------------------------------------------
// Verb phrase extraction
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_determiner(const std::string& w) {
    static const std::set<std::string> kDets = {
        "the", "a", "an", "this", "that", "these", "those", "my",  "your",
        "his", "her", "its", "our", "their", "some", "any", "few", "it"};
    return kDets.count(w) > 0;
}

/// Length (in tokens) of the longest lexicon connector starting at `i`,
/// or 0 if none matches.
inline size_t connector_match(const std::vector<Token>& toks, size_t i,
                              const Lexicon& lex) {
    size_t best = 0;
    for (const auto& conn : lex.connectors) {
        std::vector<std::string> words;
        size_t p = 0;
        while (p < conn.size()) {
            size_t q = conn.find(' ', p);
            if (q == std::string::npos) q = conn.size();
            words.push_back(conn.substr(p, q - p));
            p = q + 1;
        }
        if (i + words.size() > toks.size()) continue;
        bool ok = true;
        for (size_t k = 0; k < words.size(); ++k)
            if (toks[i + k].lower != words[k]) {
                ok = false;
                break;
            }
        if (ok) best = std::max(best, words.size());
    }
    return best;
}

inline bool comma_between(const std::string& text, const Token& a, const Token& b) {
    for (size_t p = a.pos + a.len; p < b.pos; ++p)
        if (text[p] == ',') return true;
    return false;
}

}  // namespace detail

/// Left-to-right scan over the caption. Every matched verb yields one phrase:
/// the first lexicon noun before the next clause boundary becomes the object
/// (with an intervening preposition upgrading the pattern to V+Prep+N);
/// verbs with no object in scope are emitted as V-ing. Determiners and
/// unknown modifiers are dropped.
inline std::vector<VerbPhrase> extract_verb_phrases(const Caption& c, const Lexicon& lex) {
    std::vector<Token> toks = tokenize(c.text);
    std::vector<VerbPhrase> out;
    for (size_t i = 0; i < toks.size(); ++i) {
        std::string lemma;
        bool gerund = false;
        if (!lex.match_verb(toks[i].lower, lemma, gerund)) continue;

        VerbPhrase vp;
        vp.verb = lemma;
        vp.verb_token = static_cast<int>(i);
        vp.was_gerund = gerund;
        vp.order_index = static_cast<int>(out.size());

        std::string noun, prep;
        for (size_t j = i + 1; j < toks.size(); ++j) {
            if (detail::connector_match(toks, j, lex) > 0) break;
            std::string other_lemma;
            bool other_gerund = false;
            if (lex.match_verb(toks[j].lower, other_lemma, other_gerund)) break;
            if (detail::comma_between(c.text, toks[j - 1], toks[j])) break;
            if (detail::is_determiner(toks[j].lower)) continue;
            if (prep.empty() && noun.empty() && lex.is_prep(toks[j].lower)) {
                prep = toks[j].lower;
                continue;
            }
            if (lex.match_noun(toks[j].lower, other_lemma)) {
                noun = other_lemma;
                break;
            }
        }
        if (!noun.empty()) {
            vp.object = noun;
            if (!prep.empty()) {
                vp.prep = prep;
                vp.pattern = Pattern::VPrepN;
            } else {
                vp.pattern = Pattern::VN;
            }
        } else {
            vp.pattern = Pattern::Ving;
        }
        out.push_back(std::move(vp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Clause structure (for order-swapped negatives)
// ---------------------------------------------------------------------------

struct ClauseSplit {
    std::string prefix;                // raw bytes before the first clause
    std::vector<std::string> clauses;  // raw clause texts, action-bearing
    std::vector<std::string> joiners;  // raw bytes between consecutive clauses
    std::string suffix;                // raw bytes after the last clause
};

/// Splits a caption at lexicon connectors and at commas that precede a verb,
/// then merges any fragment without a verb into its neighbor so every clause
/// carries at least one action.
inline ClauseSplit split_clauses(const Caption& c, const Lexicon& lex) {
    std::vector<Token> toks = tokenize(c.text);
    if (toks.empty()) throw value_error("split_clauses: no tokens");

    // Segment boundaries as token ranges; joiner = raw bytes between segments.
    struct Seg {
        size_t first, last;  // token indices, inclusive
        bool has_verb = false;
    };
    std::vector<Seg> segs;
    std::vector<std::pair<size_t, size_t>> gaps;  // byte spans between segments

    size_t seg_start = 0;
    size_t i = 1;
    std::string lemma;
    bool gerund = false;
    while (i < toks.size()) {
        size_t conn_len = detail::connector_match(toks, i, lex);
        bool comma_verb = detail::comma_between(c.text, toks[i - 1], toks[i]) &&
                          lex.match_verb(toks[i].lower, lemma, gerund);
        if (conn_len > 0 && i > seg_start) {
            segs.push_back({seg_start, i - 1});
            size_t next = i + conn_len;
            if (next >= toks.size()) {  // trailing connector, fold back
                segs.back().last = toks.size() - 1;
                break;
            }
            gaps.emplace_back(toks[i - 1].pos + toks[i - 1].len, toks[next].pos);
            seg_start = next;
            i = next + 1;
            continue;
        }
        if (comma_verb && i > seg_start) {
            segs.push_back({seg_start, i - 1});
            gaps.emplace_back(toks[i - 1].pos + toks[i - 1].len, toks[i].pos);
            seg_start = i;
        }
        ++i;
    }
    if (seg_start < toks.size()) segs.push_back({seg_start, toks.size() - 1});

    for (auto& s : segs)
        for (size_t t = s.first; t <= s.last && !s.has_verb; ++t)
            s.has_verb = lex.match_verb(toks[t].lower, lemma, gerund);

    // Merge verb-less fragments into the previous clause (or the next one,
    // for a verb-less head).
    for (size_t k = 0; k < segs.size();) {
        if (segs[k].has_verb || segs.size() == 1) {
            ++k;
            continue;
        }
        if (k > 0) {
            segs[k - 1].last = segs[k].last;
            segs.erase(segs.begin() + k);
            gaps.erase(gaps.begin() + (k - 1));
        } else {
            segs[1].first = segs[0].first;
            segs[1].has_verb = segs[1].has_verb || segs[0].has_verb;
            segs.erase(segs.begin());
            gaps.erase(gaps.begin());
        }
    }

    ClauseSplit out;
    out.prefix = c.text.substr(0, toks.front().pos);
    size_t tail = toks[segs.back().last].pos + toks[segs.back().last].len;
    out.suffix = c.text.substr(tail);
    for (size_t k = 0; k < segs.size(); ++k) {
        size_t b = toks[segs[k].first].pos;
        size_t e = toks[segs[k].last].pos + toks[segs[k].last].len;
        out.clauses.push_back(c.text.substr(b, e - b));
        if (k + 1 < segs.size())
            out.joiners.push_back(c.text.substr(gaps[k].first, gaps[k].second - gaps[k].first));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hard negatives
// ---------------------------------------------------------------------------

namespace detail {

inline uint64_t factorial(size_t n) {
    uint64_t f = 1;
    for (size_t i = 2; i <= n; ++i) f *= i;
    return f;
}

/// Lehmer unranking: rank 0 is the identity permutation.
inline std::vector<size_t> unrank_permutation(size_t n, uint64_t rank) {
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<size_t> perm;
    for (size_t i = n; i > 0; --i) {
        uint64_t f = factorial(i - 1);
        size_t idx = static_cast<size_t>(rank / f);
        rank %= f;
        perm.push_back(pool[idx]);
        pool.erase(pool.begin() + idx);
    }
    return perm;
}

}  // namespace detail

/// Verb-altered negative: one verb is swapped for a uniformly sampled verb
/// from a different semantic cluster; every other byte of the caption is
/// untouched. Deterministic given the seed.
inline HardNegative gen_verb_altered(const Caption& c, const std::vector<VerbPhrase>& phrases,
                                     const Lexicon& lex, uint64_t rng_seed) {
    if (phrases.empty()) throw gen_error("verb_altered: caption has no extracted phrases");
    if (lex.clusters.size() < 2)
        throw gen_error("verb_altered: no alternative cluster available");
    Rng rng(rng_seed);
    const VerbPhrase& vp = phrases[rng.bounded(phrases.size())];
    auto cit = lex.verb_cluster.find(vp.verb);
    if (cit == lex.verb_cluster.end())
        throw gen_error("verb_altered: verb '" + vp.verb + "' not in any cluster");
    std::vector<int> others;
    for (size_t ci = 0; ci < lex.clusters.size(); ++ci)
        if (static_cast<int>(ci) != cit->second) others.push_back(static_cast<int>(ci));
    int cluster = others[rng.bounded(others.size())];
    const auto& verbs = lex.clusters[cluster].second;
    const std::string& replacement = verbs[rng.bounded(verbs.size())];

    std::vector<Token> toks = tokenize(c.text);
    const Token& vt = toks.at(static_cast<size_t>(vp.verb_token));
    std::string surface = vp.was_gerund ? gerund_form(replacement) : replacement;
    std::string text = c.text.substr(0, vt.pos) + surface + c.text.substr(vt.pos + vt.len);
    return {c.id, NegKind::VerbAltered, text};
}

/// Order-swapped negative: action clauses re-emitted in a uniformly sampled
/// non-identity permutation with all joiner bytes kept in place, so the token
/// multiset is exactly preserved.
inline HardNegative gen_order_swapped(const Caption& c, const std::vector<VerbPhrase>& phrases,
                                      const Lexicon& lex, uint64_t rng_seed) {
    if (phrases.size() < 2)
        throw gen_error("order_swapped: single-action caption");
    ClauseSplit cs = split_clauses(c, lex);
    size_t n = cs.clauses.size();
    if (n < 2) throw gen_error("order_swapped: clauses are not separable");
    if (n > 10) throw resource_error("order_swapped: too many clauses");

    uint64_t total = detail::factorial(n);
    Rng rng(rng_seed);
    uint64_t first = 1 + rng.bounded(total - 1);
    for (uint64_t t = 0; t + 1 < total; ++t) {
        uint64_t rank = 1 + (first - 1 + t) % (total - 1);
        std::vector<size_t> perm = detail::unrank_permutation(n, rank);
        std::string text = cs.prefix;
        for (size_t k = 0; k < n; ++k) {
            text += cs.clauses[perm[k]];
            if (k + 1 < n) text += cs.joiners[k];
        }
        text += cs.suffix;
        if (text != c.text) return {c.id, NegKind::OrderSwapped, text};
    }
    throw gen_error("order_swapped: all permutations reproduce the source text");
}

// ---------------------------------------------------------------------------
// Pipeline records and JSONL
// ---------------------------------------------------------------------------

struct CurationConfig {
    uint64_t seed = 0;
    bool verb_altered = true;
    bool order_swapped = true;
    int per_kind = 1;
};

struct CuratedRecord {
    Caption caption;
    std::vector<VerbPhrase> phrases;
    std::vector<HardNegative> negatives;
};

/// Filter -> parse -> negate, one caption at a time. Pure given
/// (captions, lexicon, config); per-caption RNG streams are derived from the
/// global seed and the caption id, so output is order-independent and
/// byte-reproducible.
inline std::vector<CuratedRecord> curate_captions(const std::vector<Caption>& captions,
                                                  const Lexicon& lex,
                                                  const CurationConfig& cfg) {
    std::vector<CuratedRecord> out;
    for (const auto& c : captions) {
        c.validate();
        FilterResult fr = filter_caption(c, lex);
        if (!fr.keep) continue;
        CuratedRecord rec;
        rec.caption = c;
        rec.phrases = extract_verb_phrases(c, lex);
        if (rec.phrases.empty())
            throw value_error("curate: filter kept caption " + c.id +
                              " but no phrases extracted (filter and parser disagree)");
        uint64_t cap_seed = derive_seed(cfg.seed, fnv1a64(c.id));
        std::set<std::string> seen;
        auto emit = [&](NegKind kind, int idx) {
            uint64_t s = derive_seed(cap_seed, kind == NegKind::VerbAltered ? 1 : 2, idx);
            try {
                HardNegative hn = kind == NegKind::VerbAltered
                                      ? gen_verb_altered(c, rec.phrases, lex, s)
                                      : gen_order_swapped(c, rec.phrases, lex, s);
                if (seen.insert(hn.text).second) rec.negatives.push_back(std::move(hn));
            } catch (const gen_error&) {
                // This caption cannot support the kind; skip it.
            }
        };
        for (int i = 0; i < cfg.per_kind; ++i) {
            if (cfg.verb_altered) emit(NegKind::VerbAltered, i);
            if (cfg.order_swapped) emit(NegKind::OrderSwapped, i);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline Caption caption_from_json(const nlohmann::ordered_json& j) {
    Caption c;
    try {
        c.id = j.at("id").get<std::string>();
        c.clip_id = j.at("clip_id").get<std::string>();
        c.text = j.at("text").get<std::string>();
        c.start = j.at("start").get<double>();
        c.end = j.at("end").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("caption record: ") + e.what());
    }
    return c;
}

inline nlohmann::ordered_json caption_to_json(const Caption& c) {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["clip_id"] = c.clip_id;
    j["text"] = c.text;
    j["start"] = c.start;
    j["end"] = c.end;
    return j;
}

inline nlohmann::ordered_json curated_to_json(const CuratedRecord& r) {
    nlohmann::ordered_json j = caption_to_json(r.caption);
    nlohmann::ordered_json phrases = nlohmann::ordered_json::array();
    for (const auto& p : r.phrases) {
        nlohmann::ordered_json pj;
        pj["verb"] = p.verb;
        pj["pattern"] = pattern_str(p.pattern);
        pj["object"] = p.object.empty() ? nlohmann::ordered_json(nullptr)
                                        : nlohmann::ordered_json(p.object);
        pj["prep"] = p.prep.empty() ? nlohmann::ordered_json(nullptr)
                                    : nlohmann::ordered_json(p.prep);
        pj["order_index"] = p.order_index;
        phrases.push_back(pj);
    }
    j["phrases"] = phrases;
    nlohmann::ordered_json negs = nlohmann::ordered_json::array();
    for (const auto& n : r.negatives) {
        nlohmann::ordered_json nj;
        nj["kind"] = neg_kind_str(n.kind);
        nj["text"] = n.text;
        negs.push_back(nj);
    }
    j["negatives"] = negs;
    return j;
}

inline std::vector<Caption> read_captions_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open captions file: " + path);
    std::vector<Caption> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(caption_from_json(nlohmann::ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw io_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_curated_jsonl(const std::string& path,
                                const std::vector<CuratedRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open output file: " + path);
    for (const auto& r : records) out << curated_to_json(r).dump() << "\n";
}

}  // namespace actalign
