#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/curation.hpp"
#include "actalign/error.hpp"
#include "actalign/kvconfig.hpp"
#include "actalign/lexicon.hpp"
#include "actalign/rng.hpp"

namespace actalign {

// Synthetic "instructional videos" generated directly at the embedding level:
// each clip has a known action program, a templated caption, and a
// controllable static-object channel. Object prototypes are constant within a
// step while motion prototypes sweep a phase arc, so with lambda_obj = 1 the
// frames literally contain nothing but object identity.

struct SynthConfig {
    int t_frames = 16;
    int n_patches = 4;
    int c_dim = 32;
    double noise_sigma = 0.05;
    double lambda_obj = 0.7;
    int m_max = 4;
    int train_clips = 2000;
    int eval_clips = 300;
    int semantic_items = 200;
    int logic_items = 200;
    int min_pool = 2;
    int hn_per_kind = 1;
    bool logic_same_object = true;  // order MCQs come from single-object programs

    static SynthConfig from_kv(const KvConfig& kv) {
        kv.restrict_keys({"t_frames", "n_patches", "c_dim", "noise_sigma", "lambda_obj",
                          "m_max", "train_clips", "eval_clips", "semantic_items",
                          "logic_items", "min_pool", "hn_per_kind", "logic_same_object",
                          "seed"});
        SynthConfig c;
        c.t_frames = static_cast<int>(kv.get_int("t_frames", c.t_frames));
        c.n_patches = static_cast<int>(kv.get_int("n_patches", c.n_patches));
        c.c_dim = static_cast<int>(kv.get_int("c_dim", c.c_dim));
        c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
        c.lambda_obj = kv.get_double("lambda_obj", c.lambda_obj);
        c.m_max = static_cast<int>(kv.get_int("m_max", c.m_max));
        c.train_clips = static_cast<int>(kv.get_int("train_clips", c.train_clips));
        c.eval_clips = static_cast<int>(kv.get_int("eval_clips", c.eval_clips));
        c.semantic_items = static_cast<int>(kv.get_int("semantic_items", c.semantic_items));
        c.logic_items = static_cast<int>(kv.get_int("logic_items", c.logic_items));
        c.min_pool = static_cast<int>(kv.get_int("min_pool", c.min_pool));
        c.hn_per_kind = static_cast<int>(kv.get_int("hn_per_kind", c.hn_per_kind));
        c.logic_same_object = kv.get_bool("logic_same_object", c.logic_same_object);
        c.validate();
        return c;
    }

    void validate() const {
        if (t_frames < 1 || n_patches < 1 || c_dim < 1)
            throw config_error("synth: t_frames, n_patches, c_dim must be positive");
        if (lambda_obj < 0.0 || lambda_obj > 1.0)
            throw config_error("synth: lambda_obj must be in [0, 1]");
        if (noise_sigma < 0.0) throw config_error("synth: noise_sigma must be >= 0");
        if (m_max < 1 || m_max > t_frames)
            throw config_error("synth: m_max must be in [1, t_frames]");
        if (min_pool < 2) throw config_error("synth: min_pool must be >= 2");
        if (hn_per_kind < 0) throw config_error("synth: hn_per_kind must be >= 0");
    }
};

struct ActionStep {
    int verb = 0;    // index into the verb table
    int object = 0;  // index into the noun table
};

struct ActionProgram {
    std::vector<ActionStep> steps;
};

struct SyntheticClip {
    Caption caption;  // caption.id == clip id
    std::vector<VerbPhrase> phrases;
    std::vector<HardNegative> negatives;
    ActionProgram program;
    std::vector<std::pair<int, int>> segment_bounds;  // [start, end) frames per step
    double lambda_obj = 0.0;
    int t = 0, n = 0, c = 0;
    std::string split;
    std::vector<double> frames;  // t*n*c row-major
};

struct McqItem {
    std::string clip_id;
    std::vector<std::string> candidates;
    int answer = 0;
};

struct DynPool {
    std::string pool_id;
    std::string object;
    std::vector<std::pair<std::string, std::string>> items;  // (clip_id, caption text)
};

struct Dataset {
    SynthConfig cfg;
    Lexicon lexicon;
    std::vector<SyntheticClip> clips;
    std::vector<McqItem> semantic;
    std::vector<McqItem> logic;
    std::vector<DynPool> dynamics;
};

// ---------------------------------------------------------------------------
// Prototypes
// ---------------------------------------------------------------------------

/// Fixed random geometry of the synthetic world: one unit vector per object,
/// and an orthonormal basis pair per verb spanned by a phase arc.
struct PrototypeBank {
    int c_dim = 0;
    std::vector<std::vector<double>> objects;
    std::vector<std::array<std::vector<double>, 2>> verbs;

    static PrototypeBank build(int n_verbs, int n_objects, int c_dim, uint64_t seed) {
        PrototypeBank bank;
        bank.c_dim = c_dim;
        Rng rng(derive_seed(seed, 0xb00c));
        auto unit = [&]() {
            std::vector<double> v(c_dim);
            double norm = 0.0;
            for (auto& x : v) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (auto& x : v) x /= norm;
            return v;
        };
        for (int o = 0; o < n_objects; ++o) bank.objects.push_back(unit());
        for (int v = 0; v < n_verbs; ++v) {
            std::vector<double> u = unit();
            std::vector<double> w = unit();
            double dot = 0.0;
            for (int k = 0; k < c_dim; ++k) dot += u[k] * w[k];
            double norm = 0.0;
            for (int k = 0; k < c_dim; ++k) {
                w[k] -= dot * u[k];
                norm += w[k] * w[k];
            }
            norm = std::sqrt(norm);
            for (auto& x : w) x /= norm;
            bank.verbs.push_back({std::move(u), std::move(w)});
        }
        return bank;
    }

    /// Phase-dependent motion feature: sweeps a quarter arc from u to w as the
    /// phase runs over the segment, so temporal order is visible only through
    /// the frame dynamics.
    std::vector<double> motion(int verb, double phase) const {
        const auto& [u, w] = verbs.at(static_cast<size_t>(verb));
        double a = std::cos(0.5 * M_PI * phase), b = std::sin(0.5 * M_PI * phase);
        std::vector<double> out(c_dim);
        for (int k = 0; k < c_dim; ++k) out[k] = a * u[k] + b * w[k];
        return out;
    }

    std::vector<double> blend(int verb, int object, double phase, double lambda) const {
        std::vector<double> m = motion(verb, phase);
        const auto& o = objects.at(static_cast<size_t>(object));
        for (int k = 0; k < c_dim; ++k) m[k] = lambda * o[k] + (1.0 - lambda) * m[k];
        return m;
    }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Even partition of [0, t) into m contiguous segments (earlier segments take
/// the remainder).
inline std::vector<std::pair<int, int>> even_segments(int t, int m) {
    std::vector<std::pair<int, int>> seg;
    int base = t / m, rem = t % m, cur = 0;
    for (int i = 0; i < m; ++i) {
        int len = base + (i < rem ? 1 : 0);
        seg.emplace_back(cur, cur + len);
        cur += len;
    }
    return seg;
}

inline double segment_phase(int t, int begin, int end) {
    int len = end - begin;
    return len <= 1 ? 0.0
                    : static_cast<double>(t - begin) / static_cast<double>(len - 1);
}

/// Renders the program through the caption template and returns the caption
/// text plus the names used, in order.
inline std::string render_caption_text(const ActionProgram& program,
                                       const std::vector<std::string>& verb_names,
                                       const std::vector<std::string>& noun_names) {
    std::string text;
    for (size_t i = 0; i < program.steps.size(); ++i) {
        if (i) text += " and then ";
        text += verb_names.at(static_cast<size_t>(program.steps[i].verb)) + " the " +
                noun_names.at(static_cast<size_t>(program.steps[i].object));
    }
    return text;
}

/// Frame features for one program under the object/motion blend.
inline SyntheticClip generate_clip(const ActionProgram& program, const SynthConfig& cfg,
                                   const PrototypeBank& bank, uint64_t rng_seed) {
    int m = static_cast<int>(program.steps.size());
    if (m < 1) throw value_error("generate_clip: empty program");
    if (cfg.t_frames < m)
        throw value_error("generate_clip: infeasible program, " + std::to_string(m) +
                          " steps in " + std::to_string(cfg.t_frames) + " frames");
    SyntheticClip clip;
    clip.program = program;
    clip.segment_bounds = even_segments(cfg.t_frames, m);
    clip.lambda_obj = cfg.lambda_obj;
    clip.t = cfg.t_frames;
    clip.n = cfg.n_patches;
    clip.c = cfg.c_dim;
    clip.frames.resize(static_cast<size_t>(cfg.t_frames) * cfg.n_patches * cfg.c_dim);

    Rng rng(rng_seed);
    for (int step = 0; step < m; ++step) {
        auto [b, e] = clip.segment_bounds[step];
        for (int t = b; t < e; ++t) {
            std::vector<double> base =
                bank.blend(program.steps[step].verb, program.steps[step].object,
                           segment_phase(t, b, e), cfg.lambda_obj);
            for (int p = 0; p < cfg.n_patches; ++p) {
                size_t off =
                    (static_cast<size_t>(t) * cfg.n_patches + p) * cfg.c_dim;
                for (int k = 0; k < cfg.c_dim; ++k)
                    clip.frames[off + k] =
                        base[k] + cfg.noise_sigma * rng.normal();
            }
        }
    }
    return clip;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> lexicon_verb_table(const Lexicon& lex) {
    std::vector<std::string> verbs;
    for (const auto& [name, vs] : lex.clusters)
        verbs.insert(verbs.end(), vs.begin(), vs.end());
    return verbs;
}

inline ActionProgram sample_program(Rng& rng, int m_max, int n_verbs, int n_objects) {
    ActionProgram p;
    int m = 1 + static_cast<int>(rng.bounded(static_cast<uint64_t>(m_max)));
    std::set<std::pair<int, int>> used;
    while (static_cast<int>(p.steps.size()) < m) {
        ActionStep s;
        s.verb = static_cast<int>(rng.bounded(static_cast<uint64_t>(n_verbs)));
        s.object = static_cast<int>(rng.bounded(static_cast<uint64_t>(n_objects)));
        if (used.insert({s.verb, s.object}).second) p.steps.push_back(s);
    }
    return p;
}

/// Multi-step program over a single object with pairwise-distinct verbs:
/// ordering such a clip is impossible through object identity alone.
inline ActionProgram sample_same_object_program(Rng& rng, int m_max, int n_verbs,
                                                int n_objects) {
    ActionProgram p;
    int lo = std::min(3, m_max);
    int m = lo + static_cast<int>(rng.bounded(static_cast<uint64_t>(m_max - lo + 1)));
    int object = static_cast<int>(rng.bounded(static_cast<uint64_t>(n_objects)));
    std::set<int> used;
    while (static_cast<int>(p.steps.size()) < m) {
        int verb = static_cast<int>(rng.bounded(static_cast<uint64_t>(n_verbs)));
        if (used.insert(verb).second) p.steps.push_back({verb, object});
    }
    return p;
}

}  // namespace detail

/// Builds the full synthetic corpus: train/eval clips with curated phrases and
/// hard negatives, verb-discrimination MCQs (10 candidates sharing objects),
/// order MCQs (3-4 candidates over the same vocabulary), and object-centric
/// retrieval pools. Everything is a pure function of (cfg, seed).
inline Dataset build_dataset(const SynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    ds.lexicon = builtin_lexicon();
    std::vector<std::string> verb_names = detail::lexicon_verb_table(ds.lexicon);
    const std::vector<std::string>& noun_names = ds.lexicon.nouns;
    int n_verbs = static_cast<int>(verb_names.size());
    int n_objects = static_cast<int>(noun_names.size());

    // Nine distinct replacement verbs must exist outside any single cluster.
    size_t max_cluster = 0;
    for (const auto& [name, vs] : ds.lexicon.clusters)
        max_cluster = std::max(max_cluster, vs.size());
    if (verb_names.size() - max_cluster < 9)
        throw config_error("build_dataset: lexicon cannot mint 9 distinct verb-altered "
                           "negatives per item");

    PrototypeBank bank = PrototypeBank::build(n_verbs, n_objects, cfg.c_dim, seed);

    auto make_clip = [&](const std::string& id, const std::string& split,
                         bool same_object) {
        Rng prog_rng(derive_seed(seed, fnv1a64(id), 1));
        ActionProgram program =
            same_object
                ? detail::sample_same_object_program(prog_rng, cfg.m_max, n_verbs,
                                                     n_objects)
                : detail::sample_program(prog_rng, cfg.m_max, n_verbs, n_objects);
        SyntheticClip clip =
            generate_clip(program, cfg, bank, derive_seed(seed, fnv1a64(id), 2));
        clip.caption.id = id;
        clip.caption.clip_id = id;
        clip.caption.text = render_caption_text(program, verb_names, noun_names);
        clip.caption.start = 0.0;
        clip.caption.end = static_cast<double>(cfg.t_frames);
        clip.split = split;
        clip.phrases = extract_verb_phrases(clip.caption, ds.lexicon);
        if (clip.phrases.size() != program.steps.size())
            throw value_error("build_dataset: template round-trip failed for " + id);
        uint64_t cap_seed = derive_seed(seed, fnv1a64(id), 3);
        std::set<std::string> seen;
        for (int r = 0; r < cfg.hn_per_kind; ++r) {
            try {
                HardNegative hn = gen_verb_altered(clip.caption, clip.phrases, ds.lexicon,
                                                   derive_seed(cap_seed, 1, r));
                if (seen.insert(hn.text).second) clip.negatives.push_back(std::move(hn));
            } catch (const gen_error&) {
            }
            try {
                HardNegative hn = gen_order_swapped(clip.caption, clip.phrases, ds.lexicon,
                                                    derive_seed(cap_seed, 2, r));
                if (seen.insert(hn.text).second) clip.negatives.push_back(std::move(hn));
            } catch (const gen_error&) {
            }
        }
        return clip;
    };

    char idbuf[32];
    for (int i = 0; i < cfg.train_clips; ++i) {
        std::snprintf(idbuf, sizeof(idbuf), "train_%06d", i);
        ds.clips.push_back(make_clip(idbuf, "train", false));
    }
    std::set<std::string> logic_sources;
    for (int i = 0; i < cfg.eval_clips; ++i) {
        std::snprintf(idbuf, sizeof(idbuf), "eval_%06d", i);
        bool same_object = cfg.logic_same_object && i % 2 == 1;
        ds.clips.push_back(make_clip(idbuf, "eval", same_object));
        if (same_object || !cfg.logic_same_object) logic_sources.insert(idbuf);
    }

    // Verb-discrimination MCQs: 1 positive + 9 verb-altered negatives over
    // identical objects, candidates shuffled.
    int made = 0;
    for (const auto& clip : ds.clips) {
        if (clip.split != "eval" || made >= cfg.semantic_items) continue;
        Rng rng(derive_seed(seed, fnv1a64(clip.caption.id), 10));
        int step = static_cast<int>(rng.bounded(clip.program.steps.size()));
        int true_verb = clip.program.steps[step].verb;
        int true_cluster = ds.lexicon.verb_cluster.at(verb_names[true_verb]);
        std::vector<int> alternatives;
        for (int v = 0; v < n_verbs; ++v)
            if (ds.lexicon.verb_cluster.at(verb_names[v]) != true_cluster)
                alternatives.push_back(v);
        rng.shuffle(alternatives);
        McqItem item;
        item.clip_id = clip.caption.id;
        item.candidates.push_back(clip.caption.text);
        for (int k = 0; k < 9; ++k) {
            ActionProgram alt = clip.program;
            alt.steps[step].verb = alternatives[k];
            item.candidates.push_back(render_caption_text(alt, verb_names, noun_names));
        }
        std::vector<int> order(item.candidates.size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
        rng.shuffle(order);
        std::vector<std::string> shuffled;
        for (int k : order) {
            if (k == 0) item.answer = static_cast<int>(shuffled.size());
            shuffled.push_back(item.candidates[k]);
        }
        item.candidates = std::move(shuffled);
        ds.semantic.push_back(std::move(item));
        ++made;
    }

    // Order MCQs from multi-step clips: 2-3 order-swapped negatives.
    made = 0;
    for (const auto& clip : ds.clips) {
        if (clip.split != "eval" || made >= cfg.logic_items) continue;
        if (!logic_sources.count(clip.caption.id)) continue;
        size_t m = clip.program.steps.size();
        if (m < 3) continue;
        Rng rng(derive_seed(seed, fnv1a64(clip.caption.id), 11));
        int want = 2 + static_cast<int>(rng.bounded(2));
        uint64_t total = 1;
        for (size_t f = 2; f <= m; ++f) total *= f;
        std::vector<uint64_t> ranks;
        for (uint64_t rk = 1; rk < total; ++rk) ranks.push_back(rk);
        rng.shuffle(ranks);
        McqItem item;
        item.clip_id = clip.caption.id;
        item.candidates.push_back(clip.caption.text);
        for (uint64_t rk : ranks) {
            if (static_cast<int>(item.candidates.size()) > want) break;
            auto perm = detail::unrank_permutation(m, rk);
            ActionProgram alt;
            for (size_t k = 0; k < m; ++k) alt.steps.push_back(clip.program.steps[perm[k]]);
            item.candidates.push_back(render_caption_text(alt, verb_names, noun_names));
        }
        std::vector<int> order(item.candidates.size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
        rng.shuffle(order);
        std::vector<std::string> shuffled;
        for (int k : order) {
            if (k == 0) item.answer = static_cast<int>(shuffled.size());
            shuffled.push_back(item.candidates[k]);
        }
        item.candidates = std::move(shuffled);
        ds.logic.push_back(std::move(item));
        ++made;
    }

    // Object-centric retrieval pools over eval clips, grouped by the primary
    // (first-step) object.
    std::map<int, std::vector<const SyntheticClip*>> by_object;
    for (const auto& clip : ds.clips)
        if (clip.split == "eval")
            by_object[clip.program.steps[0].object].push_back(&clip);
    for (const auto& [obj, members] : by_object) {
        if (static_cast<int>(members.size()) < cfg.min_pool) continue;
        DynPool pool;
        pool.object = noun_names[static_cast<size_t>(obj)];
        pool.pool_id = "pool_" + pool.object;
        for (const auto* clip : members)
            pool.items.emplace_back(clip->caption.id, clip->caption.text);
        ds.dynamics.push_back(std::move(pool));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: clips.jsonl + frames.bin + lexicon.json + pools/*.jsonl
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json clip_to_json(const SyntheticClip& clip, size_t frame_offset) {
    nlohmann::ordered_json j = curated_to_json(
        CuratedRecord{clip.caption, clip.phrases, clip.negatives});
    nlohmann::ordered_json prog = nlohmann::ordered_json::array();
    for (const auto& s : clip.program.steps)
        prog.push_back({{"verb", s.verb}, {"object", s.object}});
    j["program"] = prog;
    nlohmann::ordered_json segs = nlohmann::ordered_json::array();
    for (auto [b, e] : clip.segment_bounds) segs.push_back({b, e});
    j["segment_bounds"] = segs;
    j["lambda_obj"] = clip.lambda_obj;
    j["t"] = clip.t;
    j["n"] = clip.n;
    j["c"] = clip.c;
    j["split"] = clip.split;
    j["frames_offset"] = frame_offset;
    j["frames_len"] = clip.frames.size();
    return j;
}

inline nlohmann::ordered_json mcq_to_json(const McqItem& item) {
    nlohmann::ordered_json j;
    j["clip_id"] = item.clip_id;
    j["candidates"] = item.candidates;
    j["answer"] = item.answer;
    return j;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "pools");

    std::ofstream clips(fs::path(dir) / "clips.jsonl", std::ios::binary);
    std::ofstream frames(fs::path(dir) / "frames.bin", std::ios::binary);
    if (!clips || !frames) throw io_error("cannot write dataset to " + dir);
    size_t offset = 0;
    for (const auto& clip : ds.clips) {
        clips << detail::clip_to_json(clip, offset).dump() << "\n";
        for (double v : clip.frames) {
            float f = static_cast<float>(v);
            frames.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
        offset += clip.frames.size();
    }

    std::ofstream lexf(fs::path(dir) / "lexicon.json", std::ios::binary);
    lexf << lexicon_to_json(ds.lexicon).dump(2) << "\n";

    auto write_mcq = [&](const std::string& name, const std::vector<McqItem>& items) {
        std::ofstream out(fs::path(dir) / "pools" / name, std::ios::binary);
        for (const auto& it : items) out << detail::mcq_to_json(it).dump() << "\n";
    };
    write_mcq("semantic.jsonl", ds.semantic);
    write_mcq("logic.jsonl", ds.logic);

    std::ofstream dyn(fs::path(dir) / "pools" / "dynamics.jsonl", std::ios::binary);
    for (const auto& pool : ds.dynamics) {
        nlohmann::ordered_json j;
        j["pool_id"] = pool.pool_id;
        j["object"] = pool.object;
        nlohmann::ordered_json items = nlohmann::ordered_json::array();
        for (const auto& [cid, text] : pool.items)
            items.push_back({{"clip_id", cid}, {"text", text}});
        j["items"] = items;
        dyn << j.dump() << "\n";
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.lexicon = load_lexicon((fs::path(dir) / "lexicon.json").string());

    std::ifstream frames(fs::path(dir) / "frames.bin", std::ios::binary);
    if (!frames) throw io_error("cannot open frames.bin in " + dir);
    frames.seekg(0, std::ios::end);
    size_t bytes = static_cast<size_t>(frames.tellg());
    if (bytes % sizeof(float) != 0) throw io_error("frames.bin truncated in " + dir);
    std::vector<float> all(bytes / sizeof(float));
    frames.seekg(0);
    frames.read(reinterpret_cast<char*>(all.data()), static_cast<std::streamsize>(bytes));

    std::ifstream clips(fs::path(dir) / "clips.jsonl");
    if (!clips) throw io_error("cannot open clips.jsonl in " + dir);
    std::string line;
    size_t lineno = 0;
    while (std::getline(clips, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw io_error("clips.jsonl:" + std::to_string(lineno) + ": " + e.what());
        }
        SyntheticClip clip;
        clip.caption = caption_from_json(j);
        for (const auto& pj : j.at("phrases")) {
            VerbPhrase p;
            p.verb = pj.at("verb").get<std::string>();
            std::string pat = pj.at("pattern").get<std::string>();
            p.pattern = pat == "V+N" ? Pattern::VN
                                     : (pat == "V-ing" ? Pattern::Ving : Pattern::VPrepN);
            if (!pj.at("object").is_null()) p.object = pj.at("object").get<std::string>();
            if (!pj.at("prep").is_null()) p.prep = pj.at("prep").get<std::string>();
            p.order_index = pj.at("order_index").get<int>();
            clip.phrases.push_back(std::move(p));
        }
        for (const auto& nj : j.at("negatives")) {
            HardNegative hn;
            hn.source_id = clip.caption.id;
            hn.kind = nj.at("kind").get<std::string>() == "verb_altered"
                          ? NegKind::VerbAltered
                          : NegKind::OrderSwapped;
            hn.text = nj.at("text").get<std::string>();
            clip.negatives.push_back(std::move(hn));
        }
        for (const auto& sj : j.at("program"))
            clip.program.steps.push_back(
                {sj.at("verb").get<int>(), sj.at("object").get<int>()});
        for (const auto& bj : j.at("segment_bounds"))
            clip.segment_bounds.emplace_back(bj.at(0).get<int>(), bj.at(1).get<int>());
        clip.lambda_obj = j.at("lambda_obj").get<double>();
        clip.t = j.at("t").get<int>();
        clip.n = j.at("n").get<int>();
        clip.c = j.at("c").get<int>();
        clip.split = j.at("split").get<std::string>();
        size_t off = j.at("frames_offset").get<size_t>();
        size_t len = j.at("frames_len").get<size_t>();
        if (off + len > all.size()) throw io_error("frames.bin too short for " +
                                                   clip.caption.id);
        clip.frames.assign(all.begin() + off, all.begin() + off + len);
        ds.clips.push_back(std::move(clip));
    }

    auto read_mcq = [&](const std::string& name, std::vector<McqItem>& out) {
        std::ifstream in(fs::path(dir) / "pools" / name);
        if (!in) throw io_error("cannot open pools/" + name + " in " + dir);
        std::string l;
        while (std::getline(in, l)) {
            if (l.find_first_not_of(" \t\r") == std::string::npos) continue;
            auto j = nlohmann::ordered_json::parse(l);
            McqItem item;
            item.clip_id = j.at("clip_id").get<std::string>();
            item.candidates = j.at("candidates").get<std::vector<std::string>>();
            item.answer = j.at("answer").get<int>();
            out.push_back(std::move(item));
        }
    };
    read_mcq("semantic.jsonl", ds.semantic);
    read_mcq("logic.jsonl", ds.logic);

    std::ifstream dyn(fs::path(dir) / "pools" / "dynamics.jsonl");
    if (!dyn) throw io_error("cannot open pools/dynamics.jsonl in " + dir);
    while (std::getline(dyn, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::ordered_json::parse(line);
        DynPool pool;
        pool.pool_id = j.at("pool_id").get<std::string>();
        pool.object = j.at("object").get<std::string>();
        for (const auto& ij : j.at("items"))
            pool.items.emplace_back(ij.at("clip_id").get<std::string>(),
                                    ij.at("text").get<std::string>());
        ds.dynamics.push_back(std::move(pool));
    }
    return ds;
}

}  // namespace actalign
