#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/align.hpp"
#include "actalign/error.hpp"
#include "actalign/synthgen.hpp"
#include "actalign/trainer.hpp"

namespace actalign {

// Evaluation harness for the three tasks: verb-discrimination MCQ, order MCQ,
// and within-pool retrieval. Candidates are scored against a read-only model
// snapshot; ranking is deterministic with ties broken by candidate index.

// ---------------------------------------------------------------------------
// Ranking and metrics
// ---------------------------------------------------------------------------

/// Candidate indices sorted by descending score, ties by original index.
inline std::vector<int> rank_candidates(const std::vector<double>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    return order;
}

/// 1-based rank of the answer candidate under the deterministic ordering.
inline int answer_rank(const std::vector<double>& scores, int answer) {
    if (answer < 0 || answer >= static_cast<int>(scores.size()))
        throw value_error("answer_rank: answer index out of range");
    std::vector<int> order = rank_candidates(scores);
    for (size_t r = 0; r < order.size(); ++r)
        if (order[r] == answer) return static_cast<int>(r) + 1;
    throw value_error("answer_rank: unreachable");
}

struct McqMetrics {
    double r1 = 0.0;   // percent
    double r5 = 0.0;
    double r10 = 0.0;
    double mr_median = 0.0;  // headline mean-rank figure
    double mr_mean = 0.0;
    double acc = 0.0;  // percent, rank-1 accuracy
    int items = 0;
};

inline McqMetrics mcq_metrics(const std::vector<int>& answer_ranks) {
    if (answer_ranks.empty()) throw value_error("mcq_metrics: empty result set");
    McqMetrics m;
    m.items = static_cast<int>(answer_ranks.size());
    double n = static_cast<double>(answer_ranks.size());
    double mean = 0.0;
    for (int r : answer_ranks) {
        if (r < 1) throw value_error("mcq_metrics: ranks are 1-based");
        if (r <= 1) m.r1 += 1;
        if (r <= 5) m.r5 += 1;
        if (r <= 10) m.r10 += 1;
        mean += r;
    }
    m.r1 = 100.0 * m.r1 / n;
    m.r5 = 100.0 * m.r5 / n;
    m.r10 = 100.0 * m.r10 / n;
    m.acc = m.r1;
    m.mr_mean = mean / n;
    std::vector<int> sorted = answer_ranks;
    std::sort(sorted.begin(), sorted.end());
    size_t mid = sorted.size() / 2;
    m.mr_median = sorted.size() % 2 == 1
                      ? sorted[mid]
                      : (sorted[mid - 1] + sorted[mid]) / 2.0;
    return m;
}

struct PoolMetrics {
    std::string pool_id;
    int clip_count = 0;
    double t2v_r1 = 0, t2v_r5 = 0, t2v_r10 = 0;
    double v2t_r1 = 0, v2t_r5 = 0, v2t_r10 = 0;
};

/// Within-pool retrieval from a full score matrix (rows = clips, cols =
/// captions, pair i matches i). Text-to-video ranks the true clip within a
/// column; video-to-text ranks the true caption within a row.
inline PoolMetrics pool_metrics(const std::vector<std::vector<double>>& scores) {
    size_t n = scores.size();
    if (n < 2) throw value_error("pool_metrics: pool needs at least 2 pairs");
    for (const auto& row : scores)
        if (row.size() != n) throw dim_error("pool_metrics: score matrix must be square");
    PoolMetrics p;
    p.clip_count = static_cast<int>(n);
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> row = scores[i];
        int vr = answer_rank(row, static_cast<int>(i));
        if (vr <= 1) p.v2t_r1 += 1;
        if (vr <= 5) p.v2t_r5 += 1;
        if (vr <= 10) p.v2t_r10 += 1;

        std::vector<double> col(n);
        for (size_t r = 0; r < n; ++r) col[r] = scores[r][i];
        int tr = answer_rank(col, static_cast<int>(i));
        if (tr <= 1) p.t2v_r1 += 1;
        if (tr <= 5) p.t2v_r5 += 1;
        if (tr <= 10) p.t2v_r10 += 1;
    }
    double dn = static_cast<double>(n);
    p.t2v_r1 *= 100.0 / dn;
    p.t2v_r5 *= 100.0 / dn;
    p.t2v_r10 *= 100.0 / dn;
    p.v2t_r1 *= 100.0 / dn;
    p.v2t_r5 *= 100.0 / dn;
    p.v2t_r10 *= 100.0 / dn;
    return p;
}

struct RetrievalAggregate {
    double t2v_r1 = 0, t2v_r5 = 0, t2v_r10 = 0;
    double v2t_r1 = 0, v2t_r5 = 0, v2t_r10 = 0;
    int pools = 0;
    int clips = 0;
};

/// Clip-count-weighted average over pools.
inline RetrievalAggregate aggregate_pools(const std::vector<PoolMetrics>& pools) {
    if (pools.empty()) throw value_error("aggregate_pools: no pools");
    RetrievalAggregate a;
    double total = 0.0;
    for (const auto& p : pools) {
        double w = p.clip_count;
        a.t2v_r1 += w * p.t2v_r1;
        a.t2v_r5 += w * p.t2v_r5;
        a.t2v_r10 += w * p.t2v_r10;
        a.v2t_r1 += w * p.v2t_r1;
        a.v2t_r5 += w * p.v2t_r5;
        a.v2t_r10 += w * p.v2t_r10;
        total += w;
        a.clips += p.clip_count;
        ++a.pools;
    }
    a.t2v_r1 /= total;
    a.t2v_r5 /= total;
    a.t2v_r10 /= total;
    a.v2t_r1 /= total;
    a.v2t_r5 /= total;
    a.v2t_r10 /= total;
    return a;
}

// ---------------------------------------------------------------------------
// Model-backed scoring
// ---------------------------------------------------------------------------

/// Pooled-cosine candidate scores for the verb and retrieval tasks.
inline std::vector<double> score_candidates_pooled(const Model& m,
                                                   const SyntheticClip& clip,
                                                   const std::vector<std::string>& cands) {
    Array tokens = clip_student_tokens(m, clip);
    std::vector<Array> rows;
    for (const auto& text : cands) rows.push_back(encode_caption(m, text));
    Array scores = scores_from_tokens(tokens, concat_rows(rows), 1.0);
    return {scores.values().begin(), scores.values().end()};
}

/// Order-sensitive candidate scores for the order task: the negative
/// normalized DTW cost between the clip's action tokens and the candidate's
/// phrase-embedding sequence. Pooled cosine cannot separate candidates that
/// share a token multiset; the alignment path can.
inline std::vector<double> score_candidates_alignment(const Model& m,
                                                      const SyntheticClip& clip,
                                                      const std::vector<std::string>& cands,
                                                      const Lexicon& lex) {
    Array tokens = clip_student_tokens(m, clip);
    std::vector<double> out;
    for (const auto& text : cands) {
        Caption c;
        c.id = "cand";
        c.clip_id = clip.caption.id;
        c.text = text;
        c.start = 0.0;
        c.end = 1.0;
        std::vector<VerbPhrase> phrases = extract_verb_phrases(c, lex);
        if (phrases.empty())
            throw value_error("logic scoring: no phrases extracted from candidate '" +
                              text + "'");
        Array sims = cosine_matrix(tokens, encode_phrases(m, phrases));
        out.push_back(-normalized_dtw_cost(sims));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Task runners
// ---------------------------------------------------------------------------

namespace detail {

inline const SyntheticClip& clip_by_id(const Dataset& ds, const std::string& id) {
    for (const auto& clip : ds.clips)
        if (clip.caption.id == id) return clip;
    throw value_error("bench: unknown clip id " + id);
}

inline nlohmann::ordered_json mcq_metrics_json(const McqMetrics& m) {
    nlohmann::ordered_json j;
    j["r1"] = m.r1;
    j["r5"] = m.r5;
    j["r10"] = m.r10;
    j["mr_median"] = m.mr_median;
    j["mr_mean"] = m.mr_mean;
    j["acc"] = m.acc;
    j["items"] = m.items;
    return j;
}

}  // namespace detail

/// Verb-discrimination MCQ over the whole semantic pool.
inline McqMetrics run_semantic(const Model& m, const Dataset& ds) {
    if (ds.semantic.empty()) throw value_error("run_semantic: no items");
    std::vector<int> ranks;
    std::map<std::string, const SyntheticClip*> by_id;
    for (const auto& clip : ds.clips) by_id[clip.caption.id] = &clip;
    for (const auto& item : ds.semantic) {
        auto scores = score_candidates_pooled(m, *by_id.at(item.clip_id), item.candidates);
        ranks.push_back(answer_rank(scores, item.answer));
    }
    return mcq_metrics(ranks);
}

/// Order MCQ over the logic pool, alignment-scored.
inline McqMetrics run_logic(const Model& m, const Dataset& ds) {
    if (ds.logic.empty()) throw value_error("run_logic: no items");
    std::vector<int> ranks;
    std::map<std::string, const SyntheticClip*> by_id;
    for (const auto& clip : ds.clips) by_id[clip.caption.id] = &clip;
    for (const auto& item : ds.logic) {
        auto scores =
            score_candidates_alignment(m, *by_id.at(item.clip_id), item.candidates,
                                       ds.lexicon);
        ranks.push_back(answer_rank(scores, item.answer));
    }
    return mcq_metrics(ranks);
}

struct DynamicsResult {
    std::vector<PoolMetrics> pools;
    RetrievalAggregate aggregate;
    std::vector<std::string> skipped;  // pools too small to rank
};

/// Within-pool retrieval in both directions over all dynamics pools.
inline DynamicsResult run_dynamics(const Model& m, const Dataset& ds) {
    if (ds.dynamics.empty()) throw value_error("run_dynamics: no pools");
    DynamicsResult out;
    std::map<std::string, const SyntheticClip*> by_id;
    for (const auto& clip : ds.clips) by_id[clip.caption.id] = &clip;
    for (const auto& pool : ds.dynamics) {
        if (pool.items.size() < 2) {
            out.skipped.push_back(pool.pool_id);
            continue;
        }
        std::vector<std::string> texts;
        for (const auto& [cid, text] : pool.items) texts.push_back(text);
        std::vector<std::vector<double>> matrix;
        for (const auto& [cid, text] : pool.items)
            matrix.push_back(score_candidates_pooled(m, *by_id.at(cid), texts));
        PoolMetrics pm = pool_metrics(matrix);
        pm.pool_id = pool.pool_id;
        out.pools.push_back(pm);
    }
    if (out.pools.empty()) throw value_error("run_dynamics: every pool was too small");
    out.aggregate = aggregate_pools(out.pools);
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline std::string hash_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

inline nlohmann::ordered_json semantic_report(const Model& m, const Dataset& ds,
                                              const std::string& config_hash,
                                              const std::string& ckpt_hash) {
    nlohmann::ordered_json j;
    j["task"] = "semantic";
    j["metrics"] = detail::mcq_metrics_json(run_semantic(m, ds));
    j["config_hash"] = config_hash;
    j["checkpoint_hash"] = ckpt_hash;
    return j;
}

inline nlohmann::ordered_json logic_report(const Model& m, const Dataset& ds,
                                           const std::string& config_hash,
                                           const std::string& ckpt_hash) {
    nlohmann::ordered_json j;
    j["task"] = "logic";
    j["metrics"] = detail::mcq_metrics_json(run_logic(m, ds));
    j["config_hash"] = config_hash;
    j["checkpoint_hash"] = ckpt_hash;
    return j;
}

inline nlohmann::ordered_json dynamics_report(const Model& m, const Dataset& ds,
                                              const std::string& config_hash,
                                              const std::string& ckpt_hash) {
    DynamicsResult res = run_dynamics(m, ds);
    nlohmann::ordered_json j;
    j["task"] = "dynamics";
    nlohmann::ordered_json agg;
    agg["t2v_r1"] = res.aggregate.t2v_r1;
    agg["t2v_r5"] = res.aggregate.t2v_r5;
    agg["t2v_r10"] = res.aggregate.t2v_r10;
    agg["v2t_r1"] = res.aggregate.v2t_r1;
    agg["v2t_r5"] = res.aggregate.v2t_r5;
    agg["v2t_r10"] = res.aggregate.v2t_r10;
    agg["pools"] = res.aggregate.pools;
    agg["clips"] = res.aggregate.clips;
    j["metrics"] = agg;
    nlohmann::ordered_json pools = nlohmann::ordered_json::array();
    for (const auto& p : res.pools) {
        nlohmann::ordered_json pj;
        pj["pool_id"] = p.pool_id;
        pj["clip_count"] = p.clip_count;
        pj["t2v_r1"] = p.t2v_r1;
        pj["t2v_r5"] = p.t2v_r5;
        pj["t2v_r10"] = p.t2v_r10;
        pj["v2t_r1"] = p.v2t_r1;
        pj["v2t_r5"] = p.v2t_r5;
        pj["v2t_r10"] = p.v2t_r10;
        pools.push_back(pj);
    }
    j["pools"] = pools;
    nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
    for (const auto& s : res.skipped) skipped.push_back(s);
    j["skipped_pools"] = skipped;
    j["config_hash"] = config_hash;
    j["checkpoint_hash"] = ckpt_hash;
    return j;
}

}  // namespace actalign
