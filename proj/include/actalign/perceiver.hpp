#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "actalign/array.hpp"
#include "actalign/error.hpp"
#include "actalign/ops.hpp"
#include "actalign/rng.hpp"

namespace actalign {

// Compresses T x N x C visual features into K latent action tokens through
// temporally windowed cross-attention. The same weights serve two query sets:
// learned latents (student) and verb-phrase embeddings (teacher). The teacher
// only ever acts as a target; its scores are detached before entering the
// distillation loss.

struct PerceiverConfig {
    int k_latents = 6;
    int t_frames = 16;
    int n_patches = 4;
    int c_dim = 32;
    int window = 3;  // half-width in frames
    int layers = 1;

    void validate() const {
        if (k_latents < 1) throw config_error("perceiver: k_latents must be >= 1");
        if (window < 0) throw config_error("perceiver: window must be >= 0");
        if (layers < 1) throw config_error("perceiver: layers must be >= 1");
        if (t_frames < 1 || n_patches < 1 || c_dim < 1)
            throw config_error("perceiver: bad feature dims");
    }
};

/// Evenly spaced window center for latent i over T frames.
inline double latent_center(int i, int t_frames, int k_latents) {
    if (k_latents == 1) return (t_frames - 1) / 2.0;
    return std::round(static_cast<double>(i) * (t_frames - 1) / (k_latents - 1));
}

/// Mask over the T*N flattened keys: latent i sees only patches of frames
/// within [c_i - w, c_i + w].
inline BoolMat student_window_mask(const PerceiverConfig& cfg) {
    BoolMat mask(cfg.k_latents, cfg.t_frames * cfg.n_patches, false);
    for (int i = 0; i < cfg.k_latents; ++i) {
        double c = latent_center(i, cfg.t_frames, cfg.k_latents);
        for (int f = 0; f < cfg.t_frames; ++f) {
            if (std::abs(f - c) > cfg.window) continue;
            for (int p = 0; p < cfg.n_patches; ++p)
                mask.set(i, f * cfg.n_patches + p, true);
        }
    }
    for (int i = 0; i < cfg.k_latents; ++i) {
        bool any = false;
        for (int j = 0; j < mask.cols; ++j) any = any || mask.at(i, j);
        if (!any)
            throw config_error("perceiver: latent " + std::to_string(i) +
                               " has an empty temporal window");
    }
    return mask;
}

/// Teacher mask: query j sees the window around its segment midpoint; with no
/// segment information the teacher attends everywhere.
inline BoolMat teacher_window_mask(const PerceiverConfig& cfg,
                                   const std::vector<std::pair<int, int>>& segments) {
    int m = static_cast<int>(segments.size());
    BoolMat mask(m, cfg.t_frames * cfg.n_patches, false);
    for (int j = 0; j < m; ++j) {
        auto [b, e] = segments[j];
        if (b < 0 || e > cfg.t_frames || b >= e)
            throw dim_error("perceiver: bad segment bounds for teacher query " +
                            std::to_string(j));
        double c = (b + e - 1) / 2.0;
        for (int f = 0; f < cfg.t_frames; ++f) {
            if (std::abs(f - c) > cfg.window) continue;
            for (int p = 0; p < cfg.n_patches; ++p)
                mask.set(j, f * cfg.n_patches + p, true);
        }
        bool any = false;
        for (int col = 0; col < mask.cols; ++col) any = any || mask.at(j, col);
        if (!any)  // window narrower than the segment grid; fall back to the segment
            for (int f = b; f < e; ++f)
                for (int p = 0; p < cfg.n_patches; ++p)
                    mask.set(j, f * cfg.n_patches + p, true);
    }
    return mask;
}

struct PerceiverParams {
    PerceiverConfig cfg;
    Array latents;   // K x C learned queries
    Array temporal;  // T x C learned frame embeddings, added to the keys
    struct Layer {
        Array wq, wk, wv, wo;  // C x C projections
    };
    std::vector<Layer> layer_params;

    static PerceiverParams init(const PerceiverConfig& cfg, Rng& rng) {
        cfg.validate();
        PerceiverParams p;
        p.cfg = cfg;
        double wstd = 1.0 / std::sqrt(static_cast<double>(cfg.c_dim));
        p.latents = Array::randn({cfg.k_latents, cfg.c_dim}, rng, 1.0);
        p.temporal = Array::randn({cfg.t_frames, cfg.c_dim}, rng, 0.1);
        for (int l = 0; l < cfg.layers; ++l)
            p.layer_params.push_back({Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd)});
        return p;
    }

    void collect(ParamSet& ps) {
        ps.add("perceiver.latents", latents);
        ps.add("perceiver.temporal", temporal);
        for (size_t l = 0; l < layer_params.size(); ++l) {
            std::string base = "perceiver.l" + std::to_string(l) + ".";
            ps.add(base + "wq", layer_params[l].wq);
            ps.add(base + "wk", layer_params[l].wk);
            ps.add(base + "wv", layer_params[l].wv);
            ps.add(base + "wo", layer_params[l].wo);
        }
    }
};

namespace detail {

inline Array perceiver_resample(const PerceiverParams& params, const Array& features,
                                const Array& queries, const BoolMat& mask) {
    const PerceiverConfig& cfg = params.cfg;
    if (features.rank() != 3 || features.dim(0) != cfg.t_frames ||
        features.dim(1) != cfg.n_patches || features.dim(2) != cfg.c_dim)
        throw dim_error("perceiver: features " + shape_str(features.shape()) +
                        " do not match configured " + shape_str({cfg.t_frames,
                                                                 cfg.n_patches, cfg.c_dim}));
    Array flat = reshape(features, {cfg.t_frames * cfg.n_patches, cfg.c_dim});
    std::vector<int> frame_ids(static_cast<size_t>(cfg.t_frames) * cfg.n_patches);
    for (int f = 0; f < cfg.t_frames; ++f)
        for (int p = 0; p < cfg.n_patches; ++p)
            frame_ids[static_cast<size_t>(f) * cfg.n_patches + p] = f;
    Array keys_in = add(flat, gather_rows(params.temporal, frame_ids));

    Array h = queries;
    for (const auto& layer : params.layer_params) {
        Array q = matmul(h, layer.wq);
        Array k = matmul(keys_in, layer.wk);
        Array v = matmul(flat, layer.wv);
        h = matmul(masked_attention(q, k, v, mask), layer.wo);
    }
    return h;
}

}  // namespace detail

/// Student action tokens: the learned latents attend to their temporal
/// windows over the flattened features.
inline Array student_forward(const PerceiverParams& params, const Array& features) {
    return detail::perceiver_resample(params, features, params.latents,
                                      student_window_mask(params.cfg));
}

/// Teacher action tokens: verb-phrase embeddings act as the queries, sharing
/// every weight with the student. With known segment bounds each phrase is
/// windowed on its own segment; otherwise attention is unmasked.
inline Array teacher_forward(const PerceiverParams& params, const Array& features,
                             const Array& phrase_embeds,
                             const std::vector<std::pair<int, int>>& segments = {}) {
    detail::check_matrix(phrase_embeds, "teacher_forward");
    if (phrase_embeds.dim(0) < 1)
        throw dim_error("teacher_forward: need at least one phrase embedding");
    if (phrase_embeds.dim(1) != params.cfg.c_dim)
        throw dim_error("teacher_forward: phrase dim " + shape_str(phrase_embeds.shape()) +
                        " does not match c_dim");
    BoolMat mask;
    if (segments.empty()) {
        mask = BoolMat(phrase_embeds.dim(0),
                       params.cfg.t_frames * params.cfg.n_patches, true);
    } else {
        if (static_cast<int>(segments.size()) != phrase_embeds.dim(0))
            throw dim_error("teacher_forward: segment count does not match phrase count");
        mask = teacher_window_mask(params.cfg, segments);
    }
    return detail::perceiver_resample(params, features, phrase_embeds, mask);
}

/// Candidate scores from pooled action tokens: mean over K, cosine against
/// every candidate row, divided by the temperature.
inline Array scores_from_tokens(const Array& tokens, const Array& candidates,
                                double temperature) {
    if (temperature <= 0.0)
        throw config_error("scores_from_tokens: temperature must be > 0");
    detail::check_matrix(tokens, "scores_from_tokens");
    Array cand = candidates.rank() == 1
                     ? reshape(candidates, {1, candidates.dim(0)})
                     : candidates;
    Array pooled = reshape(mean_pool(tokens, 0), {1, tokens.dim(1)});
    Array sims = cosine_matrix(pooled, cand);
    return reshape(scale(sims, 1.0 / temperature), {cand.dim(0)});
}

/// Soft contrastive distillation for one anchor: cross-entropy against the
/// one-hot label blended with cross-entropy against the teacher's softened
/// scores. The teacher side is detached here, so gradients reach shared
/// weights only through the student scores.
inline Array distill_single(const Array& student_scores, const Array& teacher_scores,
                            const std::vector<double>& y_onehot, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw config_error("distill: alpha must be in [0, 1]");
    if (student_scores.rank() != 1 || teacher_scores.rank() != 1)
        throw dim_error("distill: score vectors must be rank 1");
    if (student_scores.dim(0) != teacher_scores.dim(0) ||
        y_onehot.size() != static_cast<size_t>(student_scores.dim(0)))
        throw dim_error("distill: score/label lengths disagree");
    int ones = 0;
    for (double v : y_onehot) {
        if (v != 0.0 && v != 1.0) throw value_error("distill: y must be one-hot");
        if (v == 1.0) ++ones;
    }
    if (ones != 1) throw value_error("distill: y must have exactly one hot entry");

    int n = student_scores.dim(0);
    Array log_probs = log_softmax_rows(reshape(student_scores, {1, n}));
    Array y = Array::from({1, n}, y_onehot);
    Array hard = neg(sum_all(mul(y, log_probs)));
    if (alpha == 0.0) return hard;
    Array soft_targets = softmax(reshape(teacher_scores.detach(), {1, n}), 1);
    Array soft = neg(sum_all(mul(soft_targets, log_probs)));
    return add(scale(hard, 1.0 - alpha), scale(soft, alpha));
}

/// Bidirectional distillation objective: the two directions' single losses
/// summed, as one anchor's contribution.
inline Array distill_loss(const Array& s_v2t, const Array& sp_v2t, const Array& s_t2v,
                          const Array& sp_t2v, const std::vector<double>& y_onehot,
                          double alpha) {
    return add(distill_single(s_v2t, sp_v2t, y_onehot, alpha),
               distill_single(s_t2v, sp_t2v, y_onehot, alpha));
}

}  // namespace actalign
