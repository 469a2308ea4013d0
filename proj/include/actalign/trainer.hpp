#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/align.hpp"
#include "actalign/array.hpp"
#include "actalign/error.hpp"
#include "actalign/kvconfig.hpp"
#include "actalign/mam.hpp"
#include "actalign/ops.hpp"
#include "actalign/perceiver.hpp"
#include "actalign/rng.hpp"
#include "actalign/synthgen.hpp"

namespace actalign {

// Joint training of the full objective: batch contrastive matching with
// action-centric hard negatives, verb-guided distillation, soft-DTW alignment
// with the order hinge, and masked action modeling. One writer owns the
// parameters; everything stochastic is keyed by (seed, step, purpose) so a
// run is a pure function of its config.

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

struct TextEncoderParams {
    int c_dim = 0;
    Array token_embed;  // vocab x C
    Array proj;         // C x C
    Array bias;         // C

    static TextEncoderParams init(int vocab, int c_dim, Rng& rng) {
        TextEncoderParams p;
        p.c_dim = c_dim;
        p.token_embed = Array::randn({vocab, c_dim}, rng, 0.5);
        p.proj = Array::randn({c_dim, c_dim}, rng, 1.0 / std::sqrt(c_dim));
        p.bias = Array::zeros({c_dim});
        return p;
    }

    void collect(ParamSet& ps) {
        ps.add("text.token_embed", token_embed);
        ps.add("text.proj", proj);
        ps.add("text.bias", bias);
    }
};

/// Mean-pooled embedding bag with a linear head; the desk-scale stand-in for
/// a text tower.
inline Array encode_token_ids(const TextEncoderParams& p, const std::vector<int>& ids) {
    if (ids.empty()) throw value_error("encode_token_ids: empty token sequence");
    Array pooled = mean_pool(gather_rows(p.token_embed, ids), 0);
    return reshape(add_rowvec(matmul(reshape(pooled, {1, p.c_dim}), p.proj), p.bias),
                   {p.c_dim});
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lambda_vtc = 1.0;
    double lambda_distill = 1.0;
    double lambda_dtw = 1.0;
    double lambda_mam = 1.0;
    double alpha = 0.4;
    double beta = 0.5;
    double gamma_weight = 0.5;
    double gamma_smooth = 0.1;
    double temperature = 0.1;
    double learning_rate = 0.1;
    double momentum = 0.0;
    long long steps = 1000;
    uint64_t seed = 0;
    int batch_size = 8;
    bool hn_verb = true;
    bool hn_order = true;
    int k_latents = 6;
    int window = -1;  // -1: ceil(T / K)
    int perceiver_layers = 1;
    int decoder_layers = 2;
    int max_len = 64;
    double mask_prob = 0.5;
    std::string mask_scope = "verb_token";  // or "phrase"

    void validate() const {
        if (lambda_vtc < 0 || lambda_distill < 0 || lambda_dtw < 0 || lambda_mam < 0)
            throw config_error("train: loss weights must be >= 0");
        if (alpha < 0 || alpha > 1) throw config_error("train: alpha must be in [0, 1]");
        if (beta < 0) throw config_error("train: beta must be >= 0");
        if (gamma_smooth <= 0) throw config_error("train: gamma_smooth must be > 0");
        if (gamma_weight < 0) throw config_error("train: gamma_weight must be >= 0");
        if (temperature <= 0) throw config_error("train: temperature must be > 0");
        if (learning_rate <= 0) throw config_error("train: learning_rate must be > 0");
        if (steps < 0) throw config_error("train: steps must be >= 0");
        if ((lambda_vtc > 0 || lambda_distill > 0) && batch_size < 2)
            throw config_error("train: contrastive terms need batch_size >= 2");
        if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
        if (mask_prob <= 0 || mask_prob > 1)
            throw config_error("train: mask_prob must be in (0, 1]");
        if (mask_scope != "verb_token" && mask_scope != "phrase")
            throw config_error("train: mask_scope must be verb_token or phrase");
    }

    static TrainConfig from_kv(const KvConfig& kv) {
        kv.restrict_keys({"lambda_vtc", "lambda_distill", "lambda_dtw", "lambda_mam",
                          "alpha", "beta", "gamma_weight", "gamma_smooth", "temperature",
                          "learning_rate", "momentum", "steps", "seed", "batch_size",
                          "hn_kinds", "k_latents", "window", "perceiver_layers",
                          "decoder_layers", "max_len", "mask_prob", "mask_scope",
                          "preset", "cross_eval_task"});
        TrainConfig c;
        c.lambda_vtc = kv.get_double("lambda_vtc", c.lambda_vtc);
        c.lambda_distill = kv.get_double("lambda_distill", c.lambda_distill);
        c.lambda_dtw = kv.get_double("lambda_dtw", c.lambda_dtw);
        c.lambda_mam = kv.get_double("lambda_mam", c.lambda_mam);
        c.alpha = kv.get_double("alpha", c.alpha);
        c.beta = kv.get_double("beta", c.beta);
        c.gamma_weight = kv.get_double("gamma_weight", c.gamma_weight);
        c.gamma_smooth = kv.get_double("gamma_smooth", c.gamma_smooth);
        c.temperature = kv.get_double("temperature", c.temperature);
        c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
        c.momentum = kv.get_double("momentum", c.momentum);
        c.steps = kv.get_int("steps", c.steps);
        c.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
        c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
        std::string kinds = kv.get_str("hn_kinds", "verb,order");
        c.hn_verb = kinds.find("verb") != std::string::npos;
        c.hn_order = kinds.find("order") != std::string::npos;
        if (!c.hn_verb && !c.hn_order && kinds != "none")
            throw config_error("train: hn_kinds must name verb, order, or none");
        c.k_latents = static_cast<int>(kv.get_int("k_latents", c.k_latents));
        c.window = static_cast<int>(kv.get_int("window", c.window));
        c.perceiver_layers =
            static_cast<int>(kv.get_int("perceiver_layers", c.perceiver_layers));
        c.decoder_layers = static_cast<int>(kv.get_int("decoder_layers", c.decoder_layers));
        c.max_len = static_cast<int>(kv.get_int("max_len", c.max_len));
        c.mask_prob = kv.get_double("mask_prob", c.mask_prob);
        c.mask_scope = kv.get_str("mask_scope", c.mask_scope);

        std::string preset = kv.get_str("preset", "");
        if (preset == "cross_eval") {
            // Evaluate each task against the HN kind it did NOT train on.
            std::string task = kv.get_str("cross_eval_task", "");
            if (task == "semantic") {
                c.hn_verb = false;
                c.hn_order = true;
            } else if (task == "logic") {
                c.hn_verb = true;
                c.hn_order = false;
            } else {
                throw config_error(
                    "train: preset cross_eval needs cross_eval_task = semantic|logic");
            }
        } else if (!preset.empty()) {
            throw config_error("train: unknown preset '" + preset + "'");
        }
        c.validate();
        return c;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["lambda_vtc"] = lambda_vtc;
        j["lambda_distill"] = lambda_distill;
        j["lambda_dtw"] = lambda_dtw;
        j["lambda_mam"] = lambda_mam;
        j["alpha"] = alpha;
        j["beta"] = beta;
        j["gamma_weight"] = gamma_weight;
        j["gamma_smooth"] = gamma_smooth;
        j["temperature"] = temperature;
        j["learning_rate"] = learning_rate;
        j["momentum"] = momentum;
        j["steps"] = steps;
        j["seed"] = seed;
        j["batch_size"] = batch_size;
        j["hn_verb"] = hn_verb;
        j["hn_order"] = hn_order;
        j["k_latents"] = k_latents;
        j["window"] = window;
        j["perceiver_layers"] = perceiver_layers;
        j["decoder_layers"] = decoder_layers;
        j["max_len"] = max_len;
        j["mask_prob"] = mask_prob;
        j["mask_scope"] = mask_scope;
        return j;
    }

    static TrainConfig from_json(const nlohmann::ordered_json& j) {
        TrainConfig c;
        c.lambda_vtc = j.at("lambda_vtc").get<double>();
        c.lambda_distill = j.at("lambda_distill").get<double>();
        c.lambda_dtw = j.at("lambda_dtw").get<double>();
        c.lambda_mam = j.at("lambda_mam").get<double>();
        c.alpha = j.at("alpha").get<double>();
        c.beta = j.at("beta").get<double>();
        c.gamma_weight = j.at("gamma_weight").get<double>();
        c.gamma_smooth = j.at("gamma_smooth").get<double>();
        c.temperature = j.at("temperature").get<double>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.momentum = j.at("momentum").get<double>();
        c.steps = j.at("steps").get<long long>();
        c.seed = j.at("seed").get<uint64_t>();
        c.batch_size = j.at("batch_size").get<int>();
        c.hn_verb = j.at("hn_verb").get<bool>();
        c.hn_order = j.at("hn_order").get<bool>();
        c.k_latents = j.at("k_latents").get<int>();
        c.window = j.at("window").get<int>();
        c.perceiver_layers = j.at("perceiver_layers").get<int>();
        c.decoder_layers = j.at("decoder_layers").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.mask_prob = j.at("mask_prob").get<double>();
        c.mask_scope = j.at("mask_scope").get<std::string>();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct Model {
    TrainConfig cfg;
    int t_frames = 0, n_patches = 0, c_dim = 0;
    Vocab vocab;
    PerceiverParams perceiver;
    DecoderParams decoder;
    TextEncoderParams text;
    ParamSet params;

    static Model init(const TrainConfig& cfg, Vocab vocab, int t, int n, int c) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.t_frames = t;
        m.n_patches = n;
        m.c_dim = c;
        m.vocab = std::move(vocab);

        PerceiverConfig pc;
        pc.k_latents = cfg.k_latents;
        pc.t_frames = t;
        pc.n_patches = n;
        pc.c_dim = c;
        pc.window = cfg.window >= 0 ? cfg.window : (t + cfg.k_latents - 1) / cfg.k_latents;
        pc.layers = cfg.perceiver_layers;

        DecoderConfig dc;
        dc.c_dim = c;
        dc.layers = cfg.decoder_layers;
        dc.vocab = m.vocab.size();
        dc.max_len = cfg.max_len;

        Rng rng(derive_seed(cfg.seed, 0xA11C));
        m.perceiver = PerceiverParams::init(pc, rng);
        m.decoder = DecoderParams::init(dc, rng);
        m.text = TextEncoderParams::init(m.vocab.size(), c, rng);
        m.perceiver.collect(m.params);
        m.decoder.collect(m.params);
        m.text.collect(m.params);
        return m;
    }
};

/// Every caption, hard negative, pool candidate and phrase rendering the
/// model may ever need to encode for this dataset.
inline std::vector<std::string> vocab_texts(const Dataset& ds) {
    std::vector<std::string> texts;
    for (const auto& [name, verbs] : ds.lexicon.clusters)
        for (const auto& v : verbs) texts.push_back(v + " " + gerund_form(v));
    std::string nouns;
    for (const auto& n : ds.lexicon.nouns) nouns += n + " ";
    texts.push_back(nouns);
    for (const auto& conn : ds.lexicon.connectors) texts.push_back(conn);
    texts.push_back("the");
    for (const auto& clip : ds.clips) {
        texts.push_back(clip.caption.text);
        for (const auto& hn : clip.negatives) texts.push_back(hn.text);
        for (const auto& p : clip.phrases) texts.push_back(render_phrase(p));
    }
    return texts;
}

inline Array clip_features_array(const SyntheticClip& clip) {
    return Array::from({clip.t, clip.n, clip.c}, clip.frames);
}

inline Array encode_caption(const Model& m, const std::string& text) {
    return encode_token_ids(m.text, m.vocab.encode(text));
}

/// Phrase-sequence embeddings, one row per phrase in order.
inline Array encode_phrases(const Model& m, const std::vector<VerbPhrase>& phrases) {
    if (phrases.empty()) throw value_error("encode_phrases: no phrases");
    std::vector<Array> rows;
    for (const auto& p : phrases) rows.push_back(encode_caption(m, render_phrase(p)));
    return concat_rows(rows);
}

inline Array clip_student_tokens(const Model& m, const SyntheticClip& clip) {
    return student_forward(m.perceiver, clip_features_array(clip));
}

// ---------------------------------------------------------------------------
// Contrastive loss with tagged hard negatives
// ---------------------------------------------------------------------------

struct VtcBatch {
    std::vector<std::string> texts;  // B positives
    Array text_embeds;               // B x C
    std::vector<int> hn_owner;       // H tags (batch row owning each negative)
    std::vector<std::string> hn_texts;
    std::vector<Array> hn_embeds;  // H vectors of dim C
};

/// Builds the candidate side of a contrastive batch. A hard negative whose
/// text collides with any positive caption is rejected here: its own caption
/// by the dedup rule, another item's caption by the owner-tag check.
inline VtcBatch build_vtc_batch(const Model& m,
                                const std::vector<const SyntheticClip*>& items,
                                bool use_verb, bool use_order) {
    VtcBatch b;
    std::set<std::string> positives;
    for (const auto* clip : items) {
        if (!positives.insert(clip->caption.text).second)
            throw value_error("vtc: duplicate caption text in batch: '" +
                              clip->caption.text + "'");
        b.texts.push_back(clip->caption.text);
    }
    std::vector<Array> rows;
    for (const auto* clip : items) rows.push_back(encode_caption(m, clip->caption.text));
    b.text_embeds = concat_rows(rows);
    for (size_t i = 0; i < items.size(); ++i) {
        for (const auto& hn : items[i]->negatives) {
            bool enabled = (hn.kind == NegKind::VerbAltered && use_verb) ||
                           (hn.kind == NegKind::OrderSwapped && use_order);
            if (!enabled) continue;
            if (positives.count(hn.text)) continue;  // rejected: collides with a positive
            b.hn_owner.push_back(static_cast<int>(i));
            b.hn_texts.push_back(hn.text);
            b.hn_embeds.push_back(encode_caption(m, hn.text));
        }
    }
    return b;
}

/// Symmetric InfoNCE where each video row's candidate set is the B captions
/// plus its own hard negatives; negatives never serve as anchors, and other
/// rows never see them.
inline Array vtc_loss(const Array& video_embeds, const VtcBatch& batch,
                      double temperature) {
    detail::check_matrix(video_embeds, "vtc_loss");
    int b = video_embeds.dim(0);
    if (b < 2) throw config_error("vtc_loss: need batch size >= 2");
    if (batch.text_embeds.dim(0) != b)
        throw dim_error("vtc_loss: video/text batch sizes disagree");
    int h = static_cast<int>(batch.hn_embeds.size());

    Array candidates = batch.text_embeds;
    if (h > 0) {
        std::vector<Array> parts = {batch.text_embeds};
        for (const auto& e : batch.hn_embeds) parts.push_back(e);
        candidates = concat_rows(parts);
    }
    Array v2t_logits = scale(cosine_matrix(video_embeds, candidates), 1.0 / temperature);
    BoolMat mask(b, b + h, false);
    std::vector<int> targets(b);
    for (int i = 0; i < b; ++i) {
        targets[i] = i;
        for (int j = 0; j < b; ++j) mask.set(i, j, true);
        for (int k = 0; k < h; ++k)
            if (batch.hn_owner[k] == i) mask.set(i, b + k, true);
    }
    Array v2t = masked_cross_entropy_rows(v2t_logits, mask, targets, 1.0, Reduction::Mean);

    Array t2v_logits =
        scale(cosine_matrix(batch.text_embeds, video_embeds), 1.0 / temperature);
    Array t2v = cross_entropy_rows(t2v_logits, targets, 1.0, Reduction::Mean);
    return scale(add(v2t, t2v), 0.5);
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

/// Token positions eligible for masking: the verb tokens, or with scope
/// "phrase" also the object tokens that follow them. Positions are located by
/// scanning the caption text, so phrases loaded from disk work the same as
/// freshly extracted ones.
inline std::vector<int> maskable_positions(const Caption& caption,
                                           const std::vector<VerbPhrase>& phrases,
                                           const std::string& scope) {
    std::vector<Token> toks = tokenize(caption.text);
    std::vector<int> out;
    size_t cursor = 0;  // phrases appear in textual order
    for (const auto& p : phrases) {
        size_t verb_at = toks.size();
        std::string ger = gerund_form(p.verb);
        for (size_t j = cursor; j < toks.size(); ++j)
            if (toks[j].lower == p.verb || toks[j].lower == ger) {
                verb_at = j;
                break;
            }
        if (verb_at == toks.size()) continue;
        cursor = verb_at + 1;
        out.push_back(static_cast<int>(verb_at));
        if (scope == "phrase" && !p.object.empty()) {
            for (size_t j = verb_at + 1; j < toks.size(); ++j)
                if (toks[j].lower == p.object || toks[j].lower == p.object + "s" ||
                    toks[j].lower == p.object + "es") {
                    out.push_back(static_cast<int>(j));
                    break;
                }
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct LossBreakdown {
    double vtc = 0.0;
    double distill = 0.0;
    double dtw = 0.0;
    double mam = 0.0;
    double total = 0.0;
};

struct TrainState {
    Model model;
    uint64_t step = 0;
    std::vector<std::vector<double>> velocity;  // per-parameter, momentum only

    void ensure_velocity() {
        if (!velocity.empty()) return;
        for (auto& [name, arr] : model.params.items)
            velocity.emplace_back(arr.size(), 0.0);
    }
};

/// One optimization step over a batch of clips. Loss terms with zero weight
/// are skipped entirely (bitwise-identical runs when a term is disabled);
/// every stochastic draw comes from a (seed, step, purpose) stream.
inline LossBreakdown train_step(TrainState& state,
                                const std::vector<const SyntheticClip*>& batch) {
    Model& m = state.model;
    const TrainConfig& cfg = m.cfg;
    if (batch.empty()) throw config_error("train_step: empty batch");
    int b = static_cast<int>(batch.size());

    // Student tokens and pooled video embeddings for the whole batch.
    std::vector<Array> student_tokens;
    std::vector<Array> pooled_rows;
    for (const auto* clip : batch) {
        Array tokens = clip_student_tokens(m, *clip);
        pooled_rows.push_back(mean_pool(tokens, 0));
        student_tokens.push_back(std::move(tokens));
    }
    Array video = concat_rows(pooled_rows);

    bool need_text = cfg.lambda_vtc > 0 || cfg.lambda_distill > 0;
    VtcBatch vbatch;
    if (need_text) vbatch = build_vtc_batch(m, batch, cfg.hn_verb, cfg.hn_order);

    LossBreakdown out;
    Array total = Array::scalar(0.0);

    if (cfg.lambda_vtc > 0) {
        Array l = vtc_loss(video, vbatch, cfg.temperature);
        out.vtc = l.item();
        total = add(total, scale(l, cfg.lambda_vtc));
    }

    if (cfg.lambda_distill > 0) {
        std::vector<Array> teacher_rows;
        for (int i = 0; i < b; ++i) {
            const SyntheticClip* clip = batch[i];
            Array phr = encode_phrases(m, clip->phrases).detach();  // frozen queries
            Array teacher = teacher_forward(m.perceiver, clip_features_array(*clip), phr,
                                            clip->segment_bounds);
            teacher_rows.push_back(mean_pool(teacher, 0));
        }
        Array video_teacher = concat_rows(teacher_rows);
        Array s_v2t = scale(cosine_matrix(video, vbatch.text_embeds), 1.0 / cfg.temperature);
        Array sp_v2t =
            scale(cosine_matrix(video_teacher, vbatch.text_embeds), 1.0 / cfg.temperature);
        Array s_t2v = scale(cosine_matrix(vbatch.text_embeds, video), 1.0 / cfg.temperature);
        Array sp_t2v =
            scale(cosine_matrix(vbatch.text_embeds, video_teacher), 1.0 / cfg.temperature);
        Array l = Array::scalar(0.0);
        for (int i = 0; i < b; ++i) {
            std::vector<double> y(static_cast<size_t>(b), 0.0);
            y[static_cast<size_t>(i)] = 1.0;
            l = add(l, distill_loss(row(s_v2t, i), row(sp_v2t, i), row(s_t2v, i),
                                    row(sp_t2v, i), y, cfg.alpha));
        }
        l = scale(l, 1.0 / b);
        out.distill = l.item();
        total = add(total, scale(l, cfg.lambda_distill));
    }

    if (cfg.lambda_dtw > 0) {
        std::vector<std::pair<Array, Array>> pairs;
        for (int i = 0; i < b; ++i)
            pairs.emplace_back(student_tokens[static_cast<size_t>(i)],
                               encode_phrases(m, batch[static_cast<size_t>(i)]->phrases));
        Array l = dtw_objective(pairs, cfg.beta, cfg.gamma_weight, cfg.gamma_smooth);
        out.dtw = l.item();
        total = add(total, scale(l, cfg.lambda_dtw));
    }

    if (cfg.lambda_mam > 0) {
        Array l = Array::scalar(0.0);
        int scored = 0;
        for (int i = 0; i < b; ++i) {
            const SyntheticClip* clip = batch[static_cast<size_t>(i)];
            std::vector<int> ids = m.vocab.encode(clip->caption.text);
            std::vector<int> positions =
                maskable_positions(clip->caption, clip->phrases, cfg.mask_scope);
            uint64_t mask_seed =
                derive_seed(cfg.seed, state.step * 1000 + static_cast<uint64_t>(i), 0x3A5);
            auto sample = mask_caption(ids, positions, cfg.mask_prob, mask_seed);
            if (!sample) continue;
            Array logits = decode_forward(m.decoder, sample->input_ids,
                                          student_tokens[static_cast<size_t>(i)]);
            l = add(l, mam_loss(logits, sample->target_ids));
            ++scored;
        }
        if (scored > 0) {
            l = scale(l, 1.0 / scored);
            out.mam = l.item();
            total = add(total, scale(l, cfg.lambda_mam));
        }
    }

    out.total = total.item();
    if (!std::isfinite(out.total))
        throw numeric_error("train_step: non-finite loss at step " +
                            std::to_string(state.step));

    total.backward();
    state.ensure_velocity();
    double lr = cfg.learning_rate, mu = cfg.momentum;
    for (size_t pi = 0; pi < m.params.items.size(); ++pi) {
        auto& arr = m.params.items[pi].second;
        if (!arr.has_grad()) continue;
        auto vals = arr.mut_values();
        auto grad = arr.grad();
        auto& vel = state.velocity[pi];
        for (size_t k = 0; k < vals.size(); ++k) {
            if (mu != 0.0) {
                vel[k] = mu * vel[k] + grad[k];
                vals[k] -= lr * vel[k];
            } else {
                vals[k] -= lr * grad[k];
            }
        }
        arr.zero_grad();
    }
    ++state.step;
    return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Deterministic epoch order: a seeded permutation per epoch, filled greedily
/// so no batch carries two identical caption texts.
inline std::vector<std::vector<const SyntheticClip*>> plan_epoch(
    const std::vector<const SyntheticClip*>& train, int batch_size, uint64_t seed,
    uint64_t epoch) {
    if (static_cast<int>(train.size()) < batch_size)
        throw config_error("plan_epoch: fewer train clips than batch_size");
    std::vector<int> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(seed, 0xE90C, epoch));
    rng.shuffle(order);

    std::vector<std::vector<const SyntheticClip*>> batches;
    std::vector<const SyntheticClip*> cur;
    std::set<std::string> cur_texts;
    std::vector<int> deferred;
    auto flush = [&]() {
        if (static_cast<int>(cur.size()) == batch_size) batches.push_back(cur);
        cur.clear();
        cur_texts.clear();
    };
    for (int idx : order) {
        const SyntheticClip* clip = train[static_cast<size_t>(idx)];
        if (cur_texts.count(clip->caption.text)) {
            deferred.push_back(idx);
            continue;
        }
        cur.push_back(clip);
        cur_texts.insert(clip->caption.text);
        if (static_cast<int>(cur.size()) == batch_size) flush();
    }
    return batches;  // deferred leftovers and partial tails are dropped
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

constexpr char kCkptMagic[8] = {'A', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const TrainState& state, const std::string& path) {
    const Model& m = state.model;
    nlohmann::ordered_json header;
    header["config"] = m.cfg.to_json();
    header["vocab"] = m.vocab.to_json();
    header["step"] = state.step;
    header["dims"] = {{"t", m.t_frames}, {"n", m.n_patches}, {"c", m.c_dim}};
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, arr] : m.params.items) {
        nlohmann::ordered_json tj;
        tj["name"] = name;
        tj["shape"] = arr.shape();
        tensors.push_back(tj);
    }
    header["tensors"] = tensors;
    header["has_velocity"] = !state.velocity.empty() && m.cfg.momentum != 0.0;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, arr] : m.params.items)
        out.write(reinterpret_cast<const char*>(arr.values().data()),
                  static_cast<std::streamsize>(arr.size() * sizeof(double)));
    if (header["has_velocity"].get<bool>())
        for (const auto& v : state.velocity)
            out.write(reinterpret_cast<const char*>(v.data()),
                      static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw io_error("checkpoint format error: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in) throw io_error("checkpoint truncated (header length): " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw io_error("checkpoint truncated (header): " + path);
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("checkpoint header parse error: ") + e.what());
    }

    TrainConfig cfg = TrainConfig::from_json(header.at("config"));
    Vocab vocab = Vocab::from_json(header.at("vocab"));
    int t = header.at("dims").at("t").get<int>();
    int n = header.at("dims").at("n").get<int>();
    int c = header.at("dims").at("c").get<int>();

    TrainState state{Model::init(cfg, std::move(vocab), t, n, c)};
    state.step = header.at("step").get<uint64_t>();

    // The tensor directory must match the freshly built parameter set exactly.
    const auto& tensors = header.at("tensors");
    if (tensors.size() != state.model.params.items.size())
        throw io_error("checkpoint schema error: expected " +
                       std::to_string(state.model.params.items.size()) + " tensors, found " +
                       std::to_string(tensors.size()));
    for (size_t i = 0; i < state.model.params.items.size(); ++i) {
        auto& [name, arr] = state.model.params.items[i];
        if (tensors[i].at("name").get<std::string>() != name)
            throw io_error("checkpoint schema error: missing tensor '" + name + "'");
        if (tensors[i].at("shape").get<Shape>() != arr.shape())
            throw io_error("checkpoint schema error: tensor '" + name + "' has shape " +
                           shape_str(tensors[i].at("shape").get<Shape>()) + ", expected " +
                           shape_str(arr.shape()));
        in.read(reinterpret_cast<char*>(arr.mut_values().data()),
                static_cast<std::streamsize>(arr.size() * sizeof(double)));
        if (!in) throw io_error("checkpoint truncated (tensor '" + name + "'): " + path);
    }
    if (header.value("has_velocity", false)) {
        state.ensure_velocity();
        for (auto& v : state.velocity) {
            in.read(reinterpret_cast<char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(double)));
            if (!in) throw io_error("checkpoint truncated (velocity): " + path);
        }
    }
    return state;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepLog {
    uint64_t step;
    LossBreakdown losses;
};

/// Runs `cfg.steps` optimizer steps over the train split, invoking `on_step`
/// after each one. Pure function of (dataset, config): batches, masking and
/// updates all derive from the config seed.
template <typename OnStep>
inline void train_loop(TrainState& state, const Dataset& ds, OnStep&& on_step) {
    std::vector<const SyntheticClip*> train;
    for (const auto& clip : ds.clips)
        if (clip.split == "train") train.push_back(&clip);
    if (train.empty()) throw config_error("train_loop: dataset has no train split");

    const TrainConfig& cfg = state.model.cfg;
    uint64_t cursor = 0;  // batches consumed since step 0; replayed on resume
    uint64_t epoch = 0;
    while (state.step < static_cast<uint64_t>(cfg.steps)) {
        auto batches = plan_epoch(train, cfg.batch_size, cfg.seed, epoch++);
        if (batches.empty())
            throw config_error("train_loop: epoch produced no full batches");
        for (const auto& batch : batches) {
            if (state.step >= static_cast<uint64_t>(cfg.steps)) break;
            if (cursor++ < state.step) continue;  // align with a resumed state
            LossBreakdown losses = train_step(state, batch);
            on_step(StepLog{state.step, losses});
        }
    }
}

}  // namespace actalign
