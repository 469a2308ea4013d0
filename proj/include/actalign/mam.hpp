#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "actalign/array.hpp"
#include "actalign/curation.hpp"
#include "actalign/error.hpp"
#include "actalign/ops.hpp"
#include "actalign/rng.hpp"

namespace actalign {

// Masked action modeling: corrupt verb tokens in the caption, then decode the
// original token sequence autoregressively with causal self-attention plus
// cross-attention over the visual action tokens.

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMask = 3;

    std::vector<std::string> id_to_token;
    std::map<std::string, int> token_to_id;

    static Vocab build(const std::vector<std::string>& texts) {
        Vocab v;
        v.id_to_token = {"<pad>", "<bos>", "<eos>", "<mask>"};
        std::set<std::string> words;
        for (const auto& t : texts)
            for (const auto& w : token_strings(t)) words.insert(w);
        for (const auto& w : words) v.id_to_token.push_back(w);
        for (size_t i = 0; i < v.id_to_token.size(); ++i)
            v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
        return v;
    }

    int size() const { return static_cast<int>(id_to_token.size()); }

    bool has(const std::string& tok) const { return token_to_id.count(tok) > 0; }

    int id(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        if (it == token_to_id.end())
            throw value_error("vocab: unknown token '" + tok + "'");
        return it->second;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out;
        for (const auto& w : token_strings(text)) out.push_back(id(w));
        return out;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (size_t i = 0; i < id_to_token.size(); ++i)
            j[id_to_token[i]] = static_cast<int>(i);
        return j;
    }

    static Vocab from_json(const nlohmann::ordered_json& j) {
        Vocab v;
        std::vector<std::pair<int, std::string>> pairs;
        for (auto it = j.begin(); it != j.end(); ++it)
            pairs.emplace_back(it.value().get<int>(), it.key());
        std::sort(pairs.begin(), pairs.end());
        for (size_t i = 0; i < pairs.size(); ++i) {
            if (pairs[i].first != static_cast<int>(i))
                throw io_error("vocab: ids are not a dense 0..n-1 range");
            v.id_to_token.push_back(pairs[i].second);
            v.token_to_id[pairs[i].second] = pairs[i].first;
        }
        if (v.size() < 4) throw io_error("vocab: missing reserved tokens");
        return v;
    }
};

struct MaskedSample {
    std::vector<int> input_ids;   // MASK written over the chosen positions
    std::vector<int> target_ids;  // the original sequence, defined everywhere
    std::vector<int> mask_positions;
};

/// Masks each maskable (verb) position independently with probability
/// mask_prob, force-masking the first one if the coin flips all miss.
/// Captions without any maskable token yield nullopt: the sample is skipped.
inline std::optional<MaskedSample> mask_caption(const std::vector<int>& token_ids,
                                                const std::vector<int>& verb_positions,
                                                double mask_prob, uint64_t rng_seed) {
    if (mask_prob <= 0.0 || mask_prob > 1.0)
        throw config_error("mask_caption: mask_prob must be in (0, 1]");
    for (int p : verb_positions)
        if (p < 0 || p >= static_cast<int>(token_ids.size()))
            throw value_error("mask_caption: verb position out of range");
    if (verb_positions.empty()) return std::nullopt;

    MaskedSample s;
    s.input_ids = token_ids;
    s.target_ids = token_ids;
    Rng rng(rng_seed);
    for (int p : verb_positions)
        if (rng.uniform() < mask_prob) s.mask_positions.push_back(p);
    if (s.mask_positions.empty()) s.mask_positions.push_back(verb_positions.front());
    for (int p : s.mask_positions) s.input_ids[static_cast<size_t>(p)] = Vocab::kMask;
    return s;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecoderConfig {
    int c_dim = 32;
    int layers = 2;
    int vocab = 4;
    int max_len = 64;

    void validate() const {
        if (layers < 1) throw config_error("decoder: layers must be >= 1");
        if (c_dim < 1 || vocab < 1 || max_len < 1)
            throw config_error("decoder: bad dimensions");
    }
};

struct DecoderParams {
    DecoderConfig cfg;
    Array token_embed;  // vocab x C
    struct Layer {
        Array sq, sk, sv, so;  // causal self-attention
        Array cq, ck, cv, co;  // cross-attention over action tokens
    };
    std::vector<Layer> layer_params;
    Array out_proj;  // C x vocab
    Array out_bias;  // vocab

    static DecoderParams init(const DecoderConfig& cfg, Rng& rng) {
        cfg.validate();
        DecoderParams p;
        p.cfg = cfg;
        double wstd = 1.0 / std::sqrt(static_cast<double>(cfg.c_dim));
        p.token_embed = Array::randn({cfg.vocab, cfg.c_dim}, rng, 0.5);
        for (int l = 0; l < cfg.layers; ++l)
            p.layer_params.push_back({Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd),
                                      Array::randn({cfg.c_dim, cfg.c_dim}, rng, wstd)});
        p.out_proj = Array::randn({cfg.c_dim, cfg.vocab}, rng, wstd);
        p.out_bias = Array::zeros({cfg.vocab});
        return p;
    }

    void collect(ParamSet& ps) {
        ps.add("decoder.token_embed", token_embed);
        for (size_t l = 0; l < layer_params.size(); ++l) {
            std::string base = "decoder.l" + std::to_string(l) + ".";
            ps.add(base + "sq", layer_params[l].sq);
            ps.add(base + "sk", layer_params[l].sk);
            ps.add(base + "sv", layer_params[l].sv);
            ps.add(base + "so", layer_params[l].so);
            ps.add(base + "cq", layer_params[l].cq);
            ps.add(base + "ck", layer_params[l].ck);
            ps.add(base + "cv", layer_params[l].cv);
            ps.add(base + "co", layer_params[l].co);
        }
        ps.add("decoder.out_proj", out_proj);
        ps.add("decoder.out_bias", out_bias);
    }
};

/// Fixed sinusoidal position table; gives the causal decoder a notion of
/// order without extra learned state.
inline Array positional_encoding(int n, int c) {
    std::vector<double> vals(static_cast<size_t>(n) * c);
    for (int t = 0; t < n; ++t)
        for (int k = 0; k < c; ++k) {
            double rate = std::pow(10000.0, -2.0 * (k / 2) / static_cast<double>(c));
            vals[static_cast<size_t>(t) * c + k] =
                k % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
        }
    return Array::from({n, c}, std::move(vals));
}

/// Per layer: causal self-attention (position t sees only positions <= t),
/// then cross-attention over the action tokens. Output projection yields
/// next-token logits per position.
inline Array decode_forward(const DecoderParams& params, const std::vector<int>& input_ids,
                            const Array& action_tokens) {
    const DecoderConfig& cfg = params.cfg;
    int n = static_cast<int>(input_ids.size());
    if (n < 1) throw value_error("decode_forward: empty input");
    if (n > cfg.max_len)
        throw value_error("decode_forward: sequence length " + std::to_string(n) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
    detail::check_matrix(action_tokens, "decode_forward");
    if (action_tokens.dim(1) != cfg.c_dim)
        throw dim_error("decode_forward: action token dim mismatch");

    BoolMat causal(n, n, false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) causal.set(i, j, true);
    BoolMat cross(n, action_tokens.dim(0), true);

    Array h = add(gather_rows(params.token_embed, input_ids),
                  positional_encoding(n, cfg.c_dim));
    // Self-Attn and Cross-Attn are standard pre-norm residual sublayers; both
    // operate strictly per position, so causality is preserved.
    for (const auto& layer : params.layer_params) {
        Array hn = layer_norm(h);
        Array self = masked_attention(matmul(hn, layer.sq), matmul(hn, layer.sk),
                                      matmul(hn, layer.sv), causal);
        h = add(h, matmul(self, layer.so));
        Array sn = layer_norm(h);
        Array xattn = masked_attention(matmul(sn, layer.cq),
                                       matmul(action_tokens, layer.ck),
                                       matmul(action_tokens, layer.cv), cross);
        h = add(h, matmul(xattn, layer.co));
    }
    return add_rowvec(matmul(layer_norm(h), params.out_proj), params.out_bias);
}

/// Teacher-forced next-token cross-entropy summed over positions 1..N-1 of
/// one sample (batch averaging is the caller's job). A length-1 sequence has
/// nothing to score.
inline Array mam_loss(const Array& logits, const std::vector<int>& target_ids) {
    detail::check_matrix(logits, "mam_loss");
    int n = logits.dim(0);
    if (static_cast<int>(target_ids.size()) != n)
        throw dim_error("mam_loss: " + std::to_string(target_ids.size()) +
                        " targets for " + std::to_string(n) + " positions");
    if (n < 2) return Array::scalar(0.0);
    std::vector<int> next(target_ids.begin() + 1, target_ids.end());
    return cross_entropy_rows(slice_rows(logits, 0, n - 1), next, 1.0, Reduction::Sum);
}

}  // namespace actalign
