#pragma once

#include <string>
#include <vector>

#include "actalign/align.hpp"
#include "actalign/gradcheck.hpp"
#include "actalign/mam.hpp"
#include "actalign/ops.hpp"
#include "actalign/perceiver.hpp"
#include "actalign/rng.hpp"
#include "actalign/trainer.hpp"

namespace actalign {

// Finite-difference sweeps over every differentiable operation, each across
// ten seeds. The CLI `gradcheck` subcommand and the acceptance suite both run
// these.

struct GradCase {
    std::string name;
    double max_err = 0.0;
};

namespace detail {

inline Array rnd(Shape shape, uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    return Array::randn(std::move(shape), rng, stddev);
}

template <typename F>
GradCase sweep(const std::string& name, F&& make_case) {
    GradCase out{name, 0.0};
    for (uint64_t seed = 0; seed < 10; ++seed)
        out.max_err = std::max(out.max_err, make_case(seed));
    return out;
}

}  // namespace detail

inline std::vector<GradCase> gradcheck_core_suite() {
    using detail::rnd;
    std::vector<GradCase> cases;

    cases.push_back(detail::sweep("matmul", [](uint64_t s) {
        Array a = rnd({3, 4}, 10 + s), b = rnd({4, 2}, 50 + s), w = rnd({3, 2}, 90 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(matmul(in[0], in[1]), w));
            },
            {a, b});
    }));

    cases.push_back(detail::sweep("softmax", [](uint64_t s) {
        Array x = rnd({6}, 130 + s, 2.0), w = rnd({6}, 170 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(softmax(in[0], 0), w));
            },
            {x});
    }));

    cases.push_back(detail::sweep("masked_attention", [](uint64_t s) {
        Array q = rnd({3, 5}, 210 + s), k = rnd({4, 5}, 250 + s), v = rnd({4, 5}, 290 + s);
        Array w = rnd({3, 5}, 330 + s);
        BoolMat mask(3, 4, true);
        mask.set(0, 2, false);
        mask.set(2, (s % 4 == 2) ? 3 : static_cast<int>(s % 4), false);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(masked_attention(in[0], in[1], in[2], mask), w));
            },
            {q, k, v});
    }));

    cases.push_back(detail::sweep("cosine_cost", [](uint64_t s) {
        Array a = rnd({3, 6}, 370 + s), b = rnd({2, 6}, 410 + s), w = rnd({3, 2}, 450 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(cost_matrix(in[0], in[1]), w));
            },
            {a, b});
    }));

    cases.push_back(detail::sweep("layer_norm", [](uint64_t s) {
        Array x = rnd({4, 5}, 490 + s), w = rnd({4, 5}, 530 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(layer_norm(in[0]), w));
            },
            {x});
    }));

    cases.push_back(detail::sweep("mean_pool", [](uint64_t s) {
        Array x = rnd({4, 5}, 570 + s), w = rnd({5}, 610 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return sum_all(mul(mean_pool(in[0], 0), w));
            },
            {x});
    }));

    cases.push_back(detail::sweep("cross_entropy", [](uint64_t s) {
        Array logits = rnd({4, 6}, 650 + s, 2.0);
        std::vector<int> targets = {static_cast<int>(s % 6), 0, 5, 2};
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return cross_entropy_rows(in[0], targets, 0.7, Reduction::Mean);
            },
            {logits});
    }));

    cases.push_back(detail::sweep("distill_loss", [](uint64_t s) {
        Array sv = rnd({5}, 690 + s), spv = rnd({5}, 730 + s);
        Array st = rnd({5}, 770 + s), spt = rnd({5}, 810 + s);
        std::vector<double> y(5, 0.0);
        y[s % 5] = 1.0;
        return gradcheck(
            [&](const std::vector<Array>& in) {
                return distill_loss(in[0], spv, in[1], spt, y, 0.4);
            },
            {sv, st});
    }));

    cases.push_back(detail::sweep("perceiver_student", [](uint64_t s) {
        PerceiverConfig cfg;
        cfg.k_latents = 2;
        cfg.t_frames = 4;
        cfg.n_patches = 2;
        cfg.c_dim = 6;
        cfg.window = 1;
        Rng rng(850 + s);
        PerceiverParams params = PerceiverParams::init(cfg, rng);
        Array feats = rnd({4, 2, 6}, 890 + s);
        Array w = rnd({2, 6}, 930 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                PerceiverParams p = params;
                p.latents = in[0];
                p.temporal = in[1];
                p.layer_params[0].wk = in[2];
                return sum_all(mul(student_forward(p, in[3]), w));
            },
            {params.latents, params.temporal, params.layer_params[0].wk, feats});
    }));

    cases.push_back(detail::sweep("perceiver_teacher", [](uint64_t s) {
        PerceiverConfig cfg;
        cfg.k_latents = 2;
        cfg.t_frames = 4;
        cfg.n_patches = 2;
        cfg.c_dim = 6;
        cfg.window = 1;
        Rng rng(970 + s);
        PerceiverParams params = PerceiverParams::init(cfg, rng);
        Array feats = rnd({4, 2, 6}, 1010 + s);
        Array phrases = rnd({2, 6}, 1050 + s);
        Array w = rnd({2, 6}, 1090 + s);
        auto segs = std::vector<std::pair<int, int>>{{0, 2}, {2, 4}};
        return gradcheck(
            [&](const std::vector<Array>& in) {
                PerceiverParams p = params;
                p.layer_params[0].wv = in[0];
                return sum_all(mul(teacher_forward(p, in[1], in[2], segs), w));
            },
            {params.layer_params[0].wv, feats, phrases});
    }));

    cases.push_back(detail::sweep("decoder_mam", [](uint64_t s) {
        DecoderConfig cfg;
        cfg.c_dim = 8;
        cfg.layers = 1;
        cfg.vocab = 7;
        cfg.max_len = 8;
        Rng rng(1130 + s);
        DecoderParams params = DecoderParams::init(cfg, rng);
        Array tokens = rnd({2, 8}, 1170 + s);
        std::vector<int> ids = {1, static_cast<int>(s % 7), 4, 2};
        return gradcheck(
            [&](const std::vector<Array>& in) {
                DecoderParams p = params;
                p.token_embed = in[0];
                p.layer_params[0].cq = in[1];
                p.out_proj = in[2];
                return mam_loss(decode_forward(p, ids, in[3]), ids);
            },
            {params.token_embed, params.layer_params[0].cq, params.out_proj, tokens});
    }));

    cases.push_back(detail::sweep("vtc_loss", [](uint64_t s) {
        Array video = rnd({3, 6}, 1210 + s);
        Array text = rnd({3, 6}, 1250 + s);
        Array hn0 = rnd({6}, 1290 + s);
        Array hn2 = rnd({6}, 1330 + s);
        return gradcheck(
            [&](const std::vector<Array>& in) {
                VtcBatch batch;
                batch.texts = {"a", "b", "c"};
                batch.text_embeds = in[1];
                batch.hn_owner = {0, 2};
                batch.hn_texts = {"a-neg", "c-neg"};
                batch.hn_embeds = {in[2], in[3]};
                return vtc_loss(in[0], batch, 0.5);
            },
            {video, text, hn0, hn2});
    }));

    return cases;
}

inline std::vector<GradCase> gradcheck_dtw_suite() {
    using detail::rnd;
    std::vector<GradCase> cases;

    cases.push_back(detail::sweep("soft_dtw", [](uint64_t s) {
        Rng rng(1400 + s);
        int k = 2 + static_cast<int>(rng.bounded(4));
        int m = 2 + static_cast<int>(rng.bounded(4));
        std::vector<double> cost(static_cast<size_t>(k) * m);
        for (auto& c : cost) c = rng.uniform() * 2.0;
        Array carr = Array::from({k, m}, cost);
        return gradcheck(
            [](const std::vector<Array>& in) { return soft_dtw(in[0], 0.1); }, {carr});
    }));

    cases.push_back(detail::sweep("soft_dtw_small_gamma", [](uint64_t s) {
        Rng rng(1440 + s);
        std::vector<double> cost(12);
        for (auto& c : cost) c = rng.uniform() * 2.0;
        Array carr = Array::from({4, 3}, cost);
        return gradcheck(
            [](const std::vector<Array>& in) { return soft_dtw(in[0], 0.02); }, {carr},
            1e-6);
    }));

    cases.push_back(detail::sweep("order_loss", [](uint64_t s) {
        Array tokens = rnd({3, 5}, 1480 + s), phrases = rnd({2, 5}, 1520 + s);
        return gradcheck(
            [](const std::vector<Array>& in) {
                return order_loss(in[0], in[1], 5.0, 0.1);
            },
            {tokens, phrases});
    }));

    cases.push_back(detail::sweep("dtw_objective", [](uint64_t s) {
        Array t1 = rnd({3, 5}, 1560 + s), p1 = rnd({2, 5}, 1600 + s);
        Array t2 = rnd({2, 5}, 1640 + s), p2 = rnd({3, 5}, 1680 + s);
        return gradcheck(
            [](const std::vector<Array>& in) {
                return dtw_objective({{in[0], in[1]}, {in[2], in[3]}}, 0.5, 0.5, 0.1);
            },
            {t1, p1, t2, p2});
    }));

    return cases;
}

inline std::vector<GradCase> gradcheck_full_suite() {
    std::vector<GradCase> all = gradcheck_core_suite();
    std::vector<GradCase> dtw = gradcheck_dtw_suite();
    all.insert(all.end(), dtw.begin(), dtw.end());
    return all;
}

}  // namespace actalign
