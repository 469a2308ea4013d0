#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "actalign/gradcheck.hpp"
#include "actalign/mam.hpp"
#include "actalign/rng.hpp"

using namespace actalign;

namespace {

DecoderParams small_decoder(int vocab, int layers, uint64_t seed, int c = 16) {
    DecoderConfig cfg;
    cfg.c_dim = c;
    cfg.layers = layers;
    cfg.vocab = vocab;
    cfg.max_len = 32;
    Rng rng(seed);
    return DecoderParams::init(cfg, rng);
}

}  // namespace

TEST_CASE("vocab round-trips and reserves special ids") {
    Vocab v = Vocab::build({"crack the egg", "whisk the egg and then pour the milk"});
    REQUIRE(v.id_to_token[Vocab::kPad] == "<pad>");
    REQUIRE(v.id_to_token[Vocab::kMask] == "<mask>");
    REQUIRE(v.has("crack"));
    REQUIRE(v.has("milk"));
    REQUIRE_THROWS_AS(v.id("quinoa"), value_error);
    try {
        v.id("quinoa");
    } catch (const value_error& e) {
        REQUIRE(std::string(e.what()).find("quinoa") != std::string::npos);
    }

    Vocab back = Vocab::from_json(v.to_json());
    REQUIRE(back.id_to_token == v.id_to_token);
}

TEST_CASE("mask caption behavior") {
    Vocab v = Vocab::build({"crack the egg"});
    std::vector<int> ids = v.encode("crack the egg");

    SECTION("probability one masks every verb token") {
        auto s = mask_caption(ids, {0}, 1.0, 5);
        REQUIRE(s.has_value());
        REQUIRE(s->input_ids[0] == Vocab::kMask);
        REQUIRE(s->input_ids[1] == ids[1]);
        REQUIRE(s->input_ids[2] == ids[2]);
        REQUIRE(s->target_ids == ids);
    }

    SECTION("a miss on every coin forces the first verb token") {
        for (uint64_t seed = 0; seed < 64; ++seed) {
            auto s = mask_caption(ids, {0}, 0.05, seed);
            REQUIRE(s.has_value());
            REQUIRE_FALSE(s->mask_positions.empty());
            REQUIRE(s->input_ids[0] == Vocab::kMask);  // only position 0 is maskable
        }
    }

    SECTION("non-verb tokens are never masked") {
        for (uint64_t seed = 0; seed < 64; ++seed) {
            auto s = mask_caption(ids, {0}, 0.5, seed);
            REQUIRE(s->input_ids[1] == ids[1]);
            REQUIRE(s->input_ids[2] == ids[2]);
        }
    }

    SECTION("captions without verbs are skipped") {
        REQUIRE_FALSE(mask_caption(ids, {}, 0.5, 1).has_value());
    }

    SECTION("mask probability is validated") {
        REQUIRE_THROWS_AS(mask_caption(ids, {0}, 0.0, 1), config_error);
        REQUIRE_THROWS_AS(mask_caption(ids, {0}, 1.5, 1), config_error);
    }
}

TEST_CASE("causal mask admits no leakage from future tokens") {
    for (int layers : {1, 2}) {
        DecoderParams params = small_decoder(12, layers, 100 + layers);
        Rng rng(7);
        Array tokens = Array::randn({3, 16}, rng);
        std::vector<int> ids = {4, 7, 2, 9, 5, 11};
        Array base = decode_forward(params, ids, tokens);
        for (size_t t0 = 0; t0 + 1 < ids.size(); ++t0) {
            std::vector<int> poked = ids;
            poked[t0 + 1] = (poked[t0 + 1] + 3) % 12;
            Array out = decode_forward(params, poked, tokens);
            for (size_t t = 0; t <= t0; ++t)
                for (int vcb = 0; vcb < 12; ++vcb)
                    REQUIRE(out.at(t, vcb) == base.at(t, vcb));
        }
    }
}

TEST_CASE("degenerate single-token vocabulary has zero loss") {
    DecoderParams params = small_decoder(1, 1, 3);
    Rng rng(4);
    Array tokens = Array::randn({2, 16}, rng);
    std::vector<int> ids = {0, 0, 0, 0};
    Array logits = decode_forward(params, ids, tokens);
    REQUIRE(mam_loss(logits, ids).item() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("cross-attention over action tokens is live") {
    DecoderParams params = small_decoder(10, 2, 8);
    Rng rng(9);
    Array tokens = Array::randn({3, 16}, rng);
    std::vector<int> ids = {1, 4, 7, 2};
    Array with_tokens = decode_forward(params, ids, tokens);
    Array with_shifted = decode_forward(params, ids, scale(tokens, -1.0));
    bool any_diff = false;
    for (size_t i = 0; i < with_tokens.size(); ++i)
        any_diff = any_diff || with_tokens.values()[i] != with_shifted.values()[i];
    REQUIRE(any_diff);
}

TEST_CASE("mam loss closed forms") {
    SECTION("saturated logits on the targets give zero loss") {
        std::vector<int> targets = {3, 1, 2, 0};
        std::vector<double> vals(4 * 4, 0.0);
        for (int t = 0; t < 3; ++t) vals[static_cast<size_t>(t) * 4 + targets[t + 1]] = 1000.0;
        Array logits = Array::from({4, 4}, vals);
        REQUIRE(mam_loss(logits, targets).item() == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("uniform logits cost (N-1) log V") {
        int n = 5, vocab = 7;
        Array logits = Array::zeros({n, vocab});
        std::vector<int> targets = {0, 1, 2, 3, 4};
        REQUIRE(mam_loss(logits, targets).item() ==
                Catch::Approx((n - 1) * std::log(vocab)).margin(1e-12));
    }

    SECTION("single-token sequences score nothing") {
        Array logits = Array::zeros({1, 4});
        REQUIRE(mam_loss(logits, {2}).item() == 0.0);
    }
}

TEST_CASE("decoder and loss pass gradcheck") {
    DecoderParams params = small_decoder(6, 1, 15, 8);
    Rng rng(16);
    Array tokens = Array::randn({2, 8}, rng);
    std::vector<int> ids = {1, 3, 5, 2};
    double err = gradcheck(
        [&](const std::vector<Array>& in) {
            DecoderParams p = params;
            p.token_embed = in[0];
            p.layer_params[0].sq = in[1];
            p.layer_params[0].ck = in[2];
            p.out_proj = in[3];
            return mam_loss(decode_forward(p, ids, in[4]), ids);
        },
        {params.token_embed, params.layer_params[0].sq, params.layer_params[0].ck,
         params.out_proj, tokens});
    REQUIRE(err < 1e-4);
}

TEST_CASE("sequence length guard") {
    DecoderParams params = small_decoder(6, 1, 20, 8);
    Rng rng(21);
    Array tokens = Array::randn({2, 8}, rng);
    std::vector<int> too_long(40, 1);
    REQUIRE_THROWS_AS(decode_forward(params, too_long, tokens), value_error);
}

TEST_CASE("two-layer decoder overfits a 16-caption fixture") {
    std::vector<std::string> texts = {
        "crack the egg",          "whisk the egg",        "pour the milk",
        "stir the batter",        "bake the bread",       "slice the tomato",
        "fry the onion",          "boil the water",       "chop the carrot",
        "grill the fish",         "mash the potato",      "drain the pasta",
        "toast the bread",        "steam the rice",       "chill the dough",
        "season the chicken",
    };
    Vocab vocab = Vocab::build(texts);

    DecoderConfig cfg;
    cfg.c_dim = 16;
    cfg.layers = 2;
    cfg.vocab = vocab.size();
    cfg.max_len = 8;
    Rng rng(33);
    DecoderParams params = DecoderParams::init(cfg, rng);

    std::vector<std::vector<int>> samples;
    std::vector<Array> conditions;
    for (const auto& t : texts) {
        samples.push_back(vocab.encode(t));
        conditions.push_back(Array::randn({2, cfg.c_dim}, rng));
    }

    ParamSet ps;
    params.collect(ps);
    double lr = 0.5;
    double loss_value = 1e9;
    int steps_used = 0;
    for (int step = 0; step < 500 && loss_value >= 0.05; ++step) {
        Array total = Array::scalar(0.0);
        for (size_t i = 0; i < samples.size(); ++i)
            total = add(total,
                        mam_loss(decode_forward(params, samples[i], conditions[i]),
                                 samples[i]));
        Array mean = scale(total, 1.0 / static_cast<double>(samples.size()));
        loss_value = mean.item();
        mean.backward();
        for (auto& [name, arr] : ps.items) {
            auto vals = arr.mut_values();
            auto grad = arr.grad();
            for (size_t k = 0; k < vals.size(); ++k) vals[k] -= lr * grad[k];
            arr.zero_grad();
        }
        steps_used = step + 1;
    }
    INFO("loss " << loss_value << " after " << steps_used << " steps");
    REQUIRE(loss_value < 0.05);
}
