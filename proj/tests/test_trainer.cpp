#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "actalign/trainer.hpp"

using namespace actalign;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_synth() {
    SynthConfig cfg;
    cfg.t_frames = 8;
    cfg.n_patches = 2;
    cfg.c_dim = 16;
    cfg.train_clips = 40;
    cfg.eval_clips = 12;
    cfg.semantic_items = 8;
    cfg.logic_items = 8;
    return cfg;
}

TrainConfig tiny_train(uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 4;
    cfg.k_latents = 3;
    cfg.steps = 4;
    cfg.max_len = 32;
    return cfg;
}

TrainState make_state(const Dataset& ds, const TrainConfig& cfg) {
    Vocab vocab = Vocab::build(vocab_texts(ds));
    const auto& c0 = ds.clips.front();
    return TrainState{Model::init(cfg, vocab, c0.t, c0.n, c0.c)};
}

std::vector<const SyntheticClip*> train_split(const Dataset& ds) {
    std::vector<const SyntheticClip*> out;
    for (const auto& clip : ds.clips)
        if (clip.split == "train") out.push_back(&clip);
    return out;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("vtc loss closed form on orthogonal matched pairs") {
    VtcBatch batch;
    batch.texts = {"a", "b"};
    batch.text_embeds = Array::from({2, 2}, {1, 0, 0, 1});
    Array video = Array::from({2, 2}, {1, 0, 0, 1});
    double loss = vtc_loss(video, batch, 1.0).item();
    double expect = std::log(1.0 + std::exp(-1.0));
    REQUIRE(loss == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("hard negatives enter only their owner's candidate set") {
    VtcBatch batch;
    batch.texts = {"a", "b"};
    batch.text_embeds = Array::from({2, 2}, {1, 0, 0, 1});
    batch.hn_owner = {0};
    batch.hn_texts = {"a-neg"};
    batch.hn_embeds = {Array::from({2}, {3, 1})};
    Array video = Array::from({2, 2}, {1, 0, 0, 1});
    double loss = vtc_loss(video, batch, 1.0).item();

    // Scalar re-derivation: row 0 sees {text0, text1, hn}; row 1 sees
    // {text0, text1}; t2v is the plain 2x2 game.
    double hn_cos = 3.0 / std::sqrt(10.0);
    double row0 = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0 + std::exp(hn_cos)));
    double row1 = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    double v2t = (row0 + row1) / 2.0;
    double t2v = row1;  // both rows identical by symmetry
    REQUIRE(loss == Catch::Approx(0.5 * (v2t + t2v)).margin(1e-12));

    // The same negative owned by the other row changes the loss.
    batch.hn_owner = {1};
    REQUIRE(vtc_loss(video, batch, 1.0).item() != Catch::Approx(loss).margin(1e-12));
}

TEST_CASE("vtc requires a real batch") {
    VtcBatch batch;
    batch.texts = {"a"};
    batch.text_embeds = Array::from({1, 2}, {1, 0});
    Array video = Array::from({1, 2}, {1, 0});
    REQUIRE_THROWS_AS(vtc_loss(video, batch, 1.0), config_error);
}

TEST_CASE("batch builder rejects colliding hard negatives") {
    Dataset ds = build_dataset(tiny_synth(), 3);
    TrainState state = make_state(ds, tiny_train());
    auto train = train_split(ds);

    // An HN identical to its own caption is dropped.
    SyntheticClip self_dup = *train[0];
    self_dup.negatives = {{self_dup.caption.id, NegKind::VerbAltered, self_dup.caption.text}};
    SyntheticClip clean = *train[1];
    clean.negatives.clear();
    std::vector<const SyntheticClip*> items = {&self_dup, &clean};
    VtcBatch b1 = build_vtc_batch(state.model, items, true, true);
    REQUIRE(b1.hn_embeds.empty());

    // An HN that duplicates another item's positive is dropped by the tag check.
    SyntheticClip cross_dup = *train[2];
    cross_dup.negatives = {{cross_dup.caption.id, NegKind::VerbAltered,
                            train[3]->caption.text}};
    SyntheticClip clean2 = *train[3];
    clean2.negatives.clear();
    std::vector<const SyntheticClip*> items2 = {&cross_dup, &clean2};
    VtcBatch b2 = build_vtc_batch(state.model, items2, true, true);
    REQUIRE(b2.hn_embeds.empty());

    // Ordinary negatives survive.
    VtcBatch b3 = build_vtc_batch(state.model, {train[0], train[1]}, true, true);
    REQUIRE_FALSE(b3.hn_embeds.empty());

    // Duplicate positives are a data error.
    std::vector<const SyntheticClip*> dup = {train[0], train[0]};
    REQUIRE_THROWS_AS(build_vtc_batch(state.model, dup, true, true), value_error);
}

TEST_CASE("hard negative kind toggles select which negatives are used") {
    Dataset ds = build_dataset(tiny_synth(), 4);
    TrainState state = make_state(ds, tiny_train());
    auto train = train_split(ds);
    const SyntheticClip* multi = nullptr;
    for (const auto* c : train)
        if (c->negatives.size() == 2) {
            multi = c;
            break;
        }
    REQUIRE(multi != nullptr);
    std::vector<const SyntheticClip*> items = {multi, train[0] == multi ? train[1] : train[0]};
    VtcBatch verb_only = build_vtc_batch(state.model, items, true, false);
    for (size_t i = 0; i < verb_only.hn_texts.size(); ++i) REQUIRE(!verb_only.hn_texts.empty());
    VtcBatch both = build_vtc_batch(state.model, items, true, true);
    REQUIRE(both.hn_embeds.size() >= verb_only.hn_embeds.size());
    VtcBatch none = build_vtc_batch(state.model, items, false, false);
    REQUIRE(none.hn_embeds.empty());
}

TEST_CASE("loss breakdown components sum to the weighted total") {
    Dataset ds = build_dataset(tiny_synth(), 5);
    TrainConfig cfg = tiny_train(7);
    cfg.lambda_vtc = 0.7;
    cfg.lambda_distill = 1.3;
    cfg.lambda_dtw = 0.4;
    cfg.lambda_mam = 2.0;
    TrainState state = make_state(ds, cfg);
    auto train = train_split(ds);
    std::vector<const SyntheticClip*> batch(train.begin(), train.begin() + 4);
    LossBreakdown out = train_step(state, batch);
    double recomputed = 0.7 * out.vtc + 1.3 * out.distill + 0.4 * out.dtw + 2.0 * out.mam;
    REQUIRE(out.total == Catch::Approx(recomputed).margin(1e-12));
    REQUIRE(out.vtc > 0.0);
    REQUIRE(out.mam > 0.0);
}

TEST_CASE("zero-weighted terms leave the update bitwise unchanged") {
    Dataset ds = build_dataset(tiny_synth(), 6);
    TrainConfig a = tiny_train(11);
    a.lambda_distill = 0.0;
    a.lambda_dtw = 0.0;
    a.lambda_mam = 0.0;
    TrainConfig b = a;
    b.mask_prob = 0.123;  // only observable if the masked term actually ran
    b.mask_scope = "phrase";
    b.beta = 9.0;

    TrainState sa = make_state(ds, a);
    TrainState sb = make_state(ds, b);
    auto train = train_split(ds);
    std::vector<const SyntheticClip*> batch(train.begin(), train.begin() + 4);
    train_step(sa, batch);
    train_step(sb, batch);
    for (size_t pi = 0; pi < sa.model.params.items.size(); ++pi) {
        auto va = sa.model.params.items[pi].second.values();
        auto vb = sb.model.params.items[pi].second.values();
        for (size_t k = 0; k < va.size(); ++k) REQUIRE(va[k] == vb[k]);
    }
}

TEST_CASE("training runs are deterministic given seed and config") {
    Dataset ds = build_dataset(tiny_synth(), 8);
    fs::path dir = fs::temp_directory_path() / "actalign_train_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const char* name : {"a", "b"}) {
        TrainState state = make_state(ds, tiny_train(21));
        train_loop(state, ds, [](const StepLog&) {});
        save_checkpoint(state, (dir / name).string());
    }
    REQUIRE(file_bytes(dir / "a") == file_bytes(dir / "b"));
    fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Dataset ds = build_dataset(tiny_synth(), 9);
    TrainState state = make_state(ds, tiny_train(31));
    auto train = train_split(ds);
    std::vector<const SyntheticClip*> batch(train.begin(), train.begin() + 4);
    train_step(state, batch);

    fs::path dir = fs::temp_directory_path() / "actalign_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    fs::path ckpt = dir / "model.ckpt";
    save_checkpoint(state, ckpt.string());
    TrainState back = load_checkpoint(ckpt.string());

    REQUIRE(back.step == state.step);
    const SyntheticClip* probe = train[5];
    Array t1 = clip_student_tokens(state.model, *probe);
    Array t2 = clip_student_tokens(back.model, *probe);
    for (size_t i = 0; i < t1.size(); ++i) REQUIRE(t1.values()[i] == t2.values()[i]);
    Array e1 = encode_caption(state.model, probe->caption.text);
    Array e2 = encode_caption(back.model, probe->caption.text);
    for (size_t i = 0; i < e1.size(); ++i) REQUIRE(e1.values()[i] == e2.values()[i]);

    SECTION("corrupt magic is a format error") {
        std::string bytes = file_bytes(ckpt);
        bytes[0] = 'X';
        std::ofstream(dir / "bad_magic.ckpt", std::ios::binary) << bytes;
        REQUIRE_THROWS_AS(load_checkpoint((dir / "bad_magic.ckpt").string()), io_error);
    }

    SECTION("renamed tensor is a schema error") {
        std::string bytes = file_bytes(ckpt);
        size_t pos = bytes.find("perceiver.latents");
        REQUIRE(pos != std::string::npos);
        bytes[pos + 16] = 'z';  // perceiver.latentz
        std::ofstream(dir / "bad_schema.ckpt", std::ios::binary) << bytes;
        REQUIRE_THROWS_AS(load_checkpoint((dir / "bad_schema.ckpt").string()), io_error);
    }

    SECTION("truncated tensor data is an io error") {
        std::string bytes = file_bytes(ckpt);
        bytes.resize(bytes.size() / 2);
        std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes;
        REQUIRE_THROWS_AS(load_checkpoint((dir / "short.ckpt").string()), io_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("resume reproduces the uninterrupted run") {
    Dataset ds = build_dataset(tiny_synth(), 10);
    TrainConfig cfg = tiny_train(41);
    cfg.steps = 6;

    TrainState full = make_state(ds, cfg);
    train_loop(full, ds, [](const StepLog&) {});

    fs::path dir = fs::temp_directory_path() / "actalign_resume";
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig half = cfg;
    half.steps = 3;
    TrainState first = make_state(ds, half);
    train_loop(first, ds, [](const StepLog&) {});
    save_checkpoint(first, (dir / "half.ckpt").string());

    TrainState second = load_checkpoint((dir / "half.ckpt").string());
    second.model.cfg.steps = 6;
    train_loop(second, ds, [](const StepLog&) {});

    for (size_t pi = 0; pi < full.model.params.items.size(); ++pi) {
        auto va = full.model.params.items[pi].second.values();
        auto vb = second.model.params.items[pi].second.values();
        for (size_t k = 0; k < va.size(); ++k) REQUIRE(va[k] == vb[k]);
    }
    fs::remove_all(dir);
}

TEST_CASE("epoch planning yields full deduplicated batches") {
    Dataset ds = build_dataset(tiny_synth(), 12);
    auto train = train_split(ds);
    auto batches = plan_epoch(train, 4, 99, 0);
    REQUIRE_FALSE(batches.empty());
    for (const auto& b : batches) {
        REQUIRE(b.size() == 4);
        std::set<std::string> texts;
        for (const auto* c : b) REQUIRE(texts.insert(c->caption.text).second);
    }
    auto again = plan_epoch(train, 4, 99, 0);
    REQUIRE(again.size() == batches.size());
    for (size_t i = 0; i < batches.size(); ++i)
        for (size_t j = 0; j < 4; ++j)
            REQUIRE(batches[i][j]->caption.id == again[i][j]->caption.id);

    auto other_epoch = plan_epoch(train, 4, 99, 1);
    bool differs = other_epoch.size() != batches.size();
    for (size_t i = 0; !differs && i < batches.size(); ++i)
        for (size_t j = 0; !differs && j < 4; ++j)
            differs = other_epoch[i][j]->caption.id != batches[i][j]->caption.id;
    REQUIRE(differs);
}

TEST_CASE("short training run reduces the loss") {
    Dataset ds = build_dataset(tiny_synth(), 13);
    TrainConfig cfg = tiny_train(51);
    cfg.steps = 60;
    TrainState state = make_state(ds, cfg);
    double first = -1.0, last = -1.0;
    train_loop(state, ds, [&](const StepLog& log) {
        if (log.step == 1) first = log.losses.total;
        last = log.losses.total;
    });
    REQUIRE(first > 0.0);
    REQUIRE(last < 0.9 * first);
}

TEST_CASE("cross-eval preset flips hard negative kinds") {
    KvConfig kv = KvConfig::parse_text("preset = cross_eval\ncross_eval_task = semantic\n");
    TrainConfig sem = TrainConfig::from_kv(kv);
    REQUIRE_FALSE(sem.hn_verb);
    REQUIRE(sem.hn_order);

    KvConfig kv2 = KvConfig::parse_text("preset = cross_eval\ncross_eval_task = logic\n");
    TrainConfig log_cfg = TrainConfig::from_kv(kv2);
    REQUIRE(log_cfg.hn_verb);
    REQUIRE_FALSE(log_cfg.hn_order);

    KvConfig kv3 = KvConfig::parse_text("preset = cross_eval\n");
    REQUIRE_THROWS_AS(TrainConfig::from_kv(kv3), config_error);
}

TEST_CASE("train config validation") {
    KvConfig bad_key = KvConfig::parse_text("lambda_vtcc = 1\n");
    REQUIRE_THROWS_AS(TrainConfig::from_kv(bad_key), config_error);

    KvConfig bad_alpha = KvConfig::parse_text("alpha = 1.5\n");
    REQUIRE_THROWS_AS(TrainConfig::from_kv(bad_alpha), config_error);

    KvConfig small_batch = KvConfig::parse_text("batch_size = 1\n");
    REQUIRE_THROWS_AS(TrainConfig::from_kv(small_batch), config_error);
}
