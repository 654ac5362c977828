#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lipsync/syncnet/syncnet.hpp"
#include "lipsync/syncnet/train.hpp"
#include "lipsync/synth/synth.hpp"

using namespace lipsync;
namespace fs = std::filesystem;

namespace {

std::vector<AVClip> tiny_corpus(int n_clips, int frames, int size, uint64_t seed, double noise = 0.0) {
    SynthSpec spec;
    spec.n_clips = n_clips;
    spec.frames_per_clip = frames;
    spec.frame_size = size;
    spec.noise_level = noise;
    spec.seed = seed;
    return generate_corpus(spec);
}

// smallest trainable config for fast unit runs
SyncNetConfig micro_config() {
    SyncNetConfig c = SyncNetConfig::toy();
    c.input_size = 32;
    c.base_width = 8;
    c.embed_dim = 32;
    c.batch_size = 32;
    return c;
}

}  // namespace

TEST_CASE("visual encoder shape contract across configs") {
    // paper-scale shape: 16 frames at 256x256 -> R^2048 (tiny width to keep
    // the forward cheap)
    SyncNetConfig big;
    big.frames = 16;
    big.embed_dim = 2048;
    big.input_size = 256;
    big.base_width = 4;
    StableSyncNet<float> net(big, 3);
    Graph<float> g;
    Rng rng(5);
    Var v = net.embed_visual(g, g.input(Tensor32::rand_uniform({1, 48, 256, 256}, rng)));
    CHECK(g.shape(v) == Shape{1, 2048});
    Var a = net.embed_audio(g, g.input(Tensor32::rand_uniform({1, 1, 80, 64}, rng)));
    CHECK(g.shape(a) == Shape{1, 2048});

    // wav2lip baseline modified for 256x256 input
    SyncNetConfig base = big;
    base.arch = SyncArch::wav2lip_baseline;
    StableSyncNet<float> bnet(base, 3);
    Graph<float> g2;
    Var vb = bnet.embed_visual(g2, g2.input(Tensor32::rand_uniform({1, 48, 256, 256}, rng)));
    CHECK(g2.shape(vb) == Shape{1, 2048});

    // toy config: 64x64, d=64
    SyncNetConfig toy = SyncNetConfig::toy();
    StableSyncNet<float> tnet(toy, 3);
    Graph<float> g3;
    Var vt = tnet.embed_visual(g3, g3.input(Tensor32::rand_uniform({2, 15, 64, 64}, rng)));
    CHECK(g3.shape(vt) == Shape{2, 64});

    // F=5 audio: 80x20 mel
    Var at = tnet.embed_audio(g3, g3.input(Tensor32::rand_uniform({2, 1, 80, 20}, rng)));
    CHECK(g3.shape(at) == Shape{2, 64});

    // wrong input size is a config error
    CHECK_THROWS_AS(tnet.embed_visual(g3, g3.input(Tensor32::zeros({1, 15, 32, 32}))), ConfigError);
}

TEST_CASE("embeddings are unit-norm and nonnegative; silent mel stays finite") {
    StableSyncNet<float> net(micro_config(), 7);
    Graph<float> g;
    Rng rng(9);
    Var v = net.embed_visual(g, g.input(Tensor32::rand_uniform({4, 15, 32, 32}, rng)));
    const Tensor32& e = g.val(v);
    for (int b = 0; b < 4; ++b) {
        double norm = 0;
        for (int k = 0; k < 32; ++k) {
            const float x = e[b * 32 + k];
            CHECK(x >= 0.f);
            norm += static_cast<double>(x) * x;
        }
        CHECK(std::abs(norm - 1.0) < 1e-5);
    }

    // silent audio: all mel bins at the log floor; embedding must be finite
    MelExtractor mel;
    std::vector<float> silence(5 * 640, 0.f);
    const Tensor32 m = mel.frames(silence, 0, 5).bins;
    Graph<float> g2;
    Var a = net.embed_audio(g2, g2.input(m.reshaped({1, 1, 80, 20})));
    CHECK(g2.val(a).all_finite());
}

TEST_CASE("similarity probability: self, orthogonal, midpoint, bounds, symmetry") {
    StableSyncNet<float> net(micro_config(), 11);
    Graph<float> g;

    Tensor32 e1({1, 32});
    e1[0] = 1.f;  // unit basis vector
    Tensor32 e2({1, 32});
    e2[1] = 1.f;  // orthogonal unit vector
    Tensor32 mid({1, 32});
    mid[0] = 0.5f;
    mid[1] = std::sqrt(0.75f);  // cos against e1 = 0.5

    Var q_self = net.similarity(g, g.input(e1), g.input(e1));
    CHECK(g.val(q_self)[0] == doctest::Approx(1.0 - kSimilarityEps));
    Var q_orth = net.similarity(g, g.input(e1), g.input(e2));
    CHECK(g.val(q_orth)[0] == doctest::Approx(kSimilarityEps));
    Var q_mid = net.similarity(g, g.input(e1), g.input(mid));
    CHECK(g.val(q_mid)[0] == doctest::Approx(0.5).epsilon(1e-6));
    Var q_sym = net.similarity(g, g.input(mid), g.input(e1));
    CHECK(g.val(q_sym)[0] == g.val(q_mid)[0]);

    // q stays inside [eps, 1-eps] for arbitrary real embeddings
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        Graph<float> gt;
        Var a = gt.l2_normalize_rows(gt.input(Tensor32::randn({3, 32}, rng)));
        Var b = gt.l2_normalize_rows(gt.input(Tensor32::randn({3, 32}, rng)));
        Var q = net.similarity(gt, a, b);
        for (int i = 0; i < 3; ++i) {
            CHECK(gt.val(q)[i] >= static_cast<float>(kSimilarityEps));
            CHECK(gt.val(q)[i] <= static_cast<float>(1.0 - kSimilarityEps));
        }
    }
}

TEST_CASE("contrastive loss: ln2 floor, perfect model, hand value, A/B derivation") {
    Graph<double> g;

    // q == 0.5 everywhere -> ln 2, via the exact A-positives/B-negatives sum
    for (const auto& [a_count, b_count] : std::vector<std::pair<int, int>>{{8, 8}, {5, 11}, {13, 3}}) {
        const int n = a_count + b_count;
        Tensor64 q = Tensor64::full({n}, 0.5);
        Tensor64 labels({n});
        for (int i = 0; i < n; ++i) labels[i] = i < a_count ? 1.0 : 0.0;
        Var loss = contrastive_loss(g, g.input(q), labels);
        const double direct = -(a_count * std::log(0.5) + b_count * std::log(0.5)) / n;
        CHECK(g.val(loss)[0] == doctest::Approx(direct).epsilon(1e-12));
        CHECK(g.val(loss)[0] == doctest::Approx(0.6931).epsilon(1e-3));
        CHECK(g.val(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }

    // perfect model
    Tensor64 qp({4}, {1.0 - 1e-7, 1.0 - 1e-7, 1e-7, 1e-7});
    Tensor64 lp({4}, {1.0, 1.0, 0.0, 0.0});
    Var perfect = contrastive_loss(g, g.input(qp), lp);
    CHECK(g.val(perfect)[0] < 1e-5);

    // single positive with q = 0.25 -> -ln 0.25
    Tensor64 q1 = Tensor64::scalar(0.25);
    Tensor64 l1 = Tensor64::scalar(1.0);
    Var single = contrastive_loss(g, g.input(q1), l1);
    CHECK(g.val(single)[0] == doctest::Approx(1.3863).epsilon(1e-4));

    Tensor64 empty({1});
    CHECK_THROWS_AS(contrastive_loss(g, g.input(Tensor64::zeros({1})), Tensor64({1}, {0.5})), NumericError);
}

TEST_CASE("sample_pairs: balance, negative construction, reproducibility") {
    const auto clips = tiny_corpus(4, 60, 32, 41);
    SyncNetConfig cfg = micro_config();
    SyncDataset<float> data(clips, cfg);

    Rng rng(17);
    int positives = 0;
    const int draws = 10000;
    int batches = draws / 100;
    for (int b = 0; b < batches; ++b) {
        const auto batch = data.sample_pairs(100, rng);
        for (const PairInfo& p : batch.pairs) {
            if (p.positive) {
                ++positives;
                CHECK(p.visual_clip == p.audio_clip);
                CHECK(p.visual_frame == p.audio_frame);
            } else {
                const bool cross = p.visual_clip != p.audio_clip;
                const bool disjoint = std::abs(p.audio_frame - p.visual_frame) >= cfg.frames;
                CHECK((cross || disjoint));
            }
        }
    }
    const double frac = static_cast<double>(positives) / draws;
    CHECK(frac == doctest::Approx(0.5).epsilon(0.04));

    // fixed seed reproduces the batch bit for bit
    Rng r1(23), r2(23);
    const auto b1 = data.sample_pairs(16, r1);
    const auto b2 = data.sample_pairs(16, r2);
    for (int64_t i = 0; i < b1.visual.numel(); ++i) CHECK(b1.visual[i] == b2.visual[i]);
    for (int64_t i = 0; i < b1.mel.numel(); ++i) CHECK(b1.mel[i] == b2.mel[i]);

    // corpus too small: one clip shorter than two windows
    const auto one = tiny_corpus(1, 8, 32, 43);
    CHECK_THROWS_AS(SyncDataset<float>(one, cfg), ConfigError);
}

TEST_CASE("detect_loss_floor diagnoses stuck, converging, diverged") {
    std::vector<double> stuck(800, 0.693);
    CHECK(detect_loss_floor(stuck) == LossFloorDiagnosis::STUCK);

    std::vector<double> conv(800);
    for (size_t i = 0; i < conv.size(); ++i) conv[i] = 0.2 + 0.6 * std::exp(-static_cast<double>(i) / 80.0);
    CHECK(detect_loss_floor(conv) == LossFloorDiagnosis::CONVERGING);

    std::vector<double> div(800);
    for (size_t i = 0; i < div.size(); ++i) div[i] = 0.7 + 1.0 * i / div.size();  // rises past 1.5
    CHECK(detect_loss_floor(div) == LossFloorDiagnosis::DIVERGED);

    std::vector<double> nanny(600, 0.5);
    nanny[599] = std::nan("");
    CHECK(detect_loss_floor(nanny) == LossFloorDiagnosis::DIVERGED);

    std::vector<double> missing(100, 0.69);
    CHECK_THROWS_AS(detect_loss_floor(missing), BoundsError);

    // passing through the floor band with a real slope is not stuck
    std::vector<double> through(800);
    for (size_t i = 0; i < through.size(); ++i) through[i] = 1.0 - 0.0004 * i;
    CHECK(detect_loss_floor(through) == LossFloorDiagnosis::CONVERGING);
}

TEST_CASE("probability scatter: record count and untrained spread") {
    const auto clips = tiny_corpus(2, 40, 32, 47);
    SyncNetConfig cfg = micro_config();
    SyncDataset<float> data(clips, cfg);
    StableSyncNet<float> net(cfg, 51);
    Rng rng(53);
    const auto batch = data.sample_pairs(256, rng);
    const auto records = probability_scatter(net, batch, 700);
    CHECK(records.size() == 256);
    for (const auto& r : records) {
        CHECK(r.step == 700);
        CHECK(r.q >= kSimilarityEps);
        CHECK(r.q <= 1.0 - kSimilarityEps);
    }
}

TEST_CASE("random model sits at chance accuracy on balanced pairs") {
    const auto clips = tiny_corpus(3, 50, 32, 59);
    SyncNetConfig cfg = micro_config();
    SyncDataset<float> data(clips, cfg);
    StableSyncNet<float> net(cfg, 61);
    Rng rng(63);
    const auto batch = data.sample_balanced(1000, rng);
    const double acc = evaluate_accuracy(net, batch);
    CHECK(acc == doctest::Approx(0.5).epsilon(0.06));

    SyncBatch<float> empty;
    empty.labels = Tensor32({1});
    empty.labels = Tensor32::zeros({1}).reshaped({1});
    CHECK_THROWS_AS(evaluate_accuracy(net, SyncBatch<float>{}), ConfigError);
}

TEST_CASE("toy training drives the loss well below the floor") {
    const auto clips = tiny_corpus(5, 60, 32, 67);
    auto [train_clips, val_clips] = split_train_val(clips, 0.2);
    SyncNetConfig cfg = micro_config();
    SyncDataset<float> train(train_clips, cfg);
    SyncDataset<float> val(val_clips, cfg);
    StableSyncNet<float> net(cfg, 71);

    SyncTrainOptions opt;
    opt.steps = 420;
    opt.lr = 2e-3;
    opt.seed = 73;
    opt.val_every = 50;
    opt.early_stop_loss = 0.25;
    opt.trailing_window = 50;
    const SyncTrainResult res = train_syncnet(net, train, &val, opt);
    CHECK(res.final_train_mean < 0.45);
    CHECK(res.best_val < 0.6);

    Rng rng(79);
    const auto test_batch = val.sample_balanced(200, rng);
    CHECK(evaluate_accuracy(net, test_batch) > 0.8);
}

TEST_CASE("label-shuffled training pins the loss to the 0.69 floor") {
    const auto clips = tiny_corpus(3, 50, 32, 83);
    SyncNetConfig cfg = micro_config();
    cfg.batch_size = 16;
    SyncDataset<float> data(clips, cfg);
    StableSyncNet<float> net(cfg, 87);
    SyncTrainOptions opt;
    opt.steps = 520;
    opt.lr = 1e-3;
    opt.seed = 89;
    const SyncTrainResult res = train_syncnet(net, data, nullptr, opt);
    opt.shuffle_labels = true;
    StableSyncNet<float> shuffled(cfg, 87);
    const SyncTrainResult sres = train_syncnet(shuffled, data, nullptr, opt);
    CHECK(sres.final_train_mean > 0.65);
    CHECK(sres.final_train_mean < 0.73);
    CHECK(detect_loss_floor(sres.train_curve) == LossFloorDiagnosis::STUCK);
    // the informative run does better than the shuffled one
    CHECK(res.final_train_mean < sres.final_train_mean);
}

TEST_CASE("divergence aborts with a numeric diagnostic") {
    const auto clips = tiny_corpus(2, 40, 32, 91);
    SyncNetConfig cfg = micro_config();
    cfg.batch_size = 8;
    SyncDataset<float> data(clips, cfg);
    StableSyncNet<float> net(cfg, 93);
    SyncTrainOptions opt;
    opt.steps = 200;
    opt.lr = 1e18;  // guaranteed blow-up
    opt.grad_clip = 0;
    CHECK_THROWS_AS(train_syncnet(net, data, nullptr, opt), NumericError);
}

TEST_CASE("checkpoint round trip restores identical behavior") {
    const auto clips = tiny_corpus(2, 40, 32, 95);
    SyncNetConfig cfg = micro_config();
    SyncDataset<float> data(clips, cfg);
    StableSyncNet<float> net(cfg, 97);
    Rng rng(99);
    const auto batch = data.sample_pairs(8, rng);
    const double before = mean_loss_on(net, batch);

    const std::string path = (fs::temp_directory_path() / "syncnet_rt.ckpt").string();
    save_checkpoint<float>(path, net.params(), net.config().to_json(), {}, 5);
    const CheckpointMeta meta = read_checkpoint_meta(path);
    StableSyncNet<float> restored(SyncNetConfig::from_json(meta.config), 1234);
    load_checkpoint<float>(path, restored.params());
    CHECK(mean_loss_on(restored, batch) == doctest::Approx(before).epsilon(1e-7));
    fs::remove(path);
}

TEST_CASE("syncnet scorer batches consistently and feeds the offset scanner") {
    const auto clips = tiny_corpus(1, 80, 32, 101);
    SyncNetConfig cfg = micro_config();
    StableSyncNet<float> net(cfg, 103);
    SyncNetScorer<float> scorer(&net);
    CHECK(scorer.window_frames() == cfg.frames);

    const double s1 = scorer.score(clips[0], 10, 10);
    const double s2 = scorer.score(clips[0], 10, 30);
    const auto batch = scorer.score_batch(clips[0], {{10, 10}, {10, 30}});
    CHECK(batch[0] == doctest::Approx(s1).epsilon(1e-9));
    CHECK(batch[1] == doctest::Approx(s2).epsilon(1e-9));

    // runs end to end with an (untrained) model
    const OffsetScan scan = scan_av_offset(clips[0], scorer, 5);
    CHECK(scan.offset >= -5);
    CHECK(scan.offset <= 5);
    CHECK(scan.profile.size() == 11);
}
