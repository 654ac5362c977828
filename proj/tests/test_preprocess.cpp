#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lipsync/preprocess/affine.hpp"
#include "lipsync/preprocess/avclip.hpp"
#include "lipsync/preprocess/ingest.hpp"
#include "lipsync/preprocess/mask.hpp"
#include "lipsync/preprocess/mel.hpp"
#include "lipsync/preprocess/offset.hpp"
#include "lipsync/synth/synth.hpp"

using namespace lipsync;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const std::string d = (fs::temp_directory_path() / name).string();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

double psnr_face_region(const ImageU8& a, const ImageU8& b, const AffineTransform& t, double margin) {
    double se = 0;
    int64_t n = 0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            double cx, cy;
            t.apply(x, y, cx, cy);
            if (cx < margin || cy < margin || cx > t.out_size - 1 - margin || cy > t.out_size - 1 - margin)
                continue;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = static_cast<double>(a.at(y, x, ch)) - b.at(y, x, ch);
                se += d * d;
                ++n;
            }
        }
    REQUIRE(n > 0);
    const double mse = se / n;
    return 10.0 * std::log10(255.0 * 255.0 / std::max(mse, 1e-12));
}

// ground-truth-track scorer: an oracle stand-in for the trained sync network
struct CorrelationScorer : SyncScorer {
    int F;
    explicit CorrelationScorer(int frames = 16) : F(frames) {}
    int window_frames() const override { return F; }
    double score(const AVClip& clip, int fv, int fa) const override {
        const std::vector<float> env = audio_envelope(clip.audio, clip.frame_count());
        const double c = pearson(clip.gt_mouth.data() + fv, env.data() + fa, F);
        return 0.5 * (c + 1.0);
    }
};

}  // namespace

TEST_CASE("ingest: passthrough is bit-identical, resampling hits 25fps/16kHz") {
    SynthSpec spec;
    spec.n_clips = 1;
    spec.frames_per_clip = 50;  // 2 s
    spec.frame_size = 64;
    spec.seed = 5;
    auto clips = generate_corpus(spec);
    CHECK(clips[0].frame_count() == 50);
    CHECK(clips[0].audio.size() == 32000);

    const std::string dir = temp_dir("lipsync_ingest");
    save_clip(dir + "/c0", clips[0]);
    AVClip back = ingest(dir + "/c0");
    CHECK(back.frame_count() == 50);
    CHECK(back.video.data == clips[0].video.data);  // identity passthrough
    CHECK(back.audio.size() == 32000);

    // fake a 30 fps / 44.1 kHz source by relabeling and stretching
    AVClip odd = clips[0];
    odd.fps = 30.0;
    odd.sample_rate = 44100;
    std::vector<float> stretched(static_cast<size_t>(50.0 / 30.0 * 44100.0));
    for (size_t i = 0; i < stretched.size(); ++i)
        odd.audio.size() ? stretched[i] = odd.audio[i % odd.audio.size()] : 0.f;
    odd.audio = stretched;
    save_clip(dir + "/c1", odd);
    AVClip conv = ingest(dir + "/c1");
    CHECK(conv.fps == doctest::Approx(25.0));
    CHECK(conv.sample_rate == 16000);
    CHECK(conv.frame_count() == 42);  // round(50 * 25/30)
    CHECK(conv.audio.size() == static_cast<size_t>(42 * 640));
    conv.validate();

    // >20% missing landmarks is a quality failure
    AVClip holey = clips[0];
    for (int f = 0; f < 15; ++f)
        for (int i = 0; i < 10; ++i) holey.landmarks[f * 10 + i] = std::nanf("");
    save_clip(dir + "/c2", holey);
    CHECK_THROWS_AS(ingest(dir + "/c2"), QualityError);

    CHECK_THROWS_AS(ingest(dir + "/missing"), IngestError);
    fs::remove_all(dir);
}

TEST_CASE("frontalize: canonical landmarks give an identity-scale transform") {
    SynthSpec spec;
    spec.n_clips = 1;
    spec.frames_per_clip = 2;
    spec.frame_size = 256;
    spec.seed = 9;
    auto clips = generate_corpus(spec);
    const auto [crop, t] = frontalize(clips[0].video.image(0), clips[0].frame_landmarks(0), 256);
    CHECK(std::abs(t.m[0] - 1.0) < 1e-6);
    CHECK(std::abs(t.m[1]) < 1e-6);
    CHECK(std::abs(t.m[2]) < 1e-4);
    CHECK(std::abs(t.m[4] - 1.0) < 1e-6);

    // canonical targets hit within 1 px
    const Tensor64 tmpl = canonical_landmark_template();
    const Tensor32 lm = clips[0].frame_landmarks(0);
    for (int i = 0; i < 5; ++i) {
        double ox, oy;
        t.apply(lm.at({i, 0}) * 256.0, lm.at({i, 1}) * 256.0, ox, oy);
        CHECK(std::abs(ox - tmpl.at({i, 0}) * 256) < 1.0);
        CHECK(std::abs(oy - tmpl.at({i, 1}) * 256) < 1.0);
    }
}

TEST_CASE("frontalize: rotated face comes back with horizontal eyes") {
    SynthSpec spec;
    spec.n_clips = 1;
    spec.frames_per_clip = 24;
    spec.frame_size = 256;
    spec.rotation_amp_deg = 30.0;
    spec.seed = 11;
    auto clips = generate_corpus(spec);

    // pick the frame with the steepest eye line
    int worst = 0;
    double worst_ang = 0;
    for (int f = 0; f < clips[0].frame_count(); ++f) {
        const Tensor32 lm = clips[0].frame_landmarks(f);
        const double ang = std::atan2(lm.at({1, 1}) - lm.at({0, 1}), lm.at({1, 0}) - lm.at({0, 0}));
        if (std::abs(ang) > std::abs(worst_ang)) {
            worst_ang = ang;
            worst = f;
        }
    }
    CHECK(std::abs(worst_ang) > 0.15);  // the corpus really is rotated

    const Tensor32 lm = clips[0].frame_landmarks(worst);
    const auto [crop, t] = frontalize(clips[0].video.image(worst), lm, 256);
    // recovered rotation matches the eye-line angle within 1 degree
    const double rec = std::atan2(t.m[3], t.m[0]);
    CHECK(std::abs(rec - (-worst_ang)) < 1.0 * M_PI / 180.0);
    // eyes horizontal in the crop within 1 degree
    double lx, ly, rx, ry;
    t.apply(lm.at({0, 0}) * 256.0, lm.at({0, 1}) * 256.0, lx, ly);
    t.apply(lm.at({1, 0}) * 256.0, lm.at({1, 1}) * 256.0, rx, ry);
    CHECK(std::abs(std::atan2(ry - ly, rx - lx)) < 1.0 * M_PI / 180.0);
}

TEST_CASE("frontalize: collinear landmarks are a geometry error") {
    Tensor32 lm({5, 2});
    for (int i = 0; i < 5; ++i) {
        lm.at({i, 0}) = 0.1f + 0.15f * i;
        lm.at({i, 1}) = 0.2f + 0.1f * i;  // all on one line
    }
    ImageU8 frame(64, 64, 3);
    CHECK_THROWS_AS(frontalize(frame, lm, 64), GeometryError);

    Tensor64 same({3, 2});
    for (auto& v : same) v = 0.5;
    CHECK_THROWS_AS(check_landmarks_not_degenerate(same), GeometryError);
}

TEST_CASE("paste_back: identity transform overwrites the crop region exactly") {
    Rng rng(3);
    ImageU8 crop(64, 64, 3), frame(64, 64, 3);
    for (auto& v : crop.data) v = static_cast<uint8_t>(rng.uniform_int(256));
    for (auto& v : frame.data) v = static_cast<uint8_t>(rng.uniform_int(256));
    AffineTransform ident;
    ident.out_size = 64;
    const ImageU8 out = paste_back(crop, ident, frame, /*feather=*/0.0);
    CHECK(out.data == crop.data);
}

TEST_CASE("paste_back: pixels outside the footprint never change") {
    Rng rng(7);
    ImageU8 crop(64, 64, 3), frame(256, 256, 3);
    for (auto& v : crop.data) v = static_cast<uint8_t>(rng.uniform_int(256));
    for (auto& v : frame.data) v = static_cast<uint8_t>(rng.uniform_int(256));
    AffineTransform t;  // frame -> crop: crop covers frame pixels [96,160)
    t.out_size = 64;
    t.m = {1, 0, -96, 0, 1, -96};
    const ImageU8 out = paste_back(crop, t, frame);
    int64_t changed_outside = 0;
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) {
            const bool inside = x >= 95 && x <= 160 && y >= 95 && y <= 160;
            if (inside) continue;
            for (int ch = 0; ch < 3; ++ch)
                if (out.at(y, x, ch) != frame.at(y, x, ch)) ++changed_outside;
        }
    CHECK(changed_outside == 0);

    AffineTransform degenerate;
    degenerate.out_size = 64;
    degenerate.m = {1, 0, 0, 2, 0, 0};  // rank 1
    CHECK_THROWS_AS(paste_back(crop, degenerate, frame), GeometryError);
}

TEST_CASE("frontalize/paste_back round trip clears 30 dB over the face region") {
    SynthSpec spec;
    spec.n_clips = 1;
    spec.frames_per_clip = 8;
    spec.frame_size = 256;
    spec.rotation_amp_deg = 20.0;
    spec.seed = 13;
    auto clips = generate_corpus(spec);
    for (int f = 0; f < 4; ++f) {
        const ImageU8 frame = clips[0].video.image(f);
        const auto [crop, t] = frontalize(frame, clips[0].frame_landmarks(f), 256);
        const ImageU8 back = paste_back(crop, t, frame);
        CHECK(psnr_face_region(back, frame, t, 8.0) > 30.0);
    }
}

TEST_CASE("fixed mask: geometry, limits, fixedness") {
    MaskSpec spec;
    const Tensor32 mask = render_mask<float>(spec, 256);

    // mouth fully covered at scale 1, eyes untouched
    CHECK(mask.at({0, static_cast<int>(0.76 * 256), 128}) == 1.0f);
    CHECK(mask.at({0, static_cast<int>(0.84 * 256), 128}) == 1.0f);
    CHECK(mask.at({0, static_cast<int>(0.40 * 256), static_cast<int>(0.34 * 256)}) == 0.0f);
    double area = 0;
    for (const float v : mask) area += v;
    CHECK(area / (256.0 * 256.0) > 0.15);

    // masked crop zeroes the region; the mask is content-independent
    SynthSpec s;
    s.n_clips = 1;
    s.frames_per_clip = 2;
    s.frame_size = 256;
    s.seed = 17;
    auto clips = generate_corpus(s);
    const Tensor32 f0 = clips[0].video.image(0).to_chw<float>();
    const Tensor32 f1 = clips[0].video.image(1).to_chw<float>();
    const auto [m0, ch0] = apply_fixed_mask(f0, spec);
    const auto [m1, ch1] = apply_fixed_mask(f1, spec);
    for (int64_t i = 0; i < ch0.numel(); ++i) CHECK(ch0[i] == ch1[i]);
    const int64_t hw = 256 * 256;
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            if (ch0[p] == 1.0f) CHECK(m0[c * hw + p] == 0.0f);
            else CHECK(m0[c * hw + p] == f0[c * hw + p]);
        }

    // scale -> 0 limit: nothing masked
    MaskSpec tiny;
    tiny.scale = 1e-3;
    const auto [mt, cht] = apply_fixed_mask(f0, tiny);
    double covered = 0;
    for (const float v : cht) covered += v;
    CHECK(covered == 0.0);
    for (int64_t i = 0; i < f0.numel(); ++i) CHECK(mt[i] == f0[i]);

    MaskSpec bad;
    bad.scale = 0.0;
    CHECK_THROWS_AS(render_mask<float>(bad, 64), ConfigError);
    bad.scale = 1.5;
    CHECK_THROWS_AS(render_mask<float>(bad, 64), ConfigError);

    // smaller scale masks strictly less
    MaskSpec half;
    half.scale = 0.5;
    const Tensor32 mh = render_mask<float>(half, 256);
    double area_h = 0;
    for (const float v : mh) area_h += v;
    CHECK(area_h < area);
    CHECK(area_h > 0);

    // downsampling keeps values in [0,1] and the deep-inside/outside endpoints
    const Tensor32 small = downsample_mask(mask, 32);
    for (const float v : small) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(small.at({0, static_cast<int>(0.76 * 32), 16}) == 1.0f);
    CHECK(small.at({0, 2, 2}) == 0.0f);
}

TEST_CASE("mel: alignment, silence floor, tone band, concatenation") {
    MelExtractor mel;
    CHECK(mel.config().steps_per_frame() == 4);

    // 16 frames -> 64 steps
    std::vector<float> audio(16 * 640, 0.f);
    const MelWindow w = mel.frames(audio, 0, 16);
    CHECK(w.steps() == 64);
    CHECK(w.bins.dim(0) == 80);

    // silence sits exactly on the log floor
    for (const float v : w.bins) CHECK(v == mel.log_floor());

    // 440 Hz tone concentrates energy in the analytically matching band
    std::vector<float> tone(32 * 640);
    for (size_t i = 0; i < tone.size(); ++i)
        tone[i] = 0.7f * std::sin(2.0 * M_PI * 440.0 * i / 16000.0);
    const MelWindow tw = mel.frames(tone, 4, 20);
    int expect_band = 0;
    double best = 1e9;
    for (int m = 0; m < 80; ++m)
        if (std::abs(mel.band_center_hz(m) - 440.0) < best) {
            best = std::abs(mel.band_center_hz(m) - 440.0);
            expect_band = m;
        }
    // mid-window column, away from edge effects
    int argmax = 0;
    float vmax = -1e30f;
    for (int m = 0; m < 80; ++m) {
        const float v = tw.bins.at({m, 32});
        if (v > vmax) {
            vmax = v;
            argmax = m;
        }
    }
    CHECK(std::abs(argmax - expect_band) <= 1);

    // window for [f, f+n) is exactly the concatenation of per-frame windows
    Rng rng(23);
    std::vector<float> noise(20 * 640);
    for (auto& s : noise) s = static_cast<float>(0.5 * rng.normal());
    const MelWindow whole = mel.frames(noise, 3, 9);
    int col = 0;
    for (int f = 3; f < 9; ++f) {
        const MelWindow part = mel.frames(noise, f, f + 1);
        for (int s = 0; s < 4; ++s, ++col)
            for (int m = 0; m < 80; ++m) CHECK(part.bins.at({m, s}) == whole.bins.at({m, col}));
    }

    CHECK_THROWS_AS(mel.frames(audio, 0, 100), BoundsError);
    CHECK_THROWS_AS(mel.frames(audio, -1, 4), BoundsError);
}

TEST_CASE("offset scan recovers synthetic shifts with the oracle scorer") {
    SynthSpec spec;
    spec.n_clips = 1;
    spec.frames_per_clip = 120;
    spec.frame_size = 32;
    spec.seed = 29;
    auto clips = generate_corpus(spec);
    CorrelationScorer scorer(16);

    const OffsetScan zero = scan_av_offset(clips[0], scorer, 15);
    CHECK(zero.offset == 0);

    for (int k : {-10, -4, 3, 7, 10}) {
        AVClip shifted = shift_audio(clips[0], k);
        const OffsetScan scan = scan_av_offset(shifted, scorer, 15);
        CHECK(scan.offset == -k);
        // adjust-then-rescan lands on zero
        adjust_av_offset(shifted, scan.offset);
        CHECK(scan_av_offset(shifted, scorer, 15).offset == 0);
        CHECK(shifted.applied_offset == 0);
    }

    // too-short clip
    SynthSpec tiny = spec;
    tiny.frames_per_clip = 30;
    auto small = generate_corpus(tiny);
    CHECK_THROWS_AS(scan_av_offset(small[0], scorer, 15), BoundsError);

    // pure-noise audio scores below the in-sync confidence
    AVClip noisy = clips[0];
    Rng rng(31);
    for (auto& s : noisy.audio) s = static_cast<float>(0.5 * rng.normal());
    const OffsetScan ns = scan_av_offset(noisy, scorer, 15);
    const OffsetScan good = scan_av_offset(clips[0], scorer, 15);
    CHECK(ns.confidence < 0.75);
    CHECK(good.confidence > 0.9);
    CHECK(ns.confidence < good.confidence);
}

TEST_CASE("filter_by_confidence keeps scores at or above threshold") {
    std::vector<AVClip> clips(3);
    clips[0].sync_conf = 2.9;
    clips[1].sync_conf = 3.0;
    clips[2].sync_conf = 5.1;
    for (int i = 0; i < 3; ++i) clips[i].id = "c" + std::to_string(i);
    auto kept = filter_by_confidence(clips, 3.0);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].id == "c1");
    CHECK(kept[1].id == "c2");

    auto all = filter_by_confidence(clips, 0.0);
    CHECK(all.size() == 3);

    auto none = filter_by_confidence(clips, 99.0);
    CHECK(none.empty());

    std::vector<AVClip> unscored(1);
    CHECK_THROWS_AS(filter_by_confidence(unscored, 1.0), ConfigError);
}
