#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/image.hpp"
#include "lipsync/core/rng.hpp"
#include "lipsync/preprocess/affine.hpp"
#include "lipsync/preprocess/avclip.hpp"

namespace lipsync {

enum class AudioModel { envelope_tone, formant_sweep };

// Procedurally correlated toy corpus: a rendered cartoon face whose mouth
// opening is a linear function of the audio amplitude envelope. Same spec +
// seed reproduces the corpus byte for byte.
struct SynthSpec {
    int n_clips = 8;
    int frames_per_clip = 120;
    int frame_size = 256;
    AudioModel audio_model = AudioModel::envelope_tone;
    double noise_level = 0.0;        // mouth jitter sigma, fraction of the opening range
    double distractor_level = 0.0;   // audio-uncorrelated flicker of near-mouth blobs
    double shortcut_cue_level = 0.0; // jaw shading tied to the current mouth opening
    double rotation_amp_deg = 0.0;   // head pose swing for frontalization tests
    uint64_t seed = 1;

    void validate() const {
        LIPSYNC_CHECK(n_clips > 0 && frames_per_clip > 0, ConfigError, "empty synth spec");
        LIPSYNC_CHECK(frame_size >= 32 && frame_size % 8 == 0, ConfigError,
                      "frame size must be a multiple of 8 and at least 32");
        LIPSYNC_CHECK(noise_level >= 0, ConfigError, "negative noise level");
    }
};

namespace synth_detail {

// smooth positive envelope: four random sinusoids squashed into [0.02, 1]
struct EnvelopeProcess {
    double freq[4], phase[4], amp[4];

    static EnvelopeProcess sample(Rng& rng) {
        EnvelopeProcess e;
        double total = 0;
        for (int j = 0; j < 4; ++j) {
            e.freq[j] = rng.uniform(0.4, 3.2);
            e.phase[j] = rng.uniform(0, 2 * M_PI);
            e.amp[j] = rng.uniform(0.3, 1.0);
            total += e.amp[j];
        }
        for (double& a : e.amp) a /= total;
        return e;
    }

    double operator()(double t) const {
        double raw = 0;
        for (int j = 0; j < 4; ++j) raw += amp[j] * std::sin(2 * M_PI * freq[j] * t + phase[j]);
        return std::clamp(0.5 + 0.5 * raw, 0.02, 1.0);
    }
};

struct FaceColors {
    uint8_t bg[3] = {70, 90, 120};
    uint8_t skin[3] = {210, 170, 140};
    uint8_t eye[3] = {245, 245, 245};
    uint8_t pupil[3] = {40, 40, 50};
    uint8_t nose[3] = {180, 130, 110};
    uint8_t lip[3] = {160, 70, 70};
    uint8_t cavity[3] = {25, 10, 10};
};

// near-mouth distractor blob centers (normalized coords); these straddle the
// mouth's 8x8 latent patches so flicker aliases into the lip region after
// patch encoding
inline const double kDistractors[4][2] = {{0.36, 0.72}, {0.64, 0.72}, {0.36, 0.82}, {0.64, 0.82}};
// jaw-shading cue centers, outside the full-face mask only at small scales
inline const double kJawCue[2][2] = {{0.25, 0.68}, {0.75, 0.68}};

}  // namespace synth_detail

// Mouth geometry shared by the renderer and the pixel-space openness probe.
struct MouthGeometry {
    static constexpr double center_x = 0.50;
    static constexpr double center_y = 0.76;
    static constexpr double half_width = 0.13;
    static constexpr double lip_half_height_min = 0.012;
    static constexpr double lip_half_height_max = 0.090;
    static constexpr double cavity_inset = 0.012;

    static double lip_half_height(double open) {
        return lip_half_height_min + (lip_half_height_max - lip_half_height_min) * open;
    }
};

// Renders one canonical (frontal) face frame at the given opening in [0,1].
inline ImageU8 render_face(int size, double open, double jaw_cue_level, const std::vector<double>& blob_flicker) {
    using namespace synth_detail;
    FaceColors col;
    ImageU8 img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) img.set_pixel(y, x, col.bg[0], col.bg[1], col.bg[2]);

    const double S = size;
    fill_ellipse(img, 0.52 * S, 0.50 * S, 0.44 * S, 0.36 * S, col.skin[0], col.skin[1], col.skin[2]);

    // jaw shading proportional to the current opening (the visual shortcut cue)
    if (jaw_cue_level > 0) {
        const int shade = static_cast<int>(std::lround(jaw_cue_level * 70.0 * open));
        for (const auto& c : kJawCue)
            fill_ellipse(img, c[1] * S, c[0] * S, 0.045 * S, 0.045 * S,
                         static_cast<uint8_t>(std::clamp(col.skin[0] - shade, 0, 255)),
                         static_cast<uint8_t>(std::clamp(col.skin[1] - shade, 0, 255)),
                         static_cast<uint8_t>(std::clamp(col.skin[2] - shade, 0, 255)));
    }

    // audio-uncorrelated flicker blobs hugging the mouth
    for (size_t b = 0; b < blob_flicker.size() && b < 4; ++b) {
        const double f = blob_flicker[b];
        if (f == 0) continue;
        const auto& c = kDistractors[b];
        fill_ellipse(img, c[1] * S, c[0] * S, 0.032 * S, 0.032 * S,
                     static_cast<uint8_t>(std::clamp(col.skin[0] + f, 0.0, 255.0)),
                     static_cast<uint8_t>(std::clamp(col.skin[1] + f, 0.0, 255.0)),
                     static_cast<uint8_t>(std::clamp(col.skin[2] + f, 0.0, 255.0)));
    }

    // eyes (canonical template positions), nose
    fill_ellipse(img, 0.40 * S, 0.34 * S, 0.040 * S, 0.052 * S, col.eye[0], col.eye[1], col.eye[2]);
    fill_ellipse(img, 0.40 * S, 0.66 * S, 0.040 * S, 0.052 * S, col.eye[0], col.eye[1], col.eye[2]);
    fill_ellipse(img, 0.40 * S, 0.34 * S, 0.018 * S, 0.018 * S, col.pupil[0], col.pupil[1], col.pupil[2]);
    fill_ellipse(img, 0.40 * S, 0.66 * S, 0.018 * S, 0.018 * S, col.pupil[0], col.pupil[1], col.pupil[2]);
    fill_ellipse(img, 0.58 * S, 0.50 * S, 0.035 * S, 0.026 * S, col.nose[0], col.nose[1], col.nose[2]);

    // mouth: lip ellipse with a dark cavity whose height tracks the opening
    const double lip_h = MouthGeometry::lip_half_height(open) * S;
    const double mw = MouthGeometry::half_width * S;
    fill_ellipse(img, MouthGeometry::center_y * S, MouthGeometry::center_x * S, lip_h + 0.012 * S, mw,
                 col.lip[0], col.lip[1], col.lip[2]);
    const double cav_h = std::max(0.0, lip_h - MouthGeometry::cavity_inset * S);
    if (cav_h > 0.5)
        fill_ellipse(img, MouthGeometry::center_y * S, MouthGeometry::center_x * S, cav_h, mw - 0.02 * S,
                     col.cavity[0], col.cavity[1], col.cavity[2]);
    return img;
}

// Estimates the mouth opening of a canonical crop from its pixels: fraction
// of dark cavity pixels in the fixed mouth box, rescaled to [0,1] against the
// renderer's geometry. Works on generated frames where no ground truth exists.
template <class T>
double measure_mouth_openness(const Tensor<T>& crop_chw) {
    LIPSYNC_CHECK(crop_chw.ndim() == 3 && crop_chw.dim(0) >= 1, ShapeError, "measure wants [C,S,S]");
    const int S = crop_chw.dim(1);
    const int y0 = static_cast<int>((MouthGeometry::center_y - 0.115) * S);
    const int y1 = static_cast<int>((MouthGeometry::center_y + 0.115) * S);
    const int x0 = static_cast<int>((MouthGeometry::center_x - 0.16) * S);
    const int x1 = static_cast<int>((MouthGeometry::center_x + 0.16) * S);
    const int64_t hw = static_cast<int64_t>(S) * S;
    int64_t dark = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double gray = 0;
            const double wch[3] = {0.30, 0.59, 0.11};
            for (int ch = 0; ch < std::min(3, crop_chw.dim(0)); ++ch)
                gray += wch[ch] * static_cast<double>(crop_chw[ch * hw + static_cast<int64_t>(y) * S + x]);
            if (crop_chw.dim(0) == 1) gray /= 0.30;
            if (gray < 0.20) ++dark;
        }
    // dark cavity area at opening=1, from the renderer's ellipse geometry
    const double cav1 = (MouthGeometry::lip_half_height(1.0) - MouthGeometry::cavity_inset) * S;
    const double full_area = M_PI * cav1 * (MouthGeometry::half_width - 0.02) * S;
    return std::clamp(static_cast<double>(dark) / std::max(1.0, full_area), 0.0, 1.0);
}

inline std::vector<AVClip> generate_corpus(const SynthSpec& spec) {
    using namespace synth_detail;
    spec.validate();
    std::vector<AVClip> clips;
    clips.reserve(spec.n_clips);
    const int F = spec.frames_per_clip;
    const int S = spec.frame_size;

    for (int ci = 0; ci < spec.n_clips; ++ci) {
        Rng rng(spec.seed * 0x9e3779b97f4a7c15ull + 0xabcd0123ull + static_cast<uint64_t>(ci) * 0x100000001b3ull);
        AVClip clip;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "clip_%04d", ci);
        clip.id = idbuf;
        clip.source = "synth";
        clip.fps = kTargetFps;
        clip.sample_rate = kTargetRate;

        const EnvelopeProcess env = EnvelopeProcess::sample(rng);
        const double carrier = rng.uniform(180.0, 260.0);
        const double sweep_rate = rng.uniform(0.2, 0.9);
        const double sweep_phase = rng.uniform(0, 2 * M_PI);

        // audio with per-sample amplitude from the continuous envelope
        const int64_t n_samples = static_cast<int64_t>(F) * kSamplesPerFrame;
        clip.audio.resize(n_samples);
        double phase_acc = 0;
        for (int64_t s = 0; s < n_samples; ++s) {
            const double t = static_cast<double>(s) / kTargetRate;
            double f0 = carrier;
            if (spec.audio_model == AudioModel::formant_sweep)
                f0 = 180.0 + 120.0 * (0.5 + 0.5 * std::sin(2 * M_PI * sweep_rate * t + sweep_phase));
            phase_acc += 2 * M_PI * f0 / kTargetRate;
            const double amp = 0.85 * env(t);
            clip.audio[s] =
                static_cast<float>(amp * (0.8 * std::sin(phase_acc) + 0.2 * std::sin(2 * phase_acc)));
        }

        // per-frame envelope and (jittered) mouth opening
        clip.gt_envelope.resize(F);
        clip.gt_mouth.resize(F);
        for (int f = 0; f < F; ++f) {
            const double t = (f + 0.5) / kTargetFps;
            const double e = env(t);
            clip.gt_envelope[f] = static_cast<float>(e);
            double open = e;
            if (spec.noise_level > 0) open += spec.noise_level * rng.normal();
            clip.gt_mouth[f] = static_cast<float>(std::clamp(open, 0.0, 1.0));
        }

        // head pose trajectory (identity when rotation_amp_deg == 0)
        const double rot_amp = spec.rotation_amp_deg * M_PI / 180.0;
        const double pose_rate = rng.uniform(0.2, 0.5);
        const double pose_phase = rng.uniform(0, 2 * M_PI);

        clip.video = VideoBuffer(F, S, S, 3);
        clip.landmarks = Tensor32({F, 5, 2});
        const Tensor64 tmpl = canonical_landmark_template();

        for (int f = 0; f < F; ++f) {
            std::vector<double> flicker(4, 0.0);
            if (spec.distractor_level > 0)
                for (auto& fl : flicker) fl = spec.distractor_level * rng.uniform(-60.0, 60.0);
            const ImageU8 face =
                render_face(S, clip.gt_mouth[f], spec.shortcut_cue_level, flicker);

            if (rot_amp == 0) {
                clip.video.set_image(f, face);
                for (int i = 0; i < 5; ++i) {
                    clip.landmarks.at({f, i, 0}) = static_cast<float>(tmpl.at({i, 0}));
                    clip.landmarks.at({f, i, 1}) = static_cast<float>(tmpl.at({i, 1}));
                }
            } else {
                const double t = (f + 0.5) / kTargetFps;
                const double theta = rot_amp * std::sin(2 * M_PI * pose_rate * t + pose_phase);
                const double sc = 1.0 + 0.04 * std::sin(2 * M_PI * pose_rate * t + pose_phase * 1.7);
                const double cx = 0.5 * S, cy = 0.52 * S;
                AffineTransform pose;  // canonical -> posed frame, rotating about the head center
                pose.out_size = S;
                const double ca = sc * std::cos(theta), sa = sc * std::sin(theta);
                pose.m = {ca, -sa, cx - ca * cx + sa * cy, sa, ca, cy - sa * cx - ca * cy};
                clip.video.set_image(f, warp_to_crop(face, pose));
                for (int i = 0; i < 5; ++i) {
                    double ox, oy;
                    pose.apply(tmpl.at({i, 0}) * S, tmpl.at({i, 1}) * S, ox, oy);
                    clip.landmarks.at({f, i, 0}) = static_cast<float>(ox / S);
                    clip.landmarks.at({f, i, 1}) = static_cast<float>(oy / S);
                }
            }
        }
        clip.validate();
        clips.push_back(std::move(clip));
    }
    return clips;
}

// Circularly shifts the clip audio by k frames and records the ground truth.
inline AVClip shift_audio(AVClip clip, int k) {
    LIPSYNC_CHECK(std::abs(k) < clip.frame_count(), BoundsError, "shift exceeds clip length");
    circular_shift_audio(clip, k);
    clip.applied_offset += k;
    return clip;
}

// Pearson correlation; returns 0 when either side is constant.
inline double pearson(const float* a, const float* b, int n) {
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) return 0;
    return sab / std::sqrt(saa * sbb);
}

// Brute-force correlation classifier between a visual window (ground-truth
// mouth track) and an audio window (envelope track). On the noise-free corpus
// positives score exactly 1; this bounds what a sync network can learn.
inline double correlation_score(const AVClip& vis_clip, int fv, const AVClip& aud_clip, int fa, int frames) {
    LIPSYNC_CHECK(fv >= 0 && fv + frames <= vis_clip.frame_count(), BoundsError, "visual window out of range");
    LIPSYNC_CHECK(fa >= 0 && fa + frames <= aud_clip.frame_count(), BoundsError, "audio window out of range");
    LIPSYNC_CHECK(!vis_clip.gt_mouth.empty() && !aud_clip.gt_envelope.empty(), ConfigError,
                  "correlation oracle needs ground-truth tracks");
    return pearson(vis_clip.gt_mouth.data() + fv, aud_clip.gt_envelope.data() + fa, frames);
}

}  // namespace lipsync
