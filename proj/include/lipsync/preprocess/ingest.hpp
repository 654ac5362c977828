#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "lipsync/core/common.hpp"
#include "lipsync/preprocess/avclip.hpp"

namespace lipsync {

// Pluggable per-frame face landmark source. The synthetic corpus carries
// ground-truth landmarks, so the default pipeline never needs a trained
// detector; real-video adapters implement this.
struct LandmarkDetector {
    virtual ~LandmarkDetector() = default;
    virtual std::optional<Tensor32> detect(const ImageU8& frame) const = 0;  // [5,2] normalized
};

// Loads a clip directory and normalizes it to 25 fps / 16 kHz. Already
// conforming clips pass through with bit-identical frames.
inline AVClip ingest(const std::string& path, const LandmarkDetector* detector = nullptr,
                     double target_fps = kTargetFps, int target_rate = kTargetRate) {
    AVClip src = load_clip(path);
    LIPSYNC_CHECK(src.frame_count() > 0 && !src.audio.empty(), IngestError, "clip is empty: " + path);

    AVClip out;
    out.id = src.id;
    out.source = src.source.empty() ? path : src.source;
    out.quality_flag = src.quality_flag;
    out.applied_offset = src.applied_offset;
    out.fps = target_fps;
    out.sample_rate = target_rate;

    // frame-rate conversion by nearest-source-frame selection
    const bool same_fps = std::abs(src.fps - target_fps) < 1e-9;
    const int out_frames =
        same_fps ? src.frame_count()
                 : std::max(1, static_cast<int>(std::lround(src.frame_count() * target_fps / src.fps)));
    if (same_fps) {
        out.video = src.video;
        out.gt_mouth = src.gt_mouth;
        out.gt_envelope = src.gt_envelope;
    } else {
        out.video = VideoBuffer(out_frames, src.video.h, src.video.w, src.video.c);
        for (int f = 0; f < out_frames; ++f) {
            const int sf = std::min(src.frame_count() - 1,
                                    static_cast<int>(std::lround(f * src.fps / target_fps)));
            std::copy(src.video.frame(sf), src.video.frame(sf) + src.video.frame_bytes(), out.video.frame(f));
        }
    }

    // audio resample by linear interpolation
    if (src.sample_rate == target_rate) {
        out.audio = src.audio;
    } else {
        const double ratio = static_cast<double>(src.sample_rate) / target_rate;
        const int64_t n = static_cast<int64_t>(std::llround(src.audio.size() / ratio));
        out.audio.resize(n);
        for (int64_t i = 0; i < n; ++i) {
            const double pos = i * ratio;
            const int64_t i0 = static_cast<int64_t>(pos);
            const double a = pos - i0;
            const float s0 = src.audio[std::min(i0, static_cast<int64_t>(src.audio.size()) - 1)];
            const float s1 = src.audio[std::min(i0 + 1, static_cast<int64_t>(src.audio.size()) - 1)];
            out.audio[i] = static_cast<float>((1 - a) * s0 + a * s1);
        }
    }
    // trim/pad audio to the frame-count-consistent length
    const int64_t want = static_cast<int64_t>(out_frames) * target_rate / static_cast<int64_t>(target_fps);
    out.audio.resize(want, 0.f);

    // landmarks: stored ground truth wins, else the pluggable detector
    int missing = 0;
    Tensor32 lms({out_frames, 5, 2});
    std::vector<bool> valid(out_frames, false);
    for (int f = 0; f < out_frames; ++f) {
        const int sf = same_fps ? f
                                : std::min(src.frame_count() - 1,
                                           static_cast<int>(std::lround(f * src.fps / target_fps)));
        if (src.has_landmarks()) {
            bool finite = true;
            for (int i = 0; i < 10; ++i) {
                const float v = src.landmarks[static_cast<int64_t>(sf) * 10 + i];
                if (!std::isfinite(v)) finite = false;
                lms[static_cast<int64_t>(f) * 10 + i] = v;
            }
            valid[f] = finite;
        } else if (detector) {
            const auto det = detector->detect(src.video.image(sf));
            if (det) {
                for (int i = 0; i < 10; ++i) lms[static_cast<int64_t>(f) * 10 + i] = (*det)[i];
                valid[f] = true;
            }
        }
        if (!valid[f]) ++missing;
    }
    LIPSYNC_CHECK(missing <= out_frames / 5, QualityError,
                  "no face in more than 20% of frames (" + std::to_string(missing) + "/" +
                      std::to_string(out_frames) + ")");
    // fill gaps from the nearest detected frame
    for (int f = 0; f < out_frames; ++f) {
        if (valid[f]) continue;
        int best = -1, best_d = 1 << 30;
        for (int g = 0; g < out_frames; ++g)
            if (valid[g] && std::abs(g - f) < best_d) {
                best = g;
                best_d = std::abs(g - f);
            }
        LIPSYNC_CHECK(best >= 0, QualityError, "no face found in any frame");
        for (int i = 0; i < 10; ++i)
            lms[static_cast<int64_t>(f) * 10 + i] = lms[static_cast<int64_t>(best) * 10 + i];
    }
    out.landmarks = std::move(lms);
    out.validate();
    return out;
}

}  // namespace lipsync
