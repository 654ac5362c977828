#pragma once

#include <cmath>
#include <iostream>
#include <utility>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/preprocess/avclip.hpp"

namespace lipsync {

// Scores the synchrony of a visual window against a mel window. Implemented
// by the trained sync network; kept abstract so preprocessing does not depend
// on the model code.
struct SyncScorer {
    virtual ~SyncScorer() = default;
    virtual int window_frames() const = 0;
    // similarity q in [0,1] between visual frames [fv, fv+F) and the audio of
    // frames [fa, fa+F)
    virtual double score(const AVClip& clip, int f_visual, int f_audio) const = 0;
    // batched variant; the default just loops
    virtual std::vector<double> score_batch(const AVClip& clip,
                                            const std::vector<std::pair<int, int>>& windows) const {
        std::vector<double> out;
        out.reserve(windows.size());
        for (const auto& [fv, fa] : windows) out.push_back(score(clip, fv, fa));
        return out;
    }
};

struct OffsetScan {
    int offset = 0;        // corrective shift: pass to circular_shift_audio to fix the clip
    double confidence = 0; // max mean score over candidates
    std::vector<double> profile;  // mean score per candidate, index 0 = -range
};

// Scans candidate corrective offsets in [-range, +range]. Candidate c scores
// visual windows at f against audio windows at f-c, so a clip whose audio was
// delayed by k frames peaks at c=-k; applying the returned offset via
// circular_shift_audio cancels the delay. Mean-over-windows aggregation with
// stride F/2; ties resolve toward the smaller |offset|.
inline OffsetScan scan_av_offset(const AVClip& clip, const SyncScorer& scorer, int search_range = 15) {
    const int F = scorer.window_frames();
    const int frames = clip.frame_count();
    LIPSYNC_CHECK(search_range >= 0, BoundsError, "negative search range");
    LIPSYNC_CHECK(frames >= F + 2 * search_range + 1, BoundsError,
                  "clip shorter than scoring window plus search range");
    const int stride = std::max(1, F / 2);

    std::vector<int> positions;
    for (int f = search_range; f + F <= frames - search_range; f += stride) positions.push_back(f);

    OffsetScan result;
    result.profile.assign(2 * search_range + 1, 0.0);
    std::vector<std::pair<int, int>> windows;
    for (int c = -search_range; c <= search_range; ++c) {
        windows.clear();
        for (int f : positions) windows.emplace_back(f, f - c);
        const std::vector<double> scores = scorer.score_batch(clip, windows);
        double mean = 0;
        for (double s : scores) mean += s / static_cast<double>(scores.size());
        result.profile[c + search_range] = mean;
    }

    // visit candidates by increasing |c| so exact ties keep the smaller shift
    int best_c = 0;
    double best = result.profile[search_range];
    for (int mag = 1; mag <= search_range; ++mag)
        for (int c : {-mag, mag}) {
            const double v = result.profile[c + search_range];
            if (v > best) {
                best = v;
                best_c = c;
            }
        }
    result.offset = best_c;
    result.confidence = best;
    return result;
}

// Applies the corrective offset in place and records it.
inline void adjust_av_offset(AVClip& clip, int offset) {
    circular_shift_audio(clip, offset);
    clip.scanned_offset = 0;
    clip.applied_offset += offset;
}

// Keeps clips whose scanned confidence clears the threshold. The default of
// 3 matches the classic pretrained-scorer scale; toy scorers produce
// cosine-based confidences in [0,1] and call this with their own threshold.
inline std::vector<AVClip> filter_by_confidence(std::vector<AVClip> clips, double threshold = 3.0) {
    std::vector<AVClip> kept;
    for (auto& clip : clips) {
        LIPSYNC_CHECK(clip.sync_conf.has_value(), ConfigError,
                      "clip " + clip.id + " has no sync confidence; scan offsets first");
        if (*clip.sync_conf >= threshold) kept.push_back(std::move(clip));
    }
    if (kept.empty() && !clips.empty())
        std::cerr << "[preprocess] warning: all " << clips.size() << " clips fell below sync-confidence "
                  << threshold << "\n";
    return kept;
}

}  // namespace lipsync
