#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lipsync/core/common.hpp"
#include "lipsync/core/csv.hpp"
#include "lipsync/core/image.hpp"
#include "lipsync/core/tensor.hpp"
#include "lipsync/core/wav.hpp"

namespace lipsync {

constexpr int kTargetFps = 25;
constexpr int kTargetRate = 16000;
constexpr int kSamplesPerFrame = kTargetRate / kTargetFps;  // 640

// The unit of all processing: aligned frames + waveform + landmarks.
struct AVClip {
    std::string id;
    VideoBuffer video;
    double fps = kTargetFps;
    std::vector<float> audio;  // mono [-1,1]
    int sample_rate = kTargetRate;
    Tensor32 landmarks;  // [F,5,2] normalized image coords; undefined if absent
    std::string source;
    int quality_flag = 1;

    // synthetic ground truth (empty/zero when unknown)
    int applied_offset = 0;          // frames of circular audio shift applied
    std::vector<float> gt_mouth;     // per-frame mouth openness in [0,1]
    std::vector<float> gt_envelope;  // per-frame audio envelope in [0,1]

    // preprocessing results
    std::optional<int> scanned_offset;
    std::optional<double> sync_conf;

    int frame_count() const { return video.frames; }
    bool has_landmarks() const { return landmarks.defined() && landmarks.numel() > 0; }

    Tensor32 frame_landmarks(int f) const {
        LIPSYNC_CHECK(has_landmarks(), IngestError, "clip has no landmarks");
        Tensor32 out({5, 2});
        for (int i = 0; i < 10; ++i) out[i] = landmarks[static_cast<int64_t>(f) * 10 + i];
        return out;
    }

    void validate() const {
        LIPSYNC_CHECK(std::abs(fps - kTargetFps) < 1e-9, IngestError, "clip fps must be 25 after ingestion");
        LIPSYNC_CHECK(sample_rate == kTargetRate, IngestError, "clip sample rate must be 16000");
        const int64_t expect = static_cast<int64_t>(std::llround(frame_count() / 25.0 * 16000.0));
        LIPSYNC_CHECK(std::llabs(static_cast<int64_t>(audio.size()) - expect) <= 160, IngestError,
                      "audio length inconsistent with frame count");
        if (has_landmarks())
            LIPSYNC_CHECK(landmarks.dim(0) == frame_count(), IngestError,
                          "landmark count != frame count");
    }
};

// Circularly shifts audio by k video frames (k*640 samples): positive k
// delays the audio content. Used by the synthetic shifter and by offset
// adjustment (adjusting applies the scanned corrective offset).
inline void circular_shift_audio(AVClip& clip, int k_frames) {
    const int64_t n = static_cast<int64_t>(clip.audio.size());
    if (n == 0 || k_frames == 0) return;
    int64_t shift = (static_cast<int64_t>(k_frames) * kSamplesPerFrame) % n;
    if (shift < 0) shift += n;
    std::vector<float> out(clip.audio.size());
    for (int64_t i = 0; i < n; ++i) out[(i + shift) % n] = clip.audio[i];
    clip.audio = std::move(out);
}

// per-frame RMS envelope of the waveform
inline std::vector<float> audio_envelope(const std::vector<float>& audio, int frames) {
    std::vector<float> env(frames, 0.f);
    for (int f = 0; f < frames; ++f) {
        const int64_t s0 = static_cast<int64_t>(f) * kSamplesPerFrame;
        double acc = 0;
        int64_t cnt = 0;
        for (int64_t s = s0; s < s0 + kSamplesPerFrame && s < static_cast<int64_t>(audio.size()); ++s, ++cnt)
            acc += static_cast<double>(audio[s]) * audio[s];
        env[f] = cnt ? static_cast<float>(std::sqrt(acc / cnt)) : 0.f;
    }
    return env;
}

// ---- clip directory io ----
// layout: clip.json, frames.bin (LSV1 header + raw u8), audio.wav,
// landmarks.csv, gt_mouth.csv (optional)

namespace detail {
constexpr uint32_t kVideoMagic = 0x3156534C;  // "LSV1"
}

inline void write_frames_bin(const std::string& path, const VideoBuffer& v) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    LIPSYNC_CHECK(os.good(), IoError, "cannot open " + path);
    const uint32_t hdr[5] = {detail::kVideoMagic, static_cast<uint32_t>(v.frames), static_cast<uint32_t>(v.h),
                             static_cast<uint32_t>(v.w), static_cast<uint32_t>(v.c)};
    os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
    LIPSYNC_CHECK(os.good(), IoError, "write failed: " + path);
}

inline VideoBuffer read_frames_bin(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    uint32_t hdr[5];
    is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    LIPSYNC_CHECK(is.good() && hdr[0] == detail::kVideoMagic, IngestError, "not a frames.bin file: " + path);
    VideoBuffer v(static_cast<int>(hdr[1]), static_cast<int>(hdr[2]), static_cast<int>(hdr[3]),
                  static_cast<int>(hdr[4]));
    is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
    LIPSYNC_CHECK(is.good(), IngestError, "truncated frames.bin: " + path);
    return v;
}

inline void save_clip(const std::string& dir, const AVClip& clip) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_frames_bin(dir + "/frames.bin", clip.video);
    write_wav(dir + "/audio.wav", clip.audio, clip.sample_rate);

    nlohmann::json meta;
    meta["id"] = clip.id;
    meta["fps"] = clip.fps;
    meta["sample_rate"] = clip.sample_rate;
    meta["frames"] = clip.frame_count();
    meta["height"] = clip.video.h;
    meta["width"] = clip.video.w;
    meta["source"] = clip.source;
    meta["quality_flag"] = clip.quality_flag;
    meta["applied_offset"] = clip.applied_offset;
    if (clip.scanned_offset) meta["offset"] = *clip.scanned_offset;
    if (clip.sync_conf) meta["sync_conf"] = *clip.sync_conf;
    std::ofstream js(dir + "/clip.json", std::ios::trunc);
    js << meta.dump(2) << "\n";

    if (clip.has_landmarks()) {
        CsvWriter w(dir + "/landmarks.csv", {"frame", "x0", "y0", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"});
        for (int f = 0; f < clip.frame_count(); ++f) {
            std::vector<double> row{static_cast<double>(f)};
            for (int i = 0; i < 10; ++i) row.push_back(clip.landmarks[static_cast<int64_t>(f) * 10 + i]);
            w.row(row);
        }
    }
    if (!clip.gt_mouth.empty()) {
        CsvWriter w(dir + "/gt_mouth.csv", {"frame", "mouth", "envelope"});
        for (int f = 0; f < clip.frame_count(); ++f)
            w.row(std::vector<double>{static_cast<double>(f), clip.gt_mouth[f],
                                      f < static_cast<int>(clip.gt_envelope.size()) ? clip.gt_envelope[f] : 0.0});
    }
}

inline AVClip load_clip(const std::string& dir) {
    namespace fs = std::filesystem;
    LIPSYNC_CHECK(fs::exists(dir + "/clip.json"), IngestError, "no clip.json in " + dir);
    std::ifstream js(dir + "/clip.json");
    nlohmann::json meta = nlohmann::json::parse(js);

    AVClip clip;
    clip.id = meta.value("id", fs::path(dir).filename().string());
    clip.fps = meta.value("fps", 25.0);
    clip.sample_rate = meta.value("sample_rate", kTargetRate);
    clip.source = meta.value("source", "");
    clip.quality_flag = meta.value("quality_flag", 1);
    clip.applied_offset = meta.value("applied_offset", 0);
    if (meta.contains("offset")) clip.scanned_offset = meta["offset"].get<int>();
    if (meta.contains("sync_conf")) clip.sync_conf = meta["sync_conf"].get<double>();

    clip.video = read_frames_bin(dir + "/frames.bin");
    const WavData wav = read_wav(dir + "/audio.wav");
    clip.audio = wav.samples;
    clip.sample_rate = wav.sample_rate;

    if (fs::exists(dir + "/landmarks.csv")) {
        const CsvTable t = read_csv(dir + "/landmarks.csv");
        clip.landmarks = Tensor32({static_cast<int>(t.rows.size()), 5, 2});
        for (size_t r = 0; r < t.rows.size(); ++r)
            for (int i = 0; i < 10; ++i)
                clip.landmarks[static_cast<int64_t>(r) * 10 + i] = static_cast<float>(t.num(r, 1 + i));
    }
    if (fs::exists(dir + "/gt_mouth.csv")) {
        const CsvTable t = read_csv(dir + "/gt_mouth.csv");
        clip.gt_mouth.resize(t.rows.size());
        clip.gt_envelope.resize(t.rows.size());
        for (size_t r = 0; r < t.rows.size(); ++r) {
            clip.gt_mouth[r] = static_cast<float>(t.num(r, 1));
            clip.gt_envelope[r] = static_cast<float>(t.num(r, 2));
        }
    }
    return clip;
}

// ---- corpus manifest: json-lines, one record per clip ----

struct ManifestRecord {
    std::string id;
    std::string path;
    double fps = 25;
    int sample_rate = kTargetRate;
    int offset = 0;
    double sync_conf = 0;
    int quality_flag = 1;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    LIPSYNC_CHECK(os.good(), IoError, "cannot open " + path);
    for (const auto& r : records) {
        nlohmann::json j = {{"id", r.id},         {"path", r.path},
                            {"fps", r.fps},       {"sample_rate", r.sample_rate},
                            {"offset", r.offset}, {"sync_conf", r.sync_conf},
                            {"quality_flag", r.quality_flag}};
        os << j.dump() << "\n";
    }
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ManifestRecord r;
        r.id = j.value("id", "");
        r.path = j.value("path", "");
        r.fps = j.value("fps", 25.0);
        r.sample_rate = j.value("sample_rate", kTargetRate);
        r.offset = j.value("offset", 0);
        r.sync_conf = j.value("sync_conf", 0.0);
        r.quality_flag = j.value("quality_flag", 1);
        out.push_back(std::move(r));
    }
    return out;
}

// Loads every clip listed in a corpus directory's manifest.
inline std::vector<AVClip> load_corpus(const std::string& dir) {
    const auto records = read_manifest(dir + "/manifest.jsonl");
    std::vector<AVClip> clips;
    clips.reserve(records.size());
    for (const auto& r : records) {
        const std::string p = r.path.starts_with("/") ? r.path : dir + "/" + r.path;
        clips.push_back(load_clip(p));
    }
    return clips;
}

inline void save_corpus(const std::string& dir, const std::vector<AVClip>& clips) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<ManifestRecord> records;
    for (const auto& clip : clips) {
        save_clip(dir + "/" + clip.id, clip);
        ManifestRecord r;
        r.id = clip.id;
        r.path = clip.id;
        r.fps = clip.fps;
        r.sample_rate = clip.sample_rate;
        r.offset = clip.scanned_offset.value_or(0);
        r.sync_conf = clip.sync_conf.value_or(0.0);
        r.quality_flag = clip.quality_flag;
        records.push_back(std::move(r));
    }
    write_manifest(dir + "/manifest.jsonl", records);
}

}  // namespace lipsync
