#pragma once
#include <cmath>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lipsync/core/common.hpp"

namespace lipsync {

// Minimal PCM16 mono WAV io; all processed-clip audio goes through this.

struct WavData {
    std::vector<float> samples;  // [-1, 1]
    int sample_rate = 0;
};

inline void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    LIPSYNC_CHECK(os.good(), IoError, "cannot open " + path);
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    auto w32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto w16 = [&](uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
    os.write("RIFF", 4);
    w32(36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    w32(16);
    w16(1);  // PCM
    w16(1);  // mono
    w32(static_cast<uint32_t>(sample_rate));
    w32(static_cast<uint32_t>(sample_rate * 2));
    w16(2);
    w16(16);
    os.write("data", 4);
    w32(data_bytes);
    for (float s : samples) {
        const float c = s < -1.f ? -1.f : (s > 1.f ? 1.f : s);
        const int16_t q = static_cast<int16_t>(std::lround(c * 32767.f));
        os.write(reinterpret_cast<const char*>(&q), 2);
    }
    LIPSYNC_CHECK(os.good(), IoError, "write failed: " + path);
}

inline WavData read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    char tag[5] = {0};
    auto r32 = [&]() {
        uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto r16 = [&]() {
        uint16_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 2);
        return v;
    };
    is.read(tag, 4);
    LIPSYNC_CHECK(std::strncmp(tag, "RIFF", 4) == 0, IngestError, "not a RIFF file: " + path);
    r32();
    is.read(tag, 4);
    LIPSYNC_CHECK(std::strncmp(tag, "WAVE", 4) == 0, IngestError, "not a WAVE file: " + path);

    WavData out;
    uint16_t channels = 1, bits = 16;
    while (is.read(tag, 4)) {
        const uint32_t chunk = r32();
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            const uint16_t fmt = r16();
            channels = r16();
            out.sample_rate = static_cast<int>(r32());
            r32();
            r16();
            bits = r16();
            LIPSYNC_CHECK(fmt == 1 && bits == 16, IngestError, "only PCM16 wav supported");
            if (chunk > 16) is.seekg(chunk - 16, std::ios::cur);
        } else if (std::strncmp(tag, "data", 4) == 0) {
            const size_t n = chunk / 2;
            std::vector<int16_t> raw(n);
            is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(chunk));
            LIPSYNC_CHECK(is.good(), IngestError, "truncated wav data: " + path);
            // average channels down to mono
            const size_t frames = n / channels;
            out.samples.resize(frames);
            for (size_t f = 0; f < frames; ++f) {
                double acc = 0;
                for (uint16_t c = 0; c < channels; ++c) acc += raw[f * channels + c];
                out.samples[f] = static_cast<float>(acc / channels / 32767.0);
            }
            return out;
        } else {
            is.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    throw IngestError("no data chunk in " + path);
}

}  // namespace lipsync
