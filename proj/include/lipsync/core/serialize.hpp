#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "lipsync/core/common.hpp"
#include "lipsync/core/params.hpp"

namespace lipsync {

// Checkpoint container: magic, u64 json header length, json header, then the
// raw little-endian tensor payload in header order. Self-describing enough to
// rebuild the model (config) and resume training (optimizer + rng in extra).

inline constexpr char kCkptMagic[8] = {'L', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

struct CheckpointMeta {
    nlohmann::json config;
    nlohmann::json extra;
    int64_t step = 0;
    std::string dtype;
};

template <class T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
}

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const nlohmann::json& config,
                     const nlohmann::json& extra, int64_t step, bool with_optimizer = true) {
    nlohmann::json header;
    header["dtype"] = dtype_name<T>();
    header["step"] = step;
    header["config"] = config;
    header["extra"] = extra;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : store.all()) {
        const bool adam = with_optimizer && p.adam_m.defined();
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}, {"adam", adam}});
    }
    header["tensors"] = tensors;
    const std::string hs = header.dump();

    // atomic: write to a temp file, then rename over the target
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        LIPSYNC_CHECK(os.good(), IoError, "cannot open " + tmp);
        os.write(kCkptMagic, 8);
        const uint64_t hlen = hs.size();
        os.write(reinterpret_cast<const char*>(&hlen), 8);
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& p : store.all()) {
            os.write(reinterpret_cast<const char*>(p.value.data()),
                     static_cast<std::streamsize>(p.value.numel() * sizeof(T)));
            if (with_optimizer && p.adam_m.defined()) {
                os.write(reinterpret_cast<const char*>(p.adam_m.data()),
                         static_cast<std::streamsize>(p.adam_m.numel() * sizeof(T)));
                os.write(reinterpret_cast<const char*>(p.adam_v.data()),
                         static_cast<std::streamsize>(p.adam_v.numel() * sizeof(T)));
            }
        }
        LIPSYNC_CHECK(os.good(), IoError, "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_checkpoint_header_(std::ifstream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    LIPSYNC_CHECK(is.good() && std::memcmp(magic, kCkptMagic, 8) == 0, IoError,
                  "not a checkpoint file: " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    LIPSYNC_CHECK(is.good(), IoError, "truncated checkpoint header: " + path);
    return nlohmann::json::parse(hs);
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    const nlohmann::json h = read_checkpoint_header_(is, path);
    CheckpointMeta m;
    m.config = h.value("config", nlohmann::json::object());
    m.extra = h.value("extra", nlohmann::json::object());
    m.step = h.value("step", int64_t(0));
    m.dtype = h.value("dtype", "f32");
    return m;
}

// Loads into an existing store whose parameter names and shapes must match
// the file exactly (the model is rebuilt from the header config first).
template <class T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& store, bool with_optimizer = true) {
    std::ifstream is(path, std::ios::binary);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    const nlohmann::json h = read_checkpoint_header_(is, path);
    LIPSYNC_CHECK(h.value("dtype", "") == dtype_name<T>(), IoError, "checkpoint dtype mismatch");
    for (const auto& trec : h.at("tensors")) {
        const std::string name = trec.at("name");
        Parameter<T>* p = store.find(name);
        LIPSYNC_CHECK(p != nullptr, IoError, "checkpoint has unknown parameter: " + name);
        const Shape shape = trec.at("shape").get<Shape>();
        LIPSYNC_CHECK(p->value.shape() == shape, IoError, "shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.numel() * sizeof(T)));
        p->trainable = trec.value("trainable", true);
        if (trec.value("adam", false)) {
            Tensor<T> m(shape), v(shape);
            is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.numel() * sizeof(T)));
            is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.numel() * sizeof(T)));
            if (with_optimizer) {
                p->adam_m = std::move(m);
                p->adam_v = std::move(v);
            }
        }
        LIPSYNC_CHECK(is.good(), IoError, "truncated checkpoint payload: " + path);
    }
    CheckpointMeta m;
    m.config = h.value("config", nlohmann::json::object());
    m.extra = h.value("extra", nlohmann::json::object());
    m.step = h.value("step", int64_t(0));
    m.dtype = h.value("dtype", "f32");
    return m;
}

}  // namespace lipsync
