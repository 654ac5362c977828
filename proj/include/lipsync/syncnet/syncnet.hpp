#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lipsync/core/graph.hpp"
#include "lipsync/core/nn.hpp"
#include "lipsync/core/params.hpp"

namespace lipsync {

enum class InputSpace { pixel, latent };
enum class SyncArch { stable, wav2lip_baseline };

inline const char* to_string(InputSpace s) { return s == InputSpace::pixel ? "pixel" : "latent"; }
inline const char* to_string(SyncArch a) { return a == SyncArch::stable ? "stable" : "wav2lip_baseline"; }

constexpr double kSimilarityEps = 1e-7;

struct SyncNetConfig {
    InputSpace input_space = InputSpace::pixel;
    SyncArch arch = SyncArch::stable;
    int frames = 16;          // F; 5/16/25 supported
    int embed_dim = 2048;     // d; 2048 is the full-scale default
    int batch_size = 64;
    int input_size = 256;     // square visual input edge
    int visual_channels = 3;  // per frame: 3 in pixel space, 4 in latent space
    int base_width = 16;
    int mel_bins = 80;
    int mel_steps_per_frame = 4;

    int visual_in_channels() const { return frames * visual_channels; }
    int mel_steps() const { return frames * mel_steps_per_frame; }

    void validate() const {
        LIPSYNC_CHECK(frames > 0 && embed_dim > 0 && batch_size > 0, ConfigError, "bad syncnet config");
        LIPSYNC_CHECK(input_size >= 8 && (input_size & (input_size - 1)) == 0, ConfigError,
                      "visual input size must be a power of two >= 8");
        LIPSYNC_CHECK(visual_channels == 3 || visual_channels == 4, ConfigError,
                      "visual channels must be 3 (pixel) or 4 (latent)");
    }

    // CPU-scale default used throughout the test suite
    static SyncNetConfig toy() {
        SyncNetConfig c;
        c.frames = 5;
        c.embed_dim = 64;
        c.batch_size = 64;
        c.input_size = 64;
        c.base_width = 8;
        return c;
    }

    nlohmann::json to_json() const {
        return {{"input_space", to_string(input_space)},
                {"arch", to_string(arch)},
                {"frames", frames},
                {"embed_dim", embed_dim},
                {"batch_size", batch_size},
                {"input_size", input_size},
                {"visual_channels", visual_channels},
                {"base_width", base_width},
                {"mel_bins", mel_bins},
                {"mel_steps_per_frame", mel_steps_per_frame}};
    }

    static SyncNetConfig from_json(const nlohmann::json& j) {
        SyncNetConfig c;
        c.input_space = j.value("input_space", "pixel") == std::string("latent") ? InputSpace::latent : InputSpace::pixel;
        c.arch = j.value("arch", "stable") == std::string("wav2lip_baseline") ? SyncArch::wav2lip_baseline
                                                                              : SyncArch::stable;
        c.frames = j.value("frames", 16);
        c.embed_dim = j.value("embed_dim", 2048);
        c.batch_size = j.value("batch_size", 64);
        c.input_size = j.value("input_size", 256);
        c.visual_channels = j.value("visual_channels", 3);
        c.base_width = j.value("base_width", 16);
        c.mel_bins = j.value("mel_bins", 80);
        c.mel_steps_per_frame = j.value("mel_steps_per_frame", 4);
        return c;
    }
};

// Two-tower contrastive sync network. The `stable` architecture reuses the
// diffusion encoder block structure (residual blocks, self-attention at low
// resolutions, no cross-attention); only the downsampling plan adapts to the
// input geometry. The wav2lip_baseline is the plain conv stack reference.
template <class T>
class StableSyncNet {
public:
    explicit StableSyncNet(SyncNetConfig cfg, uint64_t seed = 1) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed ^ 0x5bd1e995u);
        build_visual_(rng);
        build_audio_(rng);
    }

    const SyncNetConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    // [B, F*C, S, S] -> [B, d], rectified nonnegative then L2-normalized so
    // the cosine is a valid Bernoulli parameter
    Var embed_visual(Graph<T>& g, Var x) const {
        const Shape& s = g.shape(x);
        LIPSYNC_CHECK(s.size() == 4 && s[1] == cfg_.visual_in_channels() && s[2] == cfg_.input_size &&
                          s[3] == cfg_.input_size,
                      ConfigError, "visual input shape mismatch: got " + shape_str(s));
        return head_(g, visual_.forward(g, x), visual_head_);
    }

    // [B, 1, mel_bins, 4F] -> [B, d]
    Var embed_audio(Graph<T>& g, Var mel) const {
        const Shape& s = g.shape(mel);
        LIPSYNC_CHECK(s.size() == 4 && s[1] == 1 && s[2] == cfg_.mel_bins && s[3] == cfg_.mel_steps(),
                      ConfigError, "mel input shape mismatch: got " + shape_str(s));
        return head_(g, audio_.forward(g, mel), audio_head_);
    }

    // q(x=1) = clamp(cos(v,a), eps, 1-eps); embeddings must be normalized
    Var similarity(Graph<T>& g, Var v_emb, Var a_emb) const {
        return g.clamp(g.rows_dot(v_emb, a_emb), static_cast<T>(kSimilarityEps),
                       static_cast<T>(1.0 - kSimilarityEps));
    }

    Var similarity_from_inputs(Graph<T>& g, Var visual, Var mel) const {
        return similarity(g, embed_visual(g, visual), embed_audio(g, mel));
    }

private:
    struct Stage {
        Downsample<T> down;
        ResBlock<T> res1, res2;
        SelfAttention2d<T> attn;
        bool has_attn = false;
        Conv2d<T> plain1, plain2;  // wav2lip baseline path
        bool plain = false;

        Var forward(Graph<T>& g, Var x) const {
            if (plain) return g.relu(plain2.forward(g, g.relu(plain1.forward(g, x))));
            Var h = down.forward(g, x);
            h = res1.forward(g, h);
            h = res2.forward(g, h);
            if (has_attn) h = attn.forward(g, h);
            return h;
        }
    };

    struct Encoder {
        Conv2d<T> stem;
        std::vector<Stage> stages;
        GroupNorm<T> out_norm;
        bool plain = false;

        Var forward(Graph<T>& g, Var x) const {
            Var h = stem.forward(g, x);
            if (plain) h = g.relu(h);
            for (const Stage& s : stages) h = s.forward(g, h);
            if (!plain) h = g.silu(out_norm.forward(g, h));
            return h;
        }
    };

    struct Head {
        Linear<T> proj;
    };

    int stage_width_(int i) const { return cfg_.base_width * std::min(8, 1 << std::min(i, 3)); }

    void build_visual_(Rng& rng) {
        const bool plain = cfg_.arch == SyncArch::wav2lip_baseline;
        visual_.plain = plain;
        // inputs above 32px take their first downsample in the stem; this is
        // the "adjust the downsampling factors to the input size" knob
        const int stem_stride = cfg_.input_size > 32 ? 2 : 1;
        visual_.stem = Conv2d<T>::create(store_, "visual.stem", cfg_.visual_in_channels(), cfg_.base_width, 3,
                                         stem_stride, 1, rng);
        int size = cfg_.input_size / stem_stride;
        int width = cfg_.base_width;
        int i = 0;
        while (size > 4) {
            const int next_w = stage_width_(i + 1);
            Stage st;
            const std::string name = "visual.stage" + std::to_string(i);
            if (plain) {
                st.plain = true;
                st.plain1 = Conv2d<T>::create(store_, name + ".conv1", width, next_w, 3, 2, 1, rng);
                st.plain2 = Conv2d<T>::create(store_, name + ".conv2", next_w, next_w, 3, 1, 1, rng);
            } else {
                st.down = Downsample<T>::create(store_, name + ".down", width, next_w, rng);
                st.res1 = ResBlock<T>::create(store_, name + ".res1", next_w, next_w, rng);
                st.res2 = ResBlock<T>::create(store_, name + ".res2", next_w, next_w, rng);
                if (size / 2 <= 16) {
                    st.attn = SelfAttention2d<T>::create(store_, name + ".attn", next_w, rng);
                    st.has_attn = true;
                }
            }
            visual_.stages.push_back(st);
            size /= 2;
            width = next_w;
            ++i;
        }
        if (!plain) visual_.out_norm = GroupNorm<T>::create(store_, "visual.out_norm", width);
        visual_head_.proj = Linear<T>::create(store_, "visual.head", width, cfg_.embed_dim, rng);
    }

    void build_audio_(Rng& rng) {
        const bool plain = cfg_.arch == SyncArch::wav2lip_baseline;
        audio_.plain = plain;
        audio_.stem = Conv2d<T>::create(store_, "audio.stem", 1, cfg_.base_width, 3, 1, 1, rng);
        int h = cfg_.mel_bins, w = cfg_.mel_steps();
        int width = cfg_.base_width;
        int i = 0;
        // anisotropy is handled by running stride-2 stages until both axes
        // are small; odd sizes round up through same-padding
        while (h > 5 || w > 5) {
            const int next_w = stage_width_(i + 1);
            Stage st;
            const std::string name = "audio.stage" + std::to_string(i);
            if (plain) {
                st.plain = true;
                st.plain1 = Conv2d<T>::create(store_, name + ".conv1", width, next_w, 3, 2, 1, rng);
                st.plain2 = Conv2d<T>::create(store_, name + ".conv2", next_w, next_w, 3, 1, 1, rng);
            } else {
                st.down = Downsample<T>::create(store_, name + ".down", width, next_w, rng);
                st.res1 = ResBlock<T>::create(store_, name + ".res1", next_w, next_w, rng);
                st.res2 = ResBlock<T>::create(store_, name + ".res2", next_w, next_w, rng);
                if (h <= 16 && w <= 16) {
                    st.attn = SelfAttention2d<T>::create(store_, name + ".attn", next_w, rng);
                    st.has_attn = true;
                }
            }
            audio_.stages.push_back(st);
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            width = next_w;
            ++i;
        }
        if (!plain) audio_.out_norm = GroupNorm<T>::create(store_, "audio.out_norm", width);
        audio_head_.proj = Linear<T>::create(store_, "audio.head", width, cfg_.embed_dim, rng);
    }

    Var head_(Graph<T>& g, Var features, const Head& head) const {
        Var pooled = g.global_avg_pool(features);
        Var emb = g.relu(head.proj.forward(g, pooled));
        return g.l2_normalize_rows(emb);
    }

    SyncNetConfig cfg_;
    ParamStore<T> store_;
    Encoder visual_, audio_;
    Head visual_head_, audio_head_;
};

// Wav2Lip-form contrastive objective: mean binary cross-entropy of the
// cosine probability against the pair labels.
template <class T>
Var contrastive_loss(Graph<T>& g, Var q, const Tensor<T>& labels) {
    LIPSYNC_CHECK(labels.numel() > 0, ConfigError, "empty batch");
    return g.bce_mean(q, labels);
}

}  // namespace lipsync
