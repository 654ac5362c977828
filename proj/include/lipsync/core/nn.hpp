#pragma once

#include <cmath>
#include <string>

#include "lipsync/core/graph.hpp"
#include "lipsync/core/params.hpp"
#include "lipsync/core/rng.hpp"

namespace lipsync {

// Layer structs hold raw Parameter pointers into their model's ParamStore;
// forward() records ops on the caller's graph. All layers are value types.

inline int default_groups(int channels) {
    for (int g : {32, 16, 8, 4, 2}) {
        if (channels % g == 0 && channels >= 2 * g) return g;
    }
    return 1;
}

template <class T>
struct Linear {
    Parameter<T>* w = nullptr;  // [in, out]
    Parameter<T>* b = nullptr;  // [out]

    static Linear create(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng,
                         bool zero_init = false) {
        Linear l;
        const T std = zero_init ? T(0) : static_cast<T>(std::sqrt(1.0 / in));
        l.w = store.create(name + ".w", Tensor<T>::randn({in, out}, rng, std));
        l.b = store.create(name + ".b", Tensor<T>::zeros({out}));
        return l;
    }

    // x [N, in] -> [N, out]
    Var forward(Graph<T>& g, Var x) const {
        return g.add_bias(g.matmul(x, g.param(w)), g.param(b));
    }
};

template <class T>
struct Conv2d {
    Parameter<T>* w = nullptr;  // [cout, cin, k, k]
    Parameter<T>* b = nullptr;  // [cout]
    int stride = 1;
    int pad = 0;

    static Conv2d create(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride,
                         int pad, Rng& rng, bool zero_init = false) {
        Conv2d c;
        c.stride = stride;
        c.pad = pad;
        const T std = zero_init ? T(0) : static_cast<T>(std::sqrt(2.0 / (static_cast<double>(cin) * k * k)));
        c.w = store.create(name + ".w", Tensor<T>::randn({cout, cin, k, k}, rng, std));
        c.b = store.create(name + ".b", Tensor<T>::zeros({cout}));
        return c;
    }

    Var forward(Graph<T>& g, Var x) const { return g.conv2d(x, g.param(w), g.param(b), stride, pad); }
};

template <class T>
struct GroupNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    int groups = 1;

    static GroupNorm create(ParamStore<T>& store, const std::string& name, int channels, int groups = 0) {
        GroupNorm n;
        n.groups = groups > 0 ? groups : default_groups(channels);
        n.gamma = store.create(name + ".gamma", Tensor<T>::full({channels}, T(1)));
        n.beta = store.create(name + ".beta", Tensor<T>::zeros({channels}));
        return n;
    }

    Var forward(Graph<T>& g, Var x) const { return g.group_norm(x, g.param(gamma), g.param(beta), groups); }
};

// SD-style residual block: norm/silu/conv twice, optional timestep bias after
// the first conv, 1x1 skip when the channel count changes. The second conv is
// zero-initialized so a fresh block starts as an identity.
template <class T>
struct ResBlock {
    GroupNorm<T> norm1, norm2;
    Conv2d<T> conv1, conv2, skip;
    Linear<T> emb_proj;
    bool has_skip = false;
    bool has_emb = false;

    static ResBlock create(ParamStore<T>& store, const std::string& name, int cin, int cout, Rng& rng,
                           int emb_dim = 0) {
        ResBlock r;
        r.norm1 = GroupNorm<T>::create(store, name + ".norm1", cin);
        r.conv1 = Conv2d<T>::create(store, name + ".conv1", cin, cout, 3, 1, 1, rng);
        r.norm2 = GroupNorm<T>::create(store, name + ".norm2", cout);
        r.conv2 = Conv2d<T>::create(store, name + ".conv2", cout, cout, 3, 1, 1, rng, /*zero_init=*/true);
        if (cin != cout) {
            r.skip = Conv2d<T>::create(store, name + ".skip", cin, cout, 1, 1, 0, rng);
            r.has_skip = true;
        }
        if (emb_dim > 0) {
            r.emb_proj = Linear<T>::create(store, name + ".emb", emb_dim, cout, rng);
            r.has_emb = true;
        }
        return r;
    }

    // x [B,C,H,W]; emb [B,emb_dim] or invalid
    Var forward(Graph<T>& g, Var x, Var emb = {}) const {
        Var h = conv1.forward(g, g.silu(norm1.forward(g, x)));
        if (has_emb && emb.valid()) h = g.add_sample_bias(h, emb_proj.forward(g, g.silu(emb)));
        h = conv2.forward(g, g.silu(norm2.forward(g, h)));
        Var s = has_skip ? skip.forward(g, x) : x;
        return g.add(s, h);
    }
};

// Single-head self-attention over spatial positions, zero-init out proj.
template <class T>
struct SelfAttention2d {
    GroupNorm<T> norm;
    Linear<T> to_q, to_k, to_v, to_out;
    int channels = 0;

    static SelfAttention2d create(ParamStore<T>& store, const std::string& name, int channels, Rng& rng) {
        SelfAttention2d a;
        a.channels = channels;
        a.norm = GroupNorm<T>::create(store, name + ".norm", channels);
        a.to_q = Linear<T>::create(store, name + ".to_q", channels, channels, rng);
        a.to_k = Linear<T>::create(store, name + ".to_k", channels, channels, rng);
        a.to_v = Linear<T>::create(store, name + ".to_v", channels, channels, rng);
        a.to_out = Linear<T>::create(store, name + ".to_out", channels, channels, rng, /*zero_init=*/true);
        return a;
    }

    Var forward(Graph<T>& g, Var x) const {
        const Shape& s = g.shape(x);
        const int B = s[0], C = s[1], H = s[2], W = s[3];
        const int L = H * W;
        Var h = norm.forward(g, x);
        Var tokens = g.permute(g.reshape(h, {B, C, L}), {0, 2, 1});  // [B,L,C]
        Var flat = g.reshape(tokens, {B * L, C});
        Var q = g.reshape(to_q.forward(g, flat), {B, L, C});
        Var k = g.reshape(to_k.forward(g, flat), {B, L, C});
        Var v = g.reshape(to_v.forward(g, flat), {B, L, C});
        Var scores = g.scale(g.batch_matmul(q, k, false, true), static_cast<T>(1.0 / std::sqrt((double)C)));
        Var att = g.batch_matmul(g.softmax_last(scores), v);  // [B,L,C]
        Var out = to_out.forward(g, g.reshape(att, {B * L, C}));
        out = g.reshape(g.permute(g.reshape(out, {B, L, C}), {0, 2, 1}), {B, C, H, W});
        return g.add(x, out);
    }
};

// Single-head cross-attention: queries from spatial positions, keys/values
// from a [B, Lctx, ctx_dim] context sequence (audio embeddings).
template <class T>
struct CrossAttention2d {
    GroupNorm<T> norm;
    Linear<T> to_q, to_k, to_v, to_out;
    int channels = 0;
    int ctx_dim = 0;

    static CrossAttention2d create(ParamStore<T>& store, const std::string& name, int channels, int ctx_dim,
                                   Rng& rng) {
        CrossAttention2d a;
        a.channels = channels;
        a.ctx_dim = ctx_dim;
        a.norm = GroupNorm<T>::create(store, name + ".norm", channels);
        a.to_q = Linear<T>::create(store, name + ".to_q", channels, channels, rng);
        a.to_k = Linear<T>::create(store, name + ".to_k", ctx_dim, channels, rng);
        a.to_v = Linear<T>::create(store, name + ".to_v", ctx_dim, channels, rng);
        a.to_out = Linear<T>::create(store, name + ".to_out", channels, channels, rng, /*zero_init=*/true);
        return a;
    }

    // x [B,C,H,W], ctx [B,Lctx,ctx_dim]
    Var forward(Graph<T>& g, Var x, Var ctx) const {
        const Shape& s = g.shape(x);
        const int B = s[0], C = s[1], H = s[2], W = s[3];
        const int L = H * W;
        const Shape& cs = g.shape(ctx);
        LIPSYNC_CHECK(cs.size() == 3 && cs[0] == B && cs[2] == ctx_dim, ShapeError,
                      "cross-attention context shape mismatch");
        const int Lc = cs[1];
        Var h = norm.forward(g, x);
        Var tokens = g.reshape(g.permute(g.reshape(h, {B, C, L}), {0, 2, 1}), {B * L, C});
        Var q = g.reshape(to_q.forward(g, tokens), {B, L, C});
        Var cflat = g.reshape(ctx, {B * Lc, ctx_dim});
        Var k = g.reshape(to_k.forward(g, cflat), {B, Lc, C});
        Var v = g.reshape(to_v.forward(g, cflat), {B, Lc, C});
        Var scores = g.scale(g.batch_matmul(q, k, false, true), static_cast<T>(1.0 / std::sqrt((double)C)));
        Var att = g.batch_matmul(g.softmax_last(scores), v);  // [B,L,C]
        Var out = to_out.forward(g, g.reshape(att, {B * L, C}));
        out = g.reshape(g.permute(g.reshape(out, {B, L, C}), {0, 2, 1}), {B, C, H, W});
        return g.add(x, out);
    }
};

// Attention across the frame axis at each spatial location, with a learnable
// position encoding over frames. Input is stored as [B*F, C, H, W]; zero-init
// out proj makes a freshly added temporal layer an identity.
template <class T>
struct TemporalAttention {
    GroupNorm<T> norm;
    Linear<T> to_q, to_k, to_v, to_out;
    Parameter<T>* pos = nullptr;  // [1, F_max, C]
    int channels = 0;
    int max_frames = 0;

    static TemporalAttention create(ParamStore<T>& store, const std::string& name, int channels, int max_frames,
                                    Rng& rng) {
        TemporalAttention a;
        a.channels = channels;
        a.max_frames = max_frames;
        a.norm = GroupNorm<T>::create(store, name + ".norm", channels);
        a.to_q = Linear<T>::create(store, name + ".to_q", channels, channels, rng);
        a.to_k = Linear<T>::create(store, name + ".to_k", channels, channels, rng);
        a.to_v = Linear<T>::create(store, name + ".to_v", channels, channels, rng);
        a.to_out = Linear<T>::create(store, name + ".to_out", channels, channels, rng, /*zero_init=*/true);
        a.pos = store.create(name + ".pos", Tensor<T>::randn({1, max_frames, channels}, rng, T(0.02)));
        return a;
    }

    // x stored [B*F, C, H, W]; frames = F
    Var forward(Graph<T>& g, Var x, int frames) const {
        const Shape& s = g.shape(x);
        LIPSYNC_CHECK(s[0] % frames == 0, ShapeError, "batch not divisible by frame count");
        LIPSYNC_CHECK(frames <= max_frames, ConfigError, "temporal attention frame count exceeds maximum");
        const int B = s[0] / frames, C = s[1], H = s[2], W = s[3];
        const int N = B * H * W;
        Var h = norm.forward(g, x);
        // [B,F,C,H,W] -> [B,H,W,F,C] -> [N,F,C]
        Var tok = g.reshape(g.permute(g.reshape(h, {B, frames, C, H, W}), {0, 3, 4, 1, 2}), {N, frames, C});
        Var posv = g.param(pos);
        if (frames != max_frames) posv = g.slice(posv, 1, 0, frames);
        tok = g.add_broadcast0(tok, posv);
        Var flat = g.reshape(tok, {N * frames, C});
        Var q = g.reshape(to_q.forward(g, flat), {N, frames, C});
        Var k = g.reshape(to_k.forward(g, flat), {N, frames, C});
        Var v = g.reshape(to_v.forward(g, flat), {N, frames, C});
        Var scores = g.scale(g.batch_matmul(q, k, false, true), static_cast<T>(1.0 / std::sqrt((double)C)));
        Var att = g.batch_matmul(g.softmax_last(scores), v);  // [N,F,C]
        Var out = to_out.forward(g, g.reshape(att, {N * frames, C}));
        // [N,F,C] -> [B,H,W,F,C] -> [B,F,C,H,W]
        out = g.reshape(g.permute(g.reshape(out, {B, H, W, frames, C}), {0, 3, 4, 1, 2}),
                        {B * frames, C, H, W});
        return g.add(x, out);
    }
};

template <class T>
struct Downsample {
    Conv2d<T> conv;

    static Downsample create(ParamStore<T>& store, const std::string& name, int cin, int cout, Rng& rng) {
        Downsample d;
        d.conv = Conv2d<T>::create(store, name + ".conv", cin, cout, 3, 2, 1, rng);
        return d;
    }

    Var forward(Graph<T>& g, Var x) const { return conv.forward(g, x); }
};

template <class T>
struct Upsample {
    Conv2d<T> conv;

    static Upsample create(ParamStore<T>& store, const std::string& name, int cin, int cout, Rng& rng) {
        Upsample u;
        u.conv = Conv2d<T>::create(store, name + ".conv", cin, cout, 3, 1, 1, rng);
        return u;
    }

    Var forward(Graph<T>& g, Var x) const { return conv.forward(g, g.upsample_nearest2x(x)); }
};

// classic sinusoidal features for integer timesteps
template <class T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& steps, int dim) {
    LIPSYNC_CHECK(dim % 2 == 0, ConfigError, "sinusoidal embedding dim must be even");
    const int half = dim / 2;
    Tensor<T> out({static_cast<int>(steps.size()), dim});
    for (size_t b = 0; b < steps.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
            const double ang = steps[b] * freq;
            out[static_cast<int64_t>(b) * dim + i] = static_cast<T>(std::sin(ang));
            out[static_cast<int64_t>(b) * dim + half + i] = static_cast<T>(std::cos(ang));
        }
    }
    return out;
}

}  // namespace lipsync
