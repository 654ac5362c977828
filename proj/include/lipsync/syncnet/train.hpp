#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <type_traits>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/core/csv.hpp"
#include "lipsync/core/image.hpp"
#include "lipsync/core/optim.hpp"
#include "lipsync/core/serialize.hpp"
#include "lipsync/preprocess/mel.hpp"
#include "lipsync/preprocess/offset.hpp"
#include "lipsync/syncnet/syncnet.hpp"

namespace lipsync {

// Per-frame visual encoding hook ([3,H,W] pixels -> whatever the network
// consumes); the latent-space variant passes the autoencoder here.
template <class T>
using FrameEncodeFn = std::function<Tensor<T>(const Tensor<T>& frame_chw)>;

struct PairInfo {
    int visual_clip = 0;
    int visual_frame = 0;
    int audio_clip = 0;
    int audio_frame = 0;
    bool positive = true;
};

template <class T>
struct SyncBatch {
    Tensor<T> visual;  // [B, F*C, S, S]
    Tensor<T> mel;     // [B, 1, bins, 4F]
    Tensor<T> labels;  // [B]
    std::vector<PairInfo> pairs;
};

// Caches clips as scorer-ready tensors (resized pixel frames or per-frame
// latents, plus the whole-clip mel) and draws contrastive pairs from them.
template <class T>
class SyncDataset {
public:
    SyncDataset(const std::vector<AVClip>& clips, const SyncNetConfig& cfg,
                FrameEncodeFn<T> frame_encode = nullptr)
        : cfg_(cfg) {
        cfg_.validate();
        MelExtractor mel;
        for (const AVClip& clip : clips) {
            LIPSYNC_CHECK(clip.frame_count() >= cfg_.frames, ConfigError,
                          "clip " + clip.id + " shorter than one window");
            ClipData d;
            d.frames = clip.frame_count();
            d.mel = mel.frames(clip.audio, 0, clip.frame_count()).bins.template cast<T>();
            d.visual = Tensor<T>({d.frames, cfg_.visual_channels, cfg_.input_size, cfg_.input_size});
            for (int f = 0; f < d.frames; ++f) {
                Tensor<T> frame = clip.video.image(f).to_chw<T>();
                frame = frame_encode ? frame_encode(frame)
                                     : resize_bilinear_chw(frame, cfg_.input_size, cfg_.input_size);
                LIPSYNC_CHECK(frame.ndim() == 3 && frame.dim(0) == cfg_.visual_channels &&
                                  frame.dim(1) == cfg_.input_size && frame.dim(2) == cfg_.input_size,
                              ConfigError, "frame encoder produced wrong shape " + shape_str(frame.shape()));
                std::copy(frame.begin(), frame.end(), d.visual.data() + static_cast<int64_t>(f) * frame.numel());
            }
            clips_.push_back(std::move(d));
        }
        LIPSYNC_CHECK(can_sample_negative_(), ConfigError,
                      "corpus too small: need 2 clips or 2 disjoint windows in one clip");
    }

    const SyncNetConfig& config() const { return cfg_; }
    int clip_count() const { return static_cast<int>(clips_.size()); }

    // Each sample is independently positive with p = 0.5. Negatives pair the
    // visual window with audio from a misaligned window of the same clip
    // (offset >= F) or from a different clip, 50/50 where both exist.
    SyncBatch<T> sample_pairs(int batch, Rng& rng, bool shuffle_labels = false) const {
        SyncBatch<T> b;
        const int F = cfg_.frames;
        b.visual = Tensor<T>({batch, F * cfg_.visual_channels, cfg_.input_size, cfg_.input_size});
        b.mel = Tensor<T>({batch, 1, cfg_.mel_bins, cfg_.mel_steps()});
        b.labels = Tensor<T>({batch});
        for (int i = 0; i < batch; ++i) {
            const bool positive = rng.bernoulli(0.5);
            const int ci = static_cast<int>(rng.uniform_int(clips_.size()));
            const int fv = static_cast<int>(rng.uniform_int(clips_[ci].frames - F + 1));
            int ca = ci, fa = fv;
            if (!positive) sample_negative_(rng, ci, fv, ca, fa);
            fill_visual_(b.visual, i, ci, fv);
            fill_mel_(b.mel, i, ca, fa);
            const bool label = shuffle_labels ? rng.bernoulli(0.5) : positive;
            b.labels[i] = label ? T(1) : T(0);
            b.pairs.push_back({ci, fv, ca, fa, positive});
        }
        return b;
    }

    // exactly balanced labeled pairs for evaluation
    SyncBatch<T> sample_balanced(int batch, Rng& rng) const {
        LIPSYNC_CHECK(batch > 0 && batch % 2 == 0, ConfigError, "balanced batch must be even");
        SyncBatch<T> b;
        const int F = cfg_.frames;
        b.visual = Tensor<T>({batch, F * cfg_.visual_channels, cfg_.input_size, cfg_.input_size});
        b.mel = Tensor<T>({batch, 1, cfg_.mel_bins, cfg_.mel_steps()});
        b.labels = Tensor<T>({batch});
        for (int i = 0; i < batch; ++i) {
            const bool positive = i < batch / 2;
            const int ci = static_cast<int>(rng.uniform_int(clips_.size()));
            const int fv = static_cast<int>(rng.uniform_int(clips_[ci].frames - F + 1));
            int ca = ci, fa = fv;
            if (!positive) sample_negative_(rng, ci, fv, ca, fa);
            fill_visual_(b.visual, i, ci, fv);
            fill_mel_(b.mel, i, ca, fa);
            b.labels[i] = positive ? T(1) : T(0);
            b.pairs.push_back({ci, fv, ca, fa, positive});
        }
        return b;
    }

private:
    struct ClipData {
        int frames = 0;
        Tensor<T> visual;  // [F, C, S, S]
        Tensor<T> mel;     // [bins, 4*F]
    };

    bool can_sample_negative_() const {
        if (clips_.size() >= 2) return true;
        return !clips_.empty() && clips_[0].frames >= 2 * cfg_.frames;
    }

    void sample_negative_(Rng& rng, int ci, int fv, int& ca, int& fa) const {
        const int F = cfg_.frames;
        const bool within_ok = clips_[ci].frames >= 2 * F;
        const bool cross_ok = clips_.size() >= 2;
        const bool within = within_ok && (!cross_ok || rng.bernoulli(0.5));
        if (within) {
            ca = ci;
            do {
                fa = static_cast<int>(rng.uniform_int(clips_[ci].frames - F + 1));
            } while (std::abs(fa - fv) < F);
        } else {
            do {
                ca = static_cast<int>(rng.uniform_int(clips_.size()));
            } while (ca == ci);
            fa = static_cast<int>(rng.uniform_int(clips_[ca].frames - F + 1));
        }
    }

    void fill_visual_(Tensor<T>& dst, int row, int ci, int fv) const {
        const ClipData& d = clips_[ci];
        const int64_t per_frame = static_cast<int64_t>(cfg_.visual_channels) * cfg_.input_size * cfg_.input_size;
        const int64_t win = per_frame * cfg_.frames;
        std::copy(d.visual.data() + fv * per_frame, d.visual.data() + fv * per_frame + win,
                  dst.data() + row * win);
    }

    void fill_mel_(Tensor<T>& dst, int row, int ca, int fa) const {
        const ClipData& d = clips_[ca];
        const int spf = cfg_.mel_steps_per_frame;
        const int steps = cfg_.mel_steps();
        const int total = d.mel.dim(1);
        T* out = dst.data() + static_cast<int64_t>(row) * cfg_.mel_bins * steps;
        for (int m = 0; m < cfg_.mel_bins; ++m)
            std::copy(d.mel.data() + static_cast<int64_t>(m) * total + fa * spf,
                      d.mel.data() + static_cast<int64_t>(m) * total + fa * spf + steps,
                      out + static_cast<int64_t>(m) * steps);
    }

    SyncNetConfig cfg_;
    std::vector<ClipData> clips_;
};

// ---- training ----

struct SyncTrainOptions {
    int steps = 2000;
    double lr = 1e-4;  // cosine-decayed adaptive-moment descent
    double grad_clip = 1.0;
    int val_every = 50;
    int val_batch = 128;
    uint64_t seed = 1;
    std::string out_dir;        // curves/scatter/checkpoint land here when set
    int scatter_every = 0;      // probability-scatter dump period; 0 = off
    int scatter_points = 256;
    bool shuffle_labels = false;  // null experiment: labels decoupled from pairs
    double early_stop_loss = 0;   // stop once the trailing train mean drops below
    int trailing_window = 100;
};

struct SyncTrainResult {
    std::vector<double> train_curve;                // loss per step
    std::vector<std::pair<int, double>> val_curve;  // (step, loss)
    double best_val = 1e30;
    int best_step = -1;
    double final_train_mean = 0;  // trailing-window mean
    double final_val = 1e30;
    int steps_run = 0;
    std::string checkpoint_path;
};

enum class LossFloorDiagnosis { STUCK, CONVERGING, DIVERGED };

inline const char* to_string(LossFloorDiagnosis d) {
    switch (d) {
        case LossFloorDiagnosis::STUCK: return "STUCK";
        case LossFloorDiagnosis::CONVERGING: return "CONVERGING";
        default: return "DIVERGED";
    }
}

// Trailing-window mean in [0.68, 0.70] with a flat slope means the model is
// pinned to the ln2 floor of a coin-flipping classifier.
inline LossFloorDiagnosis detect_loss_floor(const std::vector<double>& curve) {
    LIPSYNC_CHECK(curve.size() >= 500, BoundsError, "need at least 500 steps of curve");
    const int w = std::min<int>(200, static_cast<int>(curve.size()) / 4);
    double mean = 0;
    for (int i = 0; i < w; ++i) {
        const double v = curve[curve.size() - 1 - i];
        if (!std::isfinite(v)) return LossFloorDiagnosis::DIVERGED;
        mean += v / w;
    }
    if (mean > 1.0) return LossFloorDiagnosis::DIVERGED;
    // least-squares slope over the trailing window
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < w; ++i) {
        const double x = i, y = curve[curve.size() - w + i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (w * sxy - sx * sy) / std::max(1e-12, w * sxx - sx * sx);
    if (mean >= 0.68 && mean <= 0.70 && std::abs(slope) * w < 0.01) return LossFloorDiagnosis::STUCK;
    return LossFloorDiagnosis::CONVERGING;
}

struct ScatterRecord {
    int step;
    int sample_id;
    double q;
};

// q(x=1) for every sample of a batch; the Appendix-style diagnostic that
// shows a stuck model's predictions collapsing onto 0.5.
template <class T>
std::vector<ScatterRecord> probability_scatter(const StableSyncNet<T>& model, const SyncBatch<T>& batch,
                                               int step) {
    Graph<T> g;
    Var q = model.similarity_from_inputs(g, g.input(batch.visual), g.input(batch.mel));
    std::vector<ScatterRecord> out;
    const Tensor<T>& qv = g.val(q);
    out.reserve(qv.numel());
    for (int64_t i = 0; i < qv.numel(); ++i)
        out.push_back({step, static_cast<int>(i), static_cast<double>(qv[i])});
    return out;
}

template <class T>
double mean_loss_on(const StableSyncNet<T>& model, const SyncBatch<T>& batch) {
    Graph<T> g;
    Var q = model.similarity_from_inputs(g, g.input(batch.visual), g.input(batch.mel));
    Var loss = contrastive_loss(g, q, batch.labels);
    return static_cast<double>(g.val(loss)[0]);
}

// fraction of balanced pairs with (q > 0.5) == label
template <class T>
double evaluate_accuracy(const StableSyncNet<T>& model, const SyncBatch<T>& batch) {
    LIPSYNC_CHECK(batch.labels.numel() > 0, ConfigError, "empty test set");
    Graph<T> g;
    Var q = model.similarity_from_inputs(g, g.input(batch.visual), g.input(batch.mel));
    const Tensor<T>& qv = g.val(q);
    int64_t hits = 0;
    for (int64_t i = 0; i < qv.numel(); ++i)
        if ((qv[i] > T(0.5)) == (batch.labels[i] > T(0.5))) ++hits;
    return static_cast<double>(hits) / static_cast<double>(qv.numel());
}

// Contrastive training with balanced random pairs, periodic validation,
// best-checkpoint tracking, and optional scatter dumps. NaN loss aborts.
template <class T>
SyncTrainResult train_syncnet(StableSyncNet<T>& model, const SyncDataset<T>& train_data,
                              const std::type_identity_t<SyncDataset<T>>* val_data,
                              const SyncTrainOptions& opt) {
    namespace fs = std::filesystem;
    Rng rng(opt.seed);
    Rng val_rng(opt.seed ^ 0xabcdef12345ull);
    AdamOptimizer<T> optim;
    optim.lr = opt.lr;
    optim.clip_global_norm = opt.grad_clip;

    SyncTrainResult result;
    CsvWriter curves;
    CsvWriter scatter;
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        curves.open(opt.out_dir + "/curves.csv", {"step", "split", "loss"});
        if (opt.scatter_every > 0)
            scatter.open(opt.out_dir + "/scatter.csv", {"step", "sample_id", "q"});
        result.checkpoint_path = opt.out_dir + "/syncnet_best.ckpt";
    }

    std::optional<SyncBatch<T>> val_batch;
    if (val_data) val_batch = val_data->sample_balanced(opt.val_batch, val_rng);

    for (int step = 0; step < opt.steps; ++step) {
        const SyncBatch<T> batch =
            train_data.sample_pairs(model.config().batch_size, rng, opt.shuffle_labels);
        Graph<T> g;
        Var q = model.similarity_from_inputs(g, g.input(batch.visual), g.input(batch.mel));
        Var loss = contrastive_loss(g, q, batch.labels);
        const double lv = static_cast<double>(g.val(loss)[0]);
        if (!std::isfinite(lv)) {
            throw NumericError("syncnet training diverged (non-finite loss) at step " +
                               std::to_string(step));
        }
        model.params().zero_grads();
        g.backward(loss);
        optim.step(model.params(), cosine_decay(step, opt.steps));

        result.train_curve.push_back(lv);
        if (curves.is_open()) curves.row(std::vector<double>{static_cast<double>(step), 0.0, lv});

        if (opt.scatter_every > 0 && (step % opt.scatter_every == 0 || step == opt.steps - 1)) {
            const SyncBatch<T> sb = train_data.sample_pairs(opt.scatter_points, rng, opt.shuffle_labels);
            for (const ScatterRecord& r : probability_scatter(model, sb, step))
                scatter.row(std::vector<double>{static_cast<double>(r.step), static_cast<double>(r.sample_id), r.q});
        }

        const bool last = step == opt.steps - 1;
        if (val_batch && (step % opt.val_every == 0 || last)) {
            const double vl = mean_loss_on(model, *val_batch);
            result.val_curve.emplace_back(step, vl);
            result.final_val = vl;
            if (curves.is_open()) curves.row(std::vector<double>{static_cast<double>(step), 1.0, vl});
            if (vl < result.best_val) {
                result.best_val = vl;
                result.best_step = step;
                if (!result.checkpoint_path.empty())
                    save_checkpoint<T>(result.checkpoint_path, model.params(), model.config().to_json(),
                                       {{"rng", rng.state_hex()}}, step);
            }
        }

        result.steps_run = step + 1;
        if (opt.early_stop_loss > 0 && static_cast<int>(result.train_curve.size()) >= opt.trailing_window) {
            double m = 0;
            for (int i = 0; i < opt.trailing_window; ++i)
                m += result.train_curve[result.train_curve.size() - 1 - i] / opt.trailing_window;
            if (m < opt.early_stop_loss) break;
        }
    }

    const int w = std::min<int>(opt.trailing_window, static_cast<int>(result.train_curve.size()));
    for (int i = 0; i < w; ++i)
        result.final_train_mean += result.train_curve[result.train_curve.size() - 1 - i] / w;
    if (curves.is_open()) curves.flush();
    return result;
}

// convenience split: last `val_fraction` of clips become the validation set
inline std::pair<std::vector<AVClip>, std::vector<AVClip>> split_train_val(std::vector<AVClip> clips,
                                                                           double val_fraction = 0.25) {
    const int n_val = std::max(1, static_cast<int>(clips.size() * val_fraction));
    LIPSYNC_CHECK(static_cast<int>(clips.size()) > n_val, ConfigError, "not enough clips to split");
    std::vector<AVClip> val(clips.end() - n_val, clips.end());
    clips.resize(clips.size() - n_val);
    return {std::move(clips), std::move(val)};
}

// ---- trained scorer bridging into the preprocess offset scanner ----

// Scores AVClip windows with a pixel-space sync network. Caches per-position
// embeddings per clip so an offset sweep reuses visual embeddings across all
// candidate shifts. Single-threaded by design.
template <class T>
class SyncNetScorer : public SyncScorer {
public:
    explicit SyncNetScorer(const StableSyncNet<T>* model) : model_(model) {
        LIPSYNC_CHECK(model_ != nullptr, ConfigError, "null scorer model");
        LIPSYNC_CHECK(model_->config().input_space == InputSpace::pixel, ConfigError,
                      "offset scoring uses the pixel-space scorer");
    }

    int window_frames() const override { return model_->config().frames; }

    double score(const AVClip& clip, int fv, int fa) const override {
        return score_batch(clip, {{fv, fa}})[0];
    }

    std::vector<double> score_batch(const AVClip& clip,
                                    const std::vector<std::pair<int, int>>& windows) const override {
        prepare_(clip);
        std::vector<int> need_v, need_a;
        for (const auto& [fv, fa] : windows) {
            if (!vis_cache_.count(fv)) need_v.push_back(fv);
            if (!aud_cache_.count(fa)) need_a.push_back(fa);
        }
        std::sort(need_v.begin(), need_v.end());
        need_v.erase(std::unique(need_v.begin(), need_v.end()), need_v.end());
        std::sort(need_a.begin(), need_a.end());
        need_a.erase(std::unique(need_a.begin(), need_a.end()), need_a.end());
        embed_visual_(need_v);
        embed_audio_(need_a);

        std::vector<double> out;
        out.reserve(windows.size());
        const int d = model_->config().embed_dim;
        for (const auto& [fv, fa] : windows) {
            const Tensor<T>& v = vis_cache_.at(fv);
            const Tensor<T>& a = aud_cache_.at(fa);
            double dot = 0;
            for (int k = 0; k < d; ++k) dot += static_cast<double>(v[k]) * static_cast<double>(a[k]);
            out.push_back(std::clamp(dot, kSimilarityEps, 1.0 - kSimilarityEps));
        }
        return out;
    }

private:
    void prepare_(const AVClip& clip) const {
        const std::string key = clip.id + "#" + std::to_string(clip.frame_count()) + "#" +
                                std::to_string(clip.audio.empty() ? 0 : static_cast<int>(clip.audio[0] * 1e6));
        if (key == clip_key_) return;
        clip_key_ = key;
        vis_cache_.clear();
        aud_cache_.clear();
        const SyncNetConfig& cfg = model_->config();
        frames_ = Tensor<T>({clip.frame_count(), 3, cfg.input_size, cfg.input_size});
        for (int f = 0; f < clip.frame_count(); ++f) {
            const Tensor<T> fr =
                resize_bilinear_chw(clip.video.image(f).to_chw<T>(), cfg.input_size, cfg.input_size);
            std::copy(fr.begin(), fr.end(), frames_.data() + static_cast<int64_t>(f) * fr.numel());
        }
        MelExtractor mel;
        mel_ = mel.frames(clip.audio, 0, clip.frame_count()).bins.template cast<T>();
        clip_frames_ = clip.frame_count();
    }

    void embed_visual_(const std::vector<int>& fs) const {
        if (fs.empty()) return;
        const SyncNetConfig& cfg = model_->config();
        const int F = cfg.frames;
        const int64_t per_frame = static_cast<int64_t>(3) * cfg.input_size * cfg.input_size;
        Tensor<T> batch({static_cast<int>(fs.size()), F * 3, cfg.input_size, cfg.input_size});
        for (size_t i = 0; i < fs.size(); ++i) {
            LIPSYNC_CHECK(fs[i] >= 0 && fs[i] + F <= clip_frames_, BoundsError, "visual window out of clip");
            std::copy(frames_.data() + fs[i] * per_frame, frames_.data() + (fs[i] + F) * per_frame,
                      batch.data() + static_cast<int64_t>(i) * F * per_frame);
        }
        Graph<T> g;
        Var emb = model_->embed_visual(g, g.input(batch));
        const Tensor<T>& e = g.val(emb);
        const int d = cfg.embed_dim;
        for (size_t i = 0; i < fs.size(); ++i) {
            Tensor<T> row({d});
            std::copy(e.data() + static_cast<int64_t>(i) * d, e.data() + static_cast<int64_t>(i + 1) * d,
                      row.data());
            vis_cache_[fs[i]] = std::move(row);
        }
    }

    void embed_audio_(const std::vector<int>& fs) const {
        if (fs.empty()) return;
        const SyncNetConfig& cfg = model_->config();
        const int steps = cfg.mel_steps();
        const int spf = cfg.mel_steps_per_frame;
        const int total = mel_.dim(1);
        Tensor<T> batch({static_cast<int>(fs.size()), 1, cfg.mel_bins, steps});
        for (size_t i = 0; i < fs.size(); ++i) {
            LIPSYNC_CHECK(fs[i] >= 0 && fs[i] * spf + steps <= total, BoundsError, "audio window out of clip");
            for (int m = 0; m < cfg.mel_bins; ++m)
                std::copy(mel_.data() + static_cast<int64_t>(m) * total + fs[i] * spf,
                          mel_.data() + static_cast<int64_t>(m) * total + fs[i] * spf + steps,
                          batch.data() + (static_cast<int64_t>(i) * cfg.mel_bins + m) * steps);
        }
        Graph<T> g;
        Var emb = model_->embed_audio(g, g.input(batch));
        const Tensor<T>& e = g.val(emb);
        const int d = cfg.embed_dim;
        for (size_t i = 0; i < fs.size(); ++i) {
            Tensor<T> row({d});
            std::copy(e.data() + static_cast<int64_t>(i) * d, e.data() + static_cast<int64_t>(i + 1) * d,
                      row.data());
            aud_cache_[fs[i]] = std::move(row);
        }
    }

    const StableSyncNet<T>* model_;
    mutable std::string clip_key_;
    mutable Tensor<T> frames_;
    mutable Tensor<T> mel_;
    mutable int clip_frames_ = 0;
    mutable std::map<int, Tensor<T>> vis_cache_;
    mutable std::map<int, Tensor<T>> aud_cache_;
};

}  // namespace lipsync
