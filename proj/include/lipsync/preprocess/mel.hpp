#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/tensor.hpp"
#include "lipsync/preprocess/avclip.hpp"

namespace lipsync {

// Log-mel extraction. hop=160 at 16 kHz gives exactly 4 mel steps per video
// frame at 25 fps, so windows concatenate frame-exactly with no resampling.
struct MelConfig {
    int n_mels = 80;
    int n_fft = 512;
    int win_length = 400;
    int hop_length = 160;
    double fmin = 0.0;
    double fmax = 8000.0;
    int sample_rate = kTargetRate;
    double power_floor = 1e-10;

    int steps_per_frame() const {
        LIPSYNC_CHECK(kSamplesPerFrame % hop_length == 0, ConfigError,
                      "hop must divide the per-frame sample count");
        return kSamplesPerFrame / hop_length;
    }
};

struct MelWindow {
    Tensor32 bins;            // [n_mels, steps]
    int frame_index = 0;      // first video frame covered
    int steps_per_frame = 4;

    int steps() const { return bins.dim(1); }
};

namespace detail {

// iterative radix-2 complex FFT, in place
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    LIPSYNC_CHECK((n & (n - 1)) == 0, ConfigError, "fft size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

class MelExtractor {
public:
    explicit MelExtractor(MelConfig cfg = {}) : cfg_(cfg) {
        LIPSYNC_CHECK(cfg_.win_length <= cfg_.n_fft, ConfigError, "window longer than fft size");
        // Hann window
        window_.resize(cfg_.win_length);
        for (int i = 0; i < cfg_.win_length; ++i)
            window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (cfg_.win_length - 1));
        build_filterbank_();
    }

    const MelConfig& config() const { return cfg_; }

    // Center frequency of each triangular band (analytic band lookup).
    double band_center_hz(int band) const {
        LIPSYNC_CHECK(band >= 0 && band < cfg_.n_mels, BoundsError, "mel band out of range");
        return band_centers_[band];
    }

    // log-mel for mel steps [s0, s1); step s covers samples [s*hop, s*hop+win)
    Tensor32 steps(const std::vector<float>& audio, int s0, int s1) const {
        LIPSYNC_CHECK(s1 > s0 && s0 >= 0, BoundsError, "bad mel step range");
        const int n_steps = s1 - s0;
        const int n_bins = cfg_.n_fft / 2 + 1;
        Tensor32 out({cfg_.n_mels, n_steps});
        std::vector<std::complex<double>> buf(cfg_.n_fft);
        std::vector<double> power(n_bins);
        for (int s = s0; s < s1; ++s) {
            const int64_t start = static_cast<int64_t>(s) * cfg_.hop_length;
            for (int i = 0; i < cfg_.n_fft; ++i) {
                const int64_t idx = start + i;
                const double v = (i < cfg_.win_length && idx < static_cast<int64_t>(audio.size()))
                                     ? static_cast<double>(audio[idx]) * window_[i]
                                     : 0.0;
                buf[i] = {v, 0.0};
            }
            detail::fft_radix2(buf);
            for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
            for (int m = 0; m < cfg_.n_mels; ++m) {
                double acc = 0;
                const auto& f = filters_[m];
                for (int k = f.first_bin; k < f.first_bin + static_cast<int>(f.weights.size()); ++k)
                    acc += f.weights[k - f.first_bin] * power[k];
                out[static_cast<int64_t>(m) * n_steps + (s - s0)] =
                    static_cast<float>(std::log(std::max(acc, cfg_.power_floor)));
            }
        }
        return out;
    }

    // mel window covering video frames [f0, f1)
    MelWindow frames(const std::vector<float>& audio, int f0, int f1) const {
        const int spf = cfg_.steps_per_frame();
        const int64_t needed = static_cast<int64_t>(f1) * kSamplesPerFrame;
        LIPSYNC_CHECK(f0 >= 0 && f1 > f0, BoundsError, "bad frame range");
        LIPSYNC_CHECK(needed <= static_cast<int64_t>(audio.size()) + kSamplesPerFrame, BoundsError,
                      "frame range outside clip audio");
        MelWindow w;
        w.frame_index = f0;
        w.steps_per_frame = spf;
        w.bins = steps(audio, f0 * spf, f1 * spf);
        return w;
    }

    float log_floor() const { return static_cast<float>(std::log(cfg_.power_floor)); }

private:
    struct Filter {
        int first_bin = 0;
        std::vector<double> weights;
    };

    void build_filterbank_() {
        const int n_bins = cfg_.n_fft / 2 + 1;
        const double mel_lo = detail::hz_to_mel(cfg_.fmin);
        const double mel_hi = detail::hz_to_mel(cfg_.fmax);
        std::vector<double> edges(cfg_.n_mels + 2);
        for (int i = 0; i < cfg_.n_mels + 2; ++i)
            edges[i] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg_.n_mels + 1));
        band_centers_.resize(cfg_.n_mels);
        filters_.resize(cfg_.n_mels);
        const double hz_per_bin = static_cast<double>(cfg_.sample_rate) / cfg_.n_fft;
        for (int m = 0; m < cfg_.n_mels; ++m) {
            const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
            band_centers_[m] = mid;
            Filter f;
            f.first_bin = std::max(0, static_cast<int>(std::ceil(lo / hz_per_bin)));
            for (int k = f.first_bin; k < n_bins; ++k) {
                const double hz = k * hz_per_bin;
                if (hz > hi) break;
                const double w = hz <= mid ? (mid > lo ? (hz - lo) / (mid - lo) : 0.0)
                                           : (hi > mid ? (hi - hz) / (hi - mid) : 0.0);
                f.weights.push_back(std::max(0.0, w));
            }
            if (f.weights.empty()) f.weights.push_back(0.0);
            filters_[m] = std::move(f);
        }
    }

    MelConfig cfg_;
    std::vector<double> window_;
    std::vector<Filter> filters_;
    std::vector<double> band_centers_;
};

}  // namespace lipsync
