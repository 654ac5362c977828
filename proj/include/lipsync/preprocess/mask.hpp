#pragma once

#include <cmath>
#include <utility>

#include "lipsync/core/common.hpp"
#include "lipsync/core/tensor.hpp"

namespace lipsync {

enum class MaskShape { full_face_rounded, rectangle };

// The mask is a pure function of this spec and the crop size: never of the
// frame content, so moving landmarks cannot leak lip cues through it.
struct MaskSpec {
    MaskShape shape = MaskShape::full_face_rounded;
    double scale = 1.0;               // concentric shrink factor in (0,1]
    double anchor_x = 0.5;            // mask center, normalized crop coords
    double anchor_y = 0.71;

    void validate() const {
        LIPSYNC_CHECK(scale > 0.0 && scale <= 1.0, ConfigError, "mask scale must lie in (0,1]");
    }
};

namespace detail {

// rounded trapezoid below the eye line; superellipse exponent rounds corners
inline bool inside_full_face(double u, double v) {
    constexpr double top = 0.46, bottom = 0.96;
    constexpr double w_top = 0.40, w_bot = 0.30;
    if (v < top || v > bottom) return false;
    const double s = (v - top) / (bottom - top);
    const double half_w = w_top + (w_bot - w_top) * s;
    const double cy = 0.5 * (top + bottom), ry = 0.5 * (bottom - top);
    const double nx = std::abs(u - 0.5) / half_w;
    const double ny = std::abs(v - cy) / ry;
    return nx * nx * nx * nx + ny * ny * ny * ny <= 1.0;
}

inline bool inside_rectangle(double u, double v) {
    return u >= 0.08 && u <= 0.92 && v >= 0.50 && v <= 0.96;
}

}  // namespace detail

// Renders the binary mask channel at a given square resolution: 1 inside.
template <class T>
Tensor<T> render_mask(const MaskSpec& spec, int size) {
    spec.validate();
    LIPSYNC_CHECK(size > 0, ShapeError, "mask size must be positive");
    Tensor<T> m({1, size, size});
    const double default_cx = 0.5, default_cy = 0.71;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            // undo the anchor shift, then expand around the center by 1/scale
            const double u0 = (x + 0.5) / size - (spec.anchor_x - default_cx);
            const double v0 = (y + 0.5) / size - (spec.anchor_y - default_cy);
            const double u = default_cx + (u0 - default_cx) / spec.scale;
            const double v = default_cy + (v0 - default_cy) / spec.scale;
            const bool in = spec.shape == MaskShape::full_face_rounded ? detail::inside_full_face(u, v)
                                                                       : detail::inside_rectangle(u, v);
            m[static_cast<int64_t>(y) * size + x] = in ? T(1) : T(0);
        }
    return m;
}

// crop [C,S,S] -> (masked crop with the region zeroed, mask channel [1,S,S])
template <class T>
std::pair<Tensor<T>, Tensor<T>> apply_fixed_mask(const Tensor<T>& crop, const MaskSpec& spec) {
    LIPSYNC_CHECK(crop.ndim() == 3 && crop.dim(1) == crop.dim(2), ShapeError,
                  "apply_fixed_mask wants a square [C,S,S] crop");
    const int S = crop.dim(1);
    Tensor<T> mask = render_mask<T>(spec, S);
    Tensor<T> masked(crop.shape());
    const int64_t hw = static_cast<int64_t>(S) * S;
    for (int ch = 0; ch < crop.dim(0); ++ch)
        for (int64_t p = 0; p < hw; ++p)
            masked[ch * hw + p] = crop[ch * hw + p] * (T(1) - mask[p]);
    return {std::move(masked), std::move(mask)};
}

// area-average downsample of the mask channel to the latent resolution;
// values stay in [0,1] and all-0/all-1 regions stay exactly 0/1
template <class T>
Tensor<T> downsample_mask(const Tensor<T>& mask, int out_size) {
    LIPSYNC_CHECK(mask.ndim() == 3 && mask.dim(0) == 1 && mask.dim(1) == mask.dim(2), ShapeError,
                  "downsample_mask wants [1,S,S]");
    const int S = mask.dim(1);
    LIPSYNC_CHECK(out_size > 0 && S % out_size == 0, ShapeError, "mask size not divisible by latent size");
    const int k = S / out_size;
    Tensor<T> out({1, out_size, out_size});
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) {
            double acc = 0;
            for (int j = 0; j < k; ++j)
                for (int i = 0; i < k; ++i) acc += static_cast<double>(mask[(static_cast<int64_t>(y) * k + j) * S + x * k + i]);
            out[static_cast<int64_t>(y) * out_size + x] = static_cast<T>(acc / (k * k));
        }
    return out;
}

}  // namespace lipsync
