#pragma once

#include <array>
#include <cmath>

#include "lipsync/core/common.hpp"
#include "lipsync/core/image.hpp"
#include "lipsync/core/tensor.hpp"

namespace lipsync {

// Row-major 2x3 matrix mapping source frame pixels to crop pixels.
struct AffineTransform {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};
    int out_size = 256;

    double det() const { return m[0] * m[4] - m[1] * m[3]; }

    void apply(double x, double y, double& ox, double& oy) const {
        ox = m[0] * x + m[1] * y + m[2];
        oy = m[3] * x + m[4] * y + m[5];
    }

    AffineTransform inverse() const {
        const double d = det();
        LIPSYNC_CHECK(std::abs(d) > 1e-12, GeometryError, "transform is not invertible");
        AffineTransform inv;
        inv.out_size = out_size;
        inv.m[0] = m[4] / d;
        inv.m[1] = -m[1] / d;
        inv.m[3] = -m[3] / d;
        inv.m[4] = m[0] / d;
        inv.m[2] = -(inv.m[0] * m[2] + inv.m[1] * m[5]);
        inv.m[5] = -(inv.m[3] * m[2] + inv.m[4] * m[5]);
        return inv;
    }
};

// 5-point canonical template (eyes, nose tip, mouth corners) in normalized
// crop coordinates. Synthetic faces are generated with this exact geometry.
inline Tensor64 canonical_landmark_template() {
    return Tensor64({5, 2}, {
                               0.34, 0.40,  // left eye
                               0.66, 0.40,  // right eye
                               0.50, 0.58,  // nose tip
                               0.37, 0.76,  // left mouth corner
                               0.63, 0.76,  // right mouth corner
                           });
}

inline void check_landmarks_not_degenerate(const Tensor64& pts) {
    const int n = pts.dim(0);
    LIPSYNC_CHECK(n >= 3, GeometryError, "need at least 3 landmarks");
    // collinearity: smallest eigenvalue of the 2x2 point covariance
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += pts.at({i, 0});
        my += pts.at({i, 1});
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
        const double dx = pts.at({i, 0}) - mx, dy = pts.at({i, 1}) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const double tr = sxx + syy;
    const double dd = std::sqrt(std::max(0.0, (sxx - syy) * (sxx - syy) + 4 * sxy * sxy));
    const double lam_min = (tr - dd) / 2;
    LIPSYNC_CHECK(tr > 1e-12, GeometryError, "landmarks coincide");
    LIPSYNC_CHECK(lam_min / tr > 1e-6, GeometryError, "landmarks are collinear");
}

// Least-squares similarity transform (rotation + uniform scale + translation)
// from src to dst point sets, both [N,2].
inline AffineTransform fit_similarity(const Tensor64& src, const Tensor64& dst, int out_size) {
    LIPSYNC_CHECK(src.same_shape(dst) && src.ndim() == 2 && src.dim(1) == 2, ShapeError,
                  "fit_similarity wants matching [N,2] point sets");
    check_landmarks_not_degenerate(src);
    const int n = src.dim(0);
    double sx = 0, sy = 0, dx = 0, dy = 0;
    for (int i = 0; i < n; ++i) {
        sx += src.at({i, 0});
        sy += src.at({i, 1});
        dx += dst.at({i, 0});
        dy += dst.at({i, 1});
    }
    sx /= n;
    sy /= n;
    dx /= n;
    dy /= n;
    double num_a = 0, num_b = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        const double ux = src.at({i, 0}) - sx, uy = src.at({i, 1}) - sy;
        const double vx = dst.at({i, 0}) - dx, vy = dst.at({i, 1}) - dy;
        num_a += ux * vx + uy * vy;
        num_b += ux * vy - uy * vx;
        den += ux * ux + uy * uy;
    }
    LIPSYNC_CHECK(den > 1e-12, GeometryError, "source landmarks coincide");
    const double a = num_a / den;
    const double b = num_b / den;
    AffineTransform t;
    t.out_size = out_size;
    t.m = {a, -b, dx - (a * sx - b * sy), b, a, dy - (b * sx + a * sy)};
    LIPSYNC_CHECK(std::abs(t.det()) > 1e-12, GeometryError, "degenerate similarity fit");
    return t;
}

// Inverse-warps src through `to_crop` into an out_size x out_size crop with
// bilinear sampling; out-of-frame samples are black.
inline ImageU8 warp_to_crop(const ImageU8& src, const AffineTransform& to_crop) {
    const AffineTransform inv = to_crop.inverse();
    const int S = to_crop.out_size;
    ImageU8 out(S, S, src.c);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            double fx, fy;
            inv.apply(x, y, fx, fy);
            const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
            const double ax = fx - x0, ay = fy - y0;
            for (int ch = 0; ch < src.c; ++ch) {
                double acc = 0;
                for (int j = 0; j <= 1; ++j)
                    for (int i = 0; i <= 1; ++i) {
                        const int yy = y0 + j, xx = x0 + i;
                        const double wgt = (i ? ax : 1 - ax) * (j ? ay : 1 - ay);
                        if (src.inside(yy, xx)) acc += wgt * src.at(yy, xx, ch);
                    }
                out.at(y, x, ch) = static_cast<uint8_t>(std::lround(std::clamp(acc, 0.0, 255.0)));
            }
        }
    return out;
}

// Aligns the face to the canonical template. Landmarks are normalized frame
// coordinates [5,2]. Returns the crop and the frame->crop transform.
inline std::pair<ImageU8, AffineTransform> frontalize(const ImageU8& frame, const Tensor32& landmarks,
                                                      int out_size = 256) {
    LIPSYNC_CHECK(landmarks.ndim() == 2 && landmarks.dim(0) == 5 && landmarks.dim(1) == 2, ShapeError,
                  "frontalize wants [5,2] landmarks");
    Tensor64 src({5, 2});
    for (int i = 0; i < 5; ++i) {
        src.at({i, 0}) = static_cast<double>(landmarks.at({i, 0})) * frame.w;
        src.at({i, 1}) = static_cast<double>(landmarks.at({i, 1})) * frame.h;
    }
    Tensor64 dst = canonical_landmark_template();
    for (auto& v : dst) v *= out_size;
    const AffineTransform t = fit_similarity(src, dst, out_size);
    return {warp_to_crop(frame, t), t};
}

// Warps the crop back into the original frame. Pixels outside the crop
// footprint are untouched; a feather band inside the footprint boundary
// blends crop over original. feather=0 gives a hard overwrite.
inline ImageU8 paste_back(const ImageU8& crop, const AffineTransform& transform, const ImageU8& frame,
                          double feather = 4.0) {
    LIPSYNC_CHECK(crop.h == transform.out_size && crop.w == transform.out_size, ShapeError,
                  "crop size does not match transform");
    const AffineTransform inv = transform.inverse();  // validates invertibility
    (void)inv;
    const int S = transform.out_size;
    ImageU8 out = frame;

    // bounding box of the footprint in frame coords
    double xs[4], ys[4];
    const double corners[4][2] = {{0, 0}, {double(S - 1), 0}, {0, double(S - 1)}, {double(S - 1), double(S - 1)}};
    for (int i = 0; i < 4; ++i) inv.apply(corners[i][0], corners[i][1], xs[i], ys[i]);
    const int x0 = std::max(0, static_cast<int>(std::floor(*std::min_element(xs, xs + 4))));
    const int x1 = std::min(frame.w - 1, static_cast<int>(std::ceil(*std::max_element(xs, xs + 4))));
    const int y0 = std::max(0, static_cast<int>(std::floor(*std::min_element(ys, ys + 4))));
    const int y1 = std::min(frame.h - 1, static_cast<int>(std::ceil(*std::max_element(ys, ys + 4))));

    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double cx, cy;
            transform.apply(x, y, cx, cy);
            if (cx < 0 || cy < 0 || cx > S - 1 || cy > S - 1) continue;
            const double edge = std::min({cx, cy, S - 1 - cx, S - 1 - cy});
            const double alpha = feather > 0 ? std::clamp(edge / feather, 0.0, 1.0) : 1.0;
            const int ix0 = static_cast<int>(std::floor(cx)), iy0 = static_cast<int>(std::floor(cy));
            const double ax = cx - ix0, ay = cy - iy0;
            for (int ch = 0; ch < crop.c; ++ch) {
                double acc = 0;
                for (int j = 0; j <= 1; ++j)
                    for (int i = 0; i <= 1; ++i) {
                        const int yy = std::min(iy0 + j, S - 1), xx = std::min(ix0 + i, S - 1);
                        acc += (i ? ax : 1 - ax) * (j ? ay : 1 - ay) * crop.at(yy, xx, ch);
                    }
                const double orig = out.at(y, x, ch);
                out.at(y, x, ch) =
                    static_cast<uint8_t>(std::lround(std::clamp(alpha * acc + (1 - alpha) * orig, 0.0, 255.0)));
            }
        }
    return out;
}

}  // namespace lipsync
