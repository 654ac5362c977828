#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/tensor.hpp"

namespace lipsync {

// Interleaved uint8 image, RGB or grayscale.
struct ImageU8 {
    int h = 0, w = 0, c = 3;
    std::vector<uint8_t> data;

    ImageU8() = default;
    ImageU8(int h_, int w_, int c_ = 3, uint8_t fill = 0) : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    uint8_t& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    uint8_t at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }

    bool inside(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

    void set_pixel(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
        if (!inside(y, x)) return;
        at(y, x, 0) = r;
        if (c >= 3) {
            at(y, x, 1) = g;
            at(y, x, 2) = b;
        }
    }

    // [C,H,W] float in [0,1]
    template <class T>
    Tensor<T> to_chw() const {
        Tensor<T> t({c, h, w});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    t[(static_cast<int64_t>(ch) * h + y) * w + x] = static_cast<T>(at(y, x, ch)) / T(255);
        return t;
    }

    template <class T>
    static ImageU8 from_chw(const Tensor<T>& t) {
        LIPSYNC_CHECK(t.ndim() == 3, ShapeError, "from_chw needs [C,H,W]");
        ImageU8 img(t.dim(1), t.dim(2), t.dim(0));
        for (int ch = 0; ch < img.c; ++ch)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    const double v = static_cast<double>(t[(static_cast<int64_t>(ch) * img.h + y) * img.w + x]);
                    img.at(y, x, ch) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                }
        return img;
    }
};

// Frame-major contiguous video, uint8 interleaved RGB.
struct VideoBuffer {
    int frames = 0, h = 0, w = 0, c = 3;
    std::vector<uint8_t> data;

    VideoBuffer() = default;
    VideoBuffer(int frames_, int h_, int w_, int c_ = 3)
        : frames(frames_), h(h_), w(w_), c(c_), data(static_cast<size_t>(frames_) * h_ * w_ * c_, 0) {}

    size_t frame_bytes() const { return static_cast<size_t>(h) * w * c; }
    uint8_t* frame(int f) { return data.data() + static_cast<size_t>(f) * frame_bytes(); }
    const uint8_t* frame(int f) const { return data.data() + static_cast<size_t>(f) * frame_bytes(); }

    ImageU8 image(int f) const {
        LIPSYNC_CHECK(f >= 0 && f < frames, BoundsError, "frame index out of range");
        ImageU8 img(h, w, c);
        std::copy(frame(f), frame(f) + frame_bytes(), img.data.begin());
        return img;
    }

    void set_image(int f, const ImageU8& img) {
        LIPSYNC_CHECK(f >= 0 && f < frames, BoundsError, "frame index out of range");
        LIPSYNC_CHECK(img.h == h && img.w == w && img.c == c, ShapeError, "frame size mismatch");
        std::copy(img.data.begin(), img.data.end(), frame(f));
    }

    // stacked window [n*c, h, w] floats in [0,1], frames [f, f+n)
    template <class T>
    Tensor<T> window_chw(int f, int n) const {
        LIPSYNC_CHECK(f >= 0 && f + n <= frames, BoundsError, "window out of range");
        Tensor<T> t({n * c, h, w});
        const int64_t hw = static_cast<int64_t>(h) * w;
        for (int i = 0; i < n; ++i) {
            const uint8_t* src = frame(f + i);
            for (int ch = 0; ch < c; ++ch) {
                T* dst = t.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t p = 0; p < hw; ++p) dst[p] = static_cast<T>(src[p * c + ch]) / T(255);
            }
        }
        return t;
    }
};

// bilinear resize of a [C,H,W] tensor
template <class T>
Tensor<T> resize_bilinear_chw(const Tensor<T>& src, int oh, int ow) {
    LIPSYNC_CHECK(src.ndim() == 3, ShapeError, "resize wants [C,H,W]");
    const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
    if (oh == H && ow == W) return src;
    Tensor<T> out({C, oh, ow});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const double fy = (y + 0.5) * H / oh - 0.5;
                const double fx = (x + 0.5) * W / ow - 0.5;
                const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, H - 1);
                const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, W - 1);
                const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double ay = std::clamp(fy - y0, 0.0, 1.0), ax = std::clamp(fx - x0, 0.0, 1.0);
                const auto at = [&](int yy, int xx) {
                    return static_cast<double>(src[(static_cast<int64_t>(c) * H + yy) * W + xx]);
                };
                out[(static_cast<int64_t>(c) * oh + y) * ow + x] =
                    static_cast<T>((1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) +
                                   ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1)));
            }
    return out;
}

inline void write_ppm(const std::string& path, const ImageU8& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    LIPSYNC_CHECK(os.good(), IoError, "cannot open " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    if (img.c == 3) {
        os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    } else {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                for (int k = 0; k < 3; ++k) os.put(static_cast<char>(img.at(y, x, 0)));
    }
    LIPSYNC_CHECK(os.good(), IoError, "write failed: " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    is >> magic >> w >> h >> maxv;
    LIPSYNC_CHECK(magic == "P6" && maxv == 255, IngestError, "unsupported ppm: " + path);
    is.get();
    ImageU8 img(h, w, 3);
    is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    LIPSYNC_CHECK(is.good(), IngestError, "truncated ppm: " + path);
    return img;
}

// ---- simple software rasterizer (synthetic faces, report plots) ----

inline void fill_ellipse(ImageU8& img, double cy, double cx, double ry, double rx, uint8_t r, uint8_t g,
                         uint8_t b) {
    if (ry <= 0 || rx <= 0) return;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + ry)));
    for (int y = y0; y <= y1; ++y) {
        const double dy = (y - cy) / ry;
        const double span = 1.0 - dy * dy;
        if (span < 0) continue;
        const double half = rx * std::sqrt(span);
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - half)));
        const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + half)));
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x - cx) / rx;
            if (dx * dx + dy * dy <= 1.0) img.set_pixel(y, x, r, g, b);
        }
    }
}

inline void fill_rect(ImageU8& img, double y0, double x0, double y1, double x1, uint8_t r, uint8_t g,
                      uint8_t b) {
    const int iy0 = std::max(0, static_cast<int>(std::round(y0)));
    const int iy1 = std::min(img.h - 1, static_cast<int>(std::round(y1)));
    const int ix0 = std::max(0, static_cast<int>(std::round(x0)));
    const int ix1 = std::min(img.w - 1, static_cast<int>(std::round(x1)));
    for (int y = iy0; y <= iy1; ++y)
        for (int x = ix0; x <= ix1; ++x) img.set_pixel(y, x, r, g, b);
}

inline void draw_line(ImageU8& img, double y0, double x0, double y1, double x1, uint8_t r, uint8_t g,
                      uint8_t b) {
    const int steps = static_cast<int>(std::max(std::abs(y1 - y0), std::abs(x1 - x0))) + 1;
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        img.set_pixel(static_cast<int>(std::round(y0 + t * (y1 - y0))),
                      static_cast<int>(std::round(x0 + t * (x1 - x0))), r, g, b);
    }
}

}  // namespace lipsync
