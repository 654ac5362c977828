#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/gemm.hpp"
#include "lipsync/core/params.hpp"
#include "lipsync/core/tensor.hpp"

namespace lipsync {

// Handle into a Graph. Plain index so it stays valid across node appends.
struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

// Reverse-mode autodiff on a dynamic tape. A training step builds the graph,
// calls backward(), reads parameter grads, then reset()s the tape. Creation
// order is a topological order, so backward is a single reverse sweep.
template <class T>
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void reset() { nodes_.clear(); }
    size_t node_count() const { return nodes_.size(); }

    const Tensor<T>& val(Var v) const { return nodes_[check_(v)].val; }
    const Shape& shape(Var v) const { return val(v).shape(); }

    // Gradient received by a node (zeros if it never received one).
    Tensor<T> grad_of(Var v) {
        Node& n = nodes_[check_(v)];
        if (!n.grad.defined()) return Tensor<T>::zeros(n.val.shape());
        return n.grad;
    }

    // ---- leaves ----

    Var input(Tensor<T> t, bool requires_grad = false) {
        return push_(std::move(t), requires_grad, {});
    }

    Var param(Parameter<T>* p) {
        LIPSYNC_CHECK(p != nullptr, ConfigError, "null parameter");
        Var out = push_(p->value, p->trainable, {});
        if (p->trainable) {
            int oi = out.i;
            nodes_[oi].back = [this, oi, p]() {
                Tensor<T>& g = nodes_[oi].grad;
                T* dst = p->grad.data();
                const T* src = g.data();
                for (int64_t k = 0; k < g.numel(); ++k) dst[k] += src[k];
            };
        }
        return out;
    }

    // ---- elementwise ----

    Var add(Var a, Var b) { return binary_(a, b, [](T x, T y) { return x + y; }, T(1), T(1)); }
    Var sub(Var a, Var b) { return binary_(a, b, [](T x, T y) { return x - y; }, T(1), T(-1)); }

    Var mul(Var a, Var b) {
        const Tensor<T>&ta = val(a), &tb = val(b);
        LIPSYNC_CHECK(ta.same_shape(tb), ShapeError, "mul shape mismatch");
        Tensor<T> out(ta.shape());
        for (int64_t k = 0; k < out.numel(); ++k) out[k] = ta[k] * tb[k];
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(a)) {
                Tensor<T>& ga = grad_buf_(a);
                const Tensor<T>& tb = val(b);
                for (int64_t k = 0; k < g.numel(); ++k) ga[k] += g[k] * tb[k];
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                const Tensor<T>& ta = val(a);
                for (int64_t k = 0; k < g.numel(); ++k) gb[k] += g[k] * ta[k];
            }
        };
        return o;
    }

    Var scale(Var a, T c) {
        Tensor<T> out(val(a).shape());
        const Tensor<T>& ta = val(a);
        for (int64_t k = 0; k < out.numel(); ++k) out[k] = ta[k] * c;
        return unary_backward_(std::move(out), a, [c](T, T) { return c; });
    }

    Var add_const(Var a, T c) {
        Tensor<T> out(val(a).shape());
        const Tensor<T>& ta = val(a);
        for (int64_t k = 0; k < out.numel(); ++k) out[k] = ta[k] + c;
        return unary_backward_(std::move(out), a, [](T, T) { return T(1); });
    }

    Var relu(Var a) { return unary_(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); }); }

    Var leaky_relu(Var a, T alpha) {
        return unary_(a, [alpha](T x) { return x > T(0) ? x : alpha * x; },
                      [alpha](T x, T) { return x > T(0) ? T(1) : alpha; });
    }

    Var sigmoid(Var a) {
        return unary_(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                      [](T, T y) { return y * (T(1) - y); });
    }

    Var silu(Var a) {
        return unary_(a, [](T x) { return x / (T(1) + std::exp(-x)); },
                      [](T x, T) {
                          const T s = T(1) / (T(1) + std::exp(-x));
                          return s * (T(1) + x * (T(1) - s));
                      });
    }

    Var tanh_op(Var a) {
        return unary_(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
    }

    Var exp_op(Var a) { return unary_(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; }); }

    Var log_op(Var a) {
        for (const T& x : val(a)) LIPSYNC_CHECK(x > T(0), NumericError, "log of nonpositive value");
        return unary_(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
    }

    Var sqrt_op(Var a) {
        for (const T& x : val(a)) LIPSYNC_CHECK(x >= T(0), NumericError, "sqrt of negative value");
        return unary_(a, [](T x) { return std::sqrt(x); },
                      [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
    }

    // Gradient passes only strictly inside (lo, hi).
    Var clamp(Var a, T lo, T hi) {
        return unary_(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        Tensor<T> out = Tensor<T>::scalar(val(a).sum());
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a]() {
            if (!requires_(a)) return;
            const T g = nodes_[oi].grad[0];
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t k = 0; k < ga.numel(); ++k) ga[k] += g;
        };
        return o;
    }

    Var mean_all(Var a) {
        const int64_t n = val(a).numel();
        return scale(sum_all(a), T(1) / static_cast<T>(n));
    }

    // ---- shaping ----

    Var reshape(Var a, Shape shape) {
        Tensor<T> out = val(a).reshaped(shape).clone();
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a]() {
            if (!requires_(a)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t k = 0; k < g.numel(); ++k) ga[k] += g[k];
        };
        return o;
    }

    Var permute(Var a, std::vector<int> perm) {
        const Tensor<T>& ta = val(a);
        LIPSYNC_CHECK(static_cast<int>(perm.size()) == ta.ndim(), ShapeError, "permute rank mismatch");
        Shape out_shape(perm.size());
        for (size_t d = 0; d < perm.size(); ++d) out_shape[d] = ta.dim(perm[d]);
        Tensor<T> out(out_shape);
        permute_copy_(ta, out, perm);
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, perm]() {
            if (!requires_(a)) return;
            // inverse permutation routes the gradient back
            std::vector<int> inv(perm.size());
            for (size_t d = 0; d < perm.size(); ++d) inv[perm[d]] = static_cast<int>(d);
            const Tensor<T>& g = nodes_[oi].grad;
            Tensor<T> gp(val(a).shape());
            permute_copy_(g, gp, inv);
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t k = 0; k < gp.numel(); ++k) ga[k] += gp[k];
        };
        return o;
    }

    Var concat(const std::vector<Var>& parts, int dim) {
        LIPSYNC_CHECK(!parts.empty(), ShapeError, "concat of nothing");
        const Shape first = val(parts[0]).shape();
        Shape out_shape = first;
        int total = 0;
        for (Var p : parts) {
            const Shape& s = val(p).shape();
            LIPSYNC_CHECK(static_cast<int>(s.size()) == static_cast<int>(first.size()), ShapeError, "concat rank mismatch");
            for (size_t d = 0; d < s.size(); ++d)
                if (static_cast<int>(d) != dim)
                    LIPSYNC_CHECK(s[d] == first[d], ShapeError, "concat dim mismatch");
            total += s[dim];
        }
        out_shape[dim] = total;
        Tensor<T> out(out_shape);

        const int64_t outer = prod_(out_shape, 0, dim);
        const int64_t inner = prod_(out_shape, dim + 1, static_cast<int>(out_shape.size()));
        int64_t off = 0;
        for (Var p : parts) {
            const Tensor<T>& tp = val(p);
            const int64_t rows = tp.shape()[dim];
            for (int64_t o = 0; o < outer; ++o)
                std::memcpy(out.data() + (o * total + off) * inner, tp.data() + o * rows * inner,
                            static_cast<size_t>(rows * inner) * sizeof(T));
            off += rows;
        }

        bool rg = false;
        for (Var p : parts) rg = rg || requires_(p);
        Var o = push_(std::move(out), rg, parts);
        int oi = o.i;
        std::vector<Var> ps = parts;
        nodes_[oi].back = [this, oi, ps, dim, outer, inner, total]() {
            const Tensor<T>& g = nodes_[oi].grad;
            int64_t off = 0;
            for (Var p : ps) {
                const int64_t rows = val(p).shape()[dim];
                if (requires_(p)) {
                    Tensor<T>& gp = grad_buf_(p);
                    for (int64_t o = 0; o < outer; ++o) {
                        const T* src = g.data() + (o * total + off) * inner;
                        T* dst = gp.data() + o * rows * inner;
                        for (int64_t k = 0; k < rows * inner; ++k) dst[k] += src[k];
                    }
                }
                off += rows;
            }
        };
        return o;
    }

    Var slice(Var a, int dim, int start, int len) {
        const Tensor<T>& ta = val(a);
        LIPSYNC_CHECK(dim >= 0 && dim < ta.ndim(), ShapeError, "slice dim out of range");
        LIPSYNC_CHECK(start >= 0 && len > 0 && start + len <= ta.dim(dim), BoundsError, "slice range");
        Shape out_shape = ta.shape();
        out_shape[dim] = len;
        Tensor<T> out(out_shape);
        const int64_t outer = prod_(ta.shape(), 0, dim);
        const int64_t inner = prod_(ta.shape(), dim + 1, ta.ndim());
        const int64_t rows = ta.dim(dim);
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + o * len * inner, ta.data() + (o * rows + start) * inner,
                        static_cast<size_t>(len * inner) * sizeof(T));
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, outer, inner, rows, start, len]() {
            if (!requires_(a)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t o2 = 0; o2 < outer; ++o2) {
                const T* src = g.data() + o2 * len * inner;
                T* dst = ga.data() + (o2 * rows + start) * inner;
                for (int64_t k = 0; k < len * inner; ++k) dst[k] += src[k];
            }
        };
        return o;
    }

    // ---- broadcast adds ----

    // x[N, C, ...] + b[C] broadcast over batch and trailing dims.
    Var add_bias(Var x, Var b) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(tx.ndim() >= 2, ShapeError, "add_bias needs rank >= 2");
        const int C = tx.dim(1);
        LIPSYNC_CHECK(tb.ndim() == 1 && tb.dim(0) == C, ShapeError, "bias size mismatch");
        const int64_t batch = tx.dim(0);
        const int64_t inner = tx.numel() / (batch * C);
        Tensor<T> out(tx.shape());
        for (int64_t n = 0; n < batch; ++n)
            for (int c = 0; c < C; ++c) {
                const T bc = tb[c];
                const T* src = tx.data() + (n * C + c) * inner;
                T* dst = out.data() + (n * C + c) * inner;
                for (int64_t k = 0; k < inner; ++k) dst[k] = src[k] + bc;
            }
        Var o = push_(std::move(out), requires_(x) || requires_(b), {x, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, b, batch, C, inner]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(x)) {
                Tensor<T>& gx = grad_buf_(x);
                for (int64_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                for (int64_t n = 0; n < batch; ++n)
                    for (int c = 0; c < C; ++c) {
                        const T* src = g.data() + (n * C + c) * inner;
                        T acc = T(0);
                        for (int64_t k = 0; k < inner; ++k) acc += src[k];
                        gb[c] += acc;
                    }
            }
        };
        return o;
    }

    // x[N, C, ...] + s[N, C] broadcast over trailing dims (per-sample bias,
    // used for timestep conditioning).
    Var add_sample_bias(Var x, Var s) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& ts = val(s);
        LIPSYNC_CHECK(tx.ndim() >= 2 && ts.ndim() == 2, ShapeError, "add_sample_bias ranks");
        const int64_t batch = tx.dim(0);
        const int C = tx.dim(1);
        LIPSYNC_CHECK(ts.dim(0) == batch && ts.dim(1) == C, ShapeError, "add_sample_bias size");
        const int64_t inner = tx.numel() / (batch * C);
        Tensor<T> out(tx.shape());
        for (int64_t n = 0; n < batch; ++n)
            for (int c = 0; c < C; ++c) {
                const T bc = ts[n * C + c];
                const T* src = tx.data() + (n * C + c) * inner;
                T* dst = out.data() + (n * C + c) * inner;
                for (int64_t k = 0; k < inner; ++k) dst[k] = src[k] + bc;
            }
        Var o = push_(std::move(out), requires_(x) || requires_(s), {x, s});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, s, batch, C, inner]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(x)) {
                Tensor<T>& gx = grad_buf_(x);
                for (int64_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
            }
            if (requires_(s)) {
                Tensor<T>& gs = grad_buf_(s);
                for (int64_t n = 0; n < batch; ++n)
                    for (int c = 0; c < C; ++c) {
                        const T* src = g.data() + (n * C + c) * inner;
                        T acc = T(0);
                        for (int64_t k = 0; k < inner; ++k) acc += src[k];
                        gs[n * C + c] += acc;
                    }
            }
        };
        return o;
    }

    // x[N, ...] + b[1, ...] broadcast over dim 0 (positional encodings).
    Var add_broadcast0(Var x, Var b) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(tx.ndim() == tb.ndim() && tb.dim(0) == 1, ShapeError, "add_broadcast0 ranks");
        for (int d = 1; d < tx.ndim(); ++d)
            LIPSYNC_CHECK(tx.dim(d) == tb.dim(d), ShapeError, "add_broadcast0 trailing dims");
        const int64_t N = tx.dim(0);
        const int64_t inner = tx.numel() / N;
        Tensor<T> out(tx.shape());
        for (int64_t n = 0; n < N; ++n) {
            const T* src = tx.data() + n * inner;
            T* dst = out.data() + n * inner;
            for (int64_t k = 0; k < inner; ++k) dst[k] = src[k] + tb[k];
        }
        Var o = push_(std::move(out), requires_(x) || requires_(b), {x, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, b, N, inner]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(x)) {
                Tensor<T>& gx = grad_buf_(x);
                for (int64_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = g.data() + n * inner;
                    for (int64_t k = 0; k < inner; ++k) gb[k] += src[k];
                }
            }
        };
        return o;
    }

    // ---- matmul ----

    // a stored [M,K] (or [K,M] if trans_a), b stored [K,N] (or [N,K] if trans_b).
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(ta.ndim() == 2 && tb.ndim() == 2, ShapeError, "matmul needs rank-2 tensors");
        const int M = trans_a ? ta.dim(1) : ta.dim(0);
        const int K = trans_a ? ta.dim(0) : ta.dim(1);
        const int Kb = trans_b ? tb.dim(1) : tb.dim(0);
        const int N = trans_b ? tb.dim(0) : tb.dim(1);
        LIPSYNC_CHECK(K == Kb, ShapeError, "matmul inner dim mismatch");
        Tensor<T> out({M, N});
        gemm(trans_a, trans_b, M, N, K, T(1), ta.data(), ta.dim(1), tb.data(), tb.dim(1), T(0), out.data(), N);
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b, trans_a, trans_b, M, N, K]() {
            const Tensor<T>& g = nodes_[oi].grad;  // [M,N]
            matmul_backward_(g.data(), val(a), val(b), trans_a, trans_b, M, N, K,
                             requires_(a) ? grad_buf_(a).data() : nullptr,
                             requires_(b) ? grad_buf_(b).data() : nullptr);
        };
        return o;
    }

    // a [B,M,K] (per-batch trans flags as in matmul), b [B,K,N].
    Var batch_matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(ta.ndim() == 3 && tb.ndim() == 3 && ta.dim(0) == tb.dim(0), ShapeError,
                      "batch_matmul needs matching rank-3 tensors");
        const int B = ta.dim(0);
        const int M = trans_a ? ta.dim(2) : ta.dim(1);
        const int K = trans_a ? ta.dim(1) : ta.dim(2);
        const int Kb = trans_b ? tb.dim(2) : tb.dim(1);
        const int N = trans_b ? tb.dim(1) : tb.dim(2);
        LIPSYNC_CHECK(K == Kb, ShapeError, "batch_matmul inner dim mismatch");
        Tensor<T> out({B, M, N});
        const int64_t sa = static_cast<int64_t>(ta.dim(1)) * ta.dim(2);
        const int64_t sb = static_cast<int64_t>(tb.dim(1)) * tb.dim(2);
        for (int i = 0; i < B; ++i)
            gemm(trans_a, trans_b, M, N, K, T(1), ta.data() + i * sa, ta.dim(2), tb.data() + i * sb, tb.dim(2),
                 T(0), out.data() + static_cast<int64_t>(i) * M * N, N);
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b, trans_a, trans_b, B, M, N, K, sa, sb]() {
            const Tensor<T>& g = nodes_[oi].grad;
            const Tensor<T>& ta = val(a);
            const Tensor<T>& tb = val(b);
            T* ga = requires_(a) ? grad_buf_(a).data() : nullptr;
            T* gb = requires_(b) ? grad_buf_(b).data() : nullptr;
            for (int i = 0; i < B; ++i) {
                matmul_backward_slice_(g.data() + static_cast<int64_t>(i) * M * N, ta.data() + i * sa, ta.dim(2),
                                       tb.data() + i * sb, tb.dim(2), trans_a, trans_b, M, N, K,
                                       ga ? ga + i * sa : nullptr, gb ? gb + i * sb : nullptr);
            }
        };
        return o;
    }

    // ---- conv / norm / pooling ----

    // x[B,Cin,H,W], w[Cout,Cin,kh,kw], bias[Cout] optional (invalid Var to skip).
    Var conv2d(Var x, Var w, Var bias, int stride, int pad) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& tw = val(w);
        LIPSYNC_CHECK(tx.ndim() == 4 && tw.ndim() == 4, ShapeError, "conv2d needs rank-4 tensors");
        LIPSYNC_CHECK(tx.dim(1) == tw.dim(1), ShapeError, "conv2d channel mismatch");
        const int B = tx.dim(0), Cin = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
        const int Cout = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
        const int OH = (H + 2 * pad - kh) / stride + 1;
        const int OW = (W + 2 * pad - kw) / stride + 1;
        LIPSYNC_CHECK(OH > 0 && OW > 0, ShapeError, "conv2d output would be empty");

        Tensor<T> out({B, Cout, OH, OW});
        const int ckk = Cin * kh * kw;
        std::vector<T> col(static_cast<size_t>(ckk) * OH * OW);
        for (int b = 0; b < B; ++b) {
            im2col_(tx.data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W, kh, kw, stride, pad, OH, OW,
                    col.data());
            gemm(false, false, Cout, OH * OW, ckk, T(1), tw.data(), ckk, col.data(), OH * OW, T(0),
                 out.data() + static_cast<int64_t>(b) * Cout * OH * OW, OH * OW);
        }
        if (bias.valid()) {
            const Tensor<T>& tb = val(bias);
            LIPSYNC_CHECK(tb.ndim() == 1 && tb.dim(0) == Cout, ShapeError, "conv bias size");
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < Cout; ++c) {
                    T* dst = out.data() + (static_cast<int64_t>(b) * Cout + c) * OH * OW;
                    const T bv = tb[c];
                    for (int k = 0; k < OH * OW; ++k) dst[k] += bv;
                }
        }

        bool rg = requires_(x) || requires_(w) || (bias.valid() && requires_(bias));
        std::vector<Var> parents{x, w};
        if (bias.valid()) parents.push_back(bias);
        Var o = push_(std::move(out), rg, parents);
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, w, bias, B, Cin, H, W, Cout, kh, kw, stride, pad, OH, OW, ckk]() {
            const Tensor<T>& g = nodes_[oi].grad;  // [B,Cout,OH,OW]
            const Tensor<T>& tx = val(x);
            const Tensor<T>& tw = val(w);
            const bool need_dx = requires_(x);
            const bool need_dw = requires_(w);
            const bool need_db = bias.valid() && requires_(bias);
            T* dx = need_dx ? grad_buf_(x).data() : nullptr;
            T* dw = need_dw ? grad_buf_(w).data() : nullptr;
            T* db = need_db ? grad_buf_(bias).data() : nullptr;

            std::vector<T> col(static_cast<size_t>(ckk) * OH * OW);
            std::vector<T> dcol(need_dx ? col.size() : 0);
            for (int b = 0; b < B; ++b) {
                const T* gb = g.data() + static_cast<int64_t>(b) * Cout * OH * OW;
                if (need_dw || need_dx) {
                    if (need_dw) {
                        // recompute the im2col patch matrix instead of caching it
                        im2col_(tx.data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W, kh, kw, stride,
                                pad, OH, OW, col.data());
                        gemm(false, true, Cout, ckk, OH * OW, T(1), gb, OH * OW, col.data(), OH * OW, T(1), dw,
                             ckk);
                    }
                    if (need_dx) {
                        gemm(true, false, ckk, OH * OW, Cout, T(1), tw.data(), ckk, gb, OH * OW, T(0),
                             dcol.data(), OH * OW);
                        col2im_(dcol.data(), Cin, H, W, kh, kw, stride, pad, OH, OW,
                                dx + static_cast<int64_t>(b) * Cin * H * W);
                    }
                }
                if (need_db)
                    for (int c = 0; c < Cout; ++c) {
                        const T* src = gb + static_cast<int64_t>(c) * OH * OW;
                        T acc = T(0);
                        for (int k = 0; k < OH * OW; ++k) acc += src[k];
                        db[c] += acc;
                    }
            }
        };
        return o;
    }

    // x[B,C,spatial...], gamma[C], beta[C]; statistics per (sample, group).
    Var group_norm(Var x, Var gamma, Var beta, int groups, T eps = T(1e-5)) {
        const Tensor<T>& tx = val(x);
        LIPSYNC_CHECK(tx.ndim() >= 2, ShapeError, "group_norm needs rank >= 2");
        const int B = tx.dim(0), C = tx.dim(1);
        LIPSYNC_CHECK(groups > 0 && C % groups == 0, ConfigError, "channels not divisible by groups");
        const int64_t S = tx.numel() / (static_cast<int64_t>(B) * C);
        const int cg = C / groups;
        const int64_t gsize = cg * S;

        Tensor<T> out(tx.shape());
        Tensor<T> xhat(tx.shape());
        Tensor<T> inv_std({B, groups});
        const Tensor<T>& tgm = val(gamma);
        const Tensor<T>& tbt = val(beta);
        LIPSYNC_CHECK(tgm.ndim() == 1 && tgm.dim(0) == C && tbt.ndim() == 1 && tbt.dim(0) == C, ShapeError,
                      "group_norm affine size");

        for (int b = 0; b < B; ++b)
            for (int g = 0; g < groups; ++g) {
                const T* src = tx.data() + (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * S;
                double mu = 0;
                for (int64_t k = 0; k < gsize; ++k) mu += static_cast<double>(src[k]);
                mu /= static_cast<double>(gsize);
                double var = 0;
                for (int64_t k = 0; k < gsize; ++k) {
                    const double d = static_cast<double>(src[k]) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(gsize);
                const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                inv_std[static_cast<int64_t>(b) * groups + g] = inv;
                T* xh = xhat.data() + (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * S;
                T* dst = out.data() + (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * S;
                for (int c = 0; c < cg; ++c) {
                    const T gm = tgm[g * cg + c];
                    const T bt = tbt[g * cg + c];
                    for (int64_t k = 0; k < S; ++k) {
                        const T xv = static_cast<T>((static_cast<double>(src[c * S + k]) - mu)) * inv;
                        xh[c * S + k] = xv;
                        dst[c * S + k] = gm * xv + bt;
                    }
                }
            }

        Var o = push_(std::move(out), requires_(x) || requires_(gamma) || requires_(beta), {x, gamma, beta});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, gamma, beta, B, C, S, groups, cg, gsize, xhat, inv_std]() {
            const Tensor<T>& g = nodes_[oi].grad;
            const Tensor<T>& tgm = val(gamma);
            if (requires_(gamma) || requires_(beta)) {
                T* dgm = requires_(gamma) ? grad_buf_(gamma).data() : nullptr;
                T* dbt = requires_(beta) ? grad_buf_(beta).data() : nullptr;
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        const T* gs = g.data() + (static_cast<int64_t>(b) * C + c) * S;
                        const T* xh = xhat.data() + (static_cast<int64_t>(b) * C + c) * S;
                        T acc_g = T(0), acc_b = T(0);
                        for (int64_t k = 0; k < S; ++k) {
                            acc_g += gs[k] * xh[k];
                            acc_b += gs[k];
                        }
                        if (dgm) dgm[c] += acc_g;
                        if (dbt) dbt[c] += acc_b;
                    }
            }
            if (requires_(x)) {
                Tensor<T>& gx = grad_buf_(x);
                for (int b = 0; b < B; ++b)
                    for (int gi = 0; gi < groups; ++gi) {
                        const int64_t base = (static_cast<int64_t>(b) * C + static_cast<int64_t>(gi) * cg) * S;
                        const T inv = inv_std[static_cast<int64_t>(b) * groups + gi];
                        // dxhat = dy * gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                        double m1 = 0, m2 = 0;
                        for (int c = 0; c < cg; ++c) {
                            const T gm = tgm[gi * cg + c];
                            const T* gs = g.data() + base + static_cast<int64_t>(c) * S;
                            const T* xh = xhat.data() + base + static_cast<int64_t>(c) * S;
                            for (int64_t k = 0; k < S; ++k) {
                                const double dxh = static_cast<double>(gs[k]) * static_cast<double>(gm);
                                m1 += dxh;
                                m2 += dxh * static_cast<double>(xh[k]);
                            }
                        }
                        m1 /= static_cast<double>(gsize);
                        m2 /= static_cast<double>(gsize);
                        for (int c = 0; c < cg; ++c) {
                            const T gm = tgm[gi * cg + c];
                            const T* gs = g.data() + base + static_cast<int64_t>(c) * S;
                            const T* xh = xhat.data() + base + static_cast<int64_t>(c) * S;
                            T* dst = gx.data() + base + static_cast<int64_t>(c) * S;
                            for (int64_t k = 0; k < S; ++k) {
                                const double dxh = static_cast<double>(gs[k]) * static_cast<double>(gm);
                                dst[k] += static_cast<T>(static_cast<double>(inv) *
                                                         (dxh - m1 - static_cast<double>(xh[k]) * m2));
                            }
                        }
                    }
            }
        };
        return o;
    }

    // softmax over the last dim, numerically stabilized.
    Var softmax_last(Var a) {
        const Tensor<T>& ta = val(a);
        const int L = ta.dim(ta.ndim() - 1);
        const int64_t rows = ta.numel() / L;
        Tensor<T> out(ta.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const T* src = ta.data() + r * L;
            T* dst = out.data() + r * L;
            T mx = src[0];
            for (int k = 1; k < L; ++k) mx = std::max(mx, src[k]);
            double denom = 0;
            for (int k = 0; k < L; ++k) {
                const double e = std::exp(static_cast<double>(src[k] - mx));
                dst[k] = static_cast<T>(e);
                denom += e;
            }
            const T inv = static_cast<T>(1.0 / denom);
            for (int k = 0; k < L; ++k) dst[k] *= inv;
        }
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, rows, L]() {
            if (!requires_(a)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            const Tensor<T>& y = nodes_[oi].val;
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t r = 0; r < rows; ++r) {
                const T* gs = g.data() + r * L;
                const T* ys = y.data() + r * L;
                T* dst = ga.data() + r * L;
                double dot = 0;
                for (int k = 0; k < L; ++k) dot += static_cast<double>(gs[k]) * static_cast<double>(ys[k]);
                for (int k = 0; k < L; ++k)
                    dst[k] += static_cast<T>(ys[k] * (gs[k] - static_cast<T>(dot)));
            }
        };
        return o;
    }

    // x[B,C,H,W] -> [B,C]
    Var global_avg_pool(Var x) {
        const Tensor<T>& tx = val(x);
        LIPSYNC_CHECK(tx.ndim() == 4, ShapeError, "global_avg_pool needs rank-4");
        const int B = tx.dim(0), C = tx.dim(1);
        const int64_t S = static_cast<int64_t>(tx.dim(2)) * tx.dim(3);
        Tensor<T> out({B, C});
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
            const T* src = tx.data() + bc * S;
            double acc = 0;
            for (int64_t k = 0; k < S; ++k) acc += static_cast<double>(src[k]);
            out[bc] = static_cast<T>(acc / static_cast<double>(S));
        }
        Var o = push_(std::move(out), requires_(x), {x});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, B, C, S]() {
            if (!requires_(x)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            Tensor<T>& gx = grad_buf_(x);
            const T inv = static_cast<T>(1.0 / static_cast<double>(S));
            for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                const T gv = g[bc] * inv;
                T* dst = gx.data() + bc * S;
                for (int64_t k = 0; k < S; ++k) dst[k] += gv;
            }
        };
        return o;
    }

    // nearest-neighbor 2x upsample, x[B,C,H,W] -> [B,C,2H,2W]
    Var upsample_nearest2x(Var x) {
        const Tensor<T>& tx = val(x);
        LIPSYNC_CHECK(tx.ndim() == 4, ShapeError, "upsample needs rank-4");
        const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
        Tensor<T> out({B, C, 2 * H, 2 * W});
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
            const T* src = tx.data() + bc * H * W;
            T* dst = out.data() + bc * 4 * H * W;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const T v = src[i * W + j];
                    dst[(2 * i) * 2 * W + 2 * j] = v;
                    dst[(2 * i) * 2 * W + 2 * j + 1] = v;
                    dst[(2 * i + 1) * 2 * W + 2 * j] = v;
                    dst[(2 * i + 1) * 2 * W + 2 * j + 1] = v;
                }
        }
        Var o = push_(std::move(out), requires_(x), {x});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, B, C, H, W]() {
            if (!requires_(x)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            Tensor<T>& gx = grad_buf_(x);
            for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                const T* src = g.data() + bc * 4 * H * W;
                T* dst = gx.data() + bc * H * W;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        dst[i * W + j] += src[(2 * i) * 2 * W + 2 * j] + src[(2 * i) * 2 * W + 2 * j + 1] +
                                          src[(2 * i + 1) * 2 * W + 2 * j] + src[(2 * i + 1) * 2 * W + 2 * j + 1];
            }
        };
        return o;
    }

    // ---- vector / loss helpers ----

    // rows of x[B,d] scaled to unit L2 norm; zero rows are a numeric error.
    Var l2_normalize_rows(Var x) {
        const Tensor<T>& tx = val(x);
        LIPSYNC_CHECK(tx.ndim() == 2, ShapeError, "l2_normalize_rows needs rank-2");
        const int B = tx.dim(0), d = tx.dim(1);
        Tensor<T> out(tx.shape());
        Tensor<T> norms({B});
        for (int b = 0; b < B; ++b) {
            const T* src = tx.data() + static_cast<int64_t>(b) * d;
            double acc = 0;
            for (int k = 0; k < d; ++k) acc += static_cast<double>(src[k]) * static_cast<double>(src[k]);
            const double norm = std::sqrt(acc);
            LIPSYNC_CHECK(norm > 0, NumericError, "zero-norm embedding");
            norms[b] = static_cast<T>(norm);
            T* dst = out.data() + static_cast<int64_t>(b) * d;
            const T inv = static_cast<T>(1.0 / norm);
            for (int k = 0; k < d; ++k) dst[k] = src[k] * inv;
        }
        Var o = push_(std::move(out), requires_(x), {x});
        int oi = o.i;
        nodes_[oi].back = [this, oi, x, B, d, norms]() {
            if (!requires_(x)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            const Tensor<T>& y = nodes_[oi].val;
            Tensor<T>& gx = grad_buf_(x);
            for (int b = 0; b < B; ++b) {
                const T* gs = g.data() + static_cast<int64_t>(b) * d;
                const T* ys = y.data() + static_cast<int64_t>(b) * d;
                T* dst = gx.data() + static_cast<int64_t>(b) * d;
                double dot = 0;
                for (int k = 0; k < d; ++k) dot += static_cast<double>(gs[k]) * static_cast<double>(ys[k]);
                const T inv = T(1) / norms[b];
                for (int k = 0; k < d; ++k)
                    dst[k] += static_cast<T>((gs[k] - static_cast<T>(dot) * ys[k]) * inv);
            }
        };
        return o;
    }

    // per-row dot product of a[B,d] and b[B,d] -> [B]
    Var rows_dot(Var a, Var b) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(ta.same_shape(tb) && ta.ndim() == 2, ShapeError, "rows_dot shape mismatch");
        const int B = ta.dim(0), d = ta.dim(1);
        Tensor<T> out({B});
        for (int b2 = 0; b2 < B; ++b2) {
            double acc = 0;
            const T* pa = ta.data() + static_cast<int64_t>(b2) * d;
            const T* pb = tb.data() + static_cast<int64_t>(b2) * d;
            for (int k = 0; k < d; ++k) acc += static_cast<double>(pa[k]) * static_cast<double>(pb[k]);
            out[b2] = static_cast<T>(acc);
        }
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b, B, d]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(a)) {
                Tensor<T>& ga = grad_buf_(a);
                const Tensor<T>& tb = val(b);
                for (int b2 = 0; b2 < B; ++b2)
                    for (int k = 0; k < d; ++k) ga[static_cast<int64_t>(b2) * d + k] += g[b2] * tb[static_cast<int64_t>(b2) * d + k];
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                const Tensor<T>& ta = val(a);
                for (int b2 = 0; b2 < B; ++b2)
                    for (int k = 0; k < d; ++k) gb[static_cast<int64_t>(b2) * d + k] += g[b2] * ta[static_cast<int64_t>(b2) * d + k];
            }
        };
        return o;
    }

    // mean squared error over all elements
    Var mse(Var a, Var b) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        LIPSYNC_CHECK(ta.same_shape(tb), ShapeError, "mse shape mismatch");
        const int64_t n = ta.numel();
        double acc = 0;
        for (int64_t k = 0; k < n; ++k) {
            const double d = static_cast<double>(ta[k]) - static_cast<double>(tb[k]);
            acc += d * d;
        }
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b, n]() {
            const T g = nodes_[oi].grad[0];
            const Tensor<T>& ta = val(a);
            const Tensor<T>& tb = val(b);
            const T c = g * T(2) / static_cast<T>(n);
            if (requires_(a)) {
                Tensor<T>& ga = grad_buf_(a);
                for (int64_t k = 0; k < n; ++k) ga[k] += c * (ta[k] - tb[k]);
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                for (int64_t k = 0; k < n; ++k) gb[k] += c * (tb[k] - ta[k]);
            }
        };
        return o;
    }

    // mean binary cross-entropy of probabilities q[B] against labels[B].
    // q must already lie strictly inside (0,1); callers clamp.
    Var bce_mean(Var q, const Tensor<T>& labels) {
        const Tensor<T>& tq = val(q);
        LIPSYNC_CHECK(tq.ndim() == 1 && labels.ndim() == 1 && tq.dim(0) == labels.dim(0), ShapeError,
                      "bce_mean shape mismatch");
        const int B = tq.dim(0);
        LIPSYNC_CHECK(B > 0, ShapeError, "bce_mean of empty batch");
        double acc = 0;
        for (int b = 0; b < B; ++b) {
            const double qv = static_cast<double>(tq[b]);
            LIPSYNC_CHECK(qv > 0.0 && qv < 1.0, NumericError, "probability outside (0,1) in bce");
            const double y = static_cast<double>(labels[b]);
            acc += -(y * std::log(qv) + (1.0 - y) * std::log(1.0 - qv));
        }
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / B));
        Var o = push_(std::move(out), requires_(q), {q});
        int oi = o.i;
        Tensor<T> labels_copy = labels;
        nodes_[oi].back = [this, oi, q, labels_copy, B]() {
            if (!requires_(q)) return;
            const T g = nodes_[oi].grad[0];
            const Tensor<T>& tq = val(q);
            Tensor<T>& gq = grad_buf_(q);
            for (int b = 0; b < B; ++b) {
                const T y = labels_copy[b];
                gq[b] += g * (-(y / tq[b]) + (T(1) - y) / (T(1) - tq[b])) / static_cast<T>(B);
            }
        };
        return o;
    }

    // ---- backward ----

    void backward(Var loss) {
        Node& ln = nodes_[check_(loss)];
        LIPSYNC_CHECK(ln.val.numel() == 1, ShapeError, "backward needs a scalar loss");
        LIPSYNC_CHECK(ln.requires_grad, ConfigError, "loss does not depend on any trainable input");
        grad_buf_(loss)[0] = T(1);
        for (int i = loss.i; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.grad.defined() || !n.back) continue;
            n.back();
        }
    }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void()> back;
    };

    int check_(Var v) const {
        LIPSYNC_CHECK(v.i >= 0 && v.i < static_cast<int>(nodes_.size()), BoundsError, "invalid Var");
        return v.i;
    }

    bool requires_(Var v) const { return nodes_[check_(v)].requires_grad; }

    Tensor<T>& grad_buf_(Var v) {
        Node& n = nodes_[check_(v)];
        if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.val.shape());
        return n.grad;
    }

    Var push_(Tensor<T> t, bool requires_grad, const std::vector<Var>& /*parents*/) {
        nodes_.push_back(Node{std::move(t), {}, requires_grad, nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <class FwdF, class GradF>
    Var unary_(Var a, FwdF f, GradF df) {
        const Tensor<T>& ta = val(a);
        Tensor<T> out(ta.shape());
        for (int64_t k = 0; k < out.numel(); ++k) out[k] = f(ta[k]);
        return unary_backward_(std::move(out), a, df);
    }

    template <class GradF>
    Var unary_backward_(Tensor<T> out, Var a, GradF df) {
        Var o = push_(std::move(out), requires_(a), {a});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, df]() {
            if (!requires_(a)) return;
            const Tensor<T>& g = nodes_[oi].grad;
            const Tensor<T>& y = nodes_[oi].val;
            const Tensor<T>& ta = val(a);
            Tensor<T>& ga = grad_buf_(a);
            for (int64_t k = 0; k < g.numel(); ++k) ga[k] += g[k] * df(ta[k], y[k]);
        };
        return o;
    }

    template <class F>
    Var binary_(Var a, Var b, F f, T da, T db) {
        const Tensor<T>&ta = val(a), &tb = val(b);
        LIPSYNC_CHECK(ta.same_shape(tb), ShapeError, "elementwise shape mismatch");
        Tensor<T> out(ta.shape());
        for (int64_t k = 0; k < out.numel(); ++k) out[k] = f(ta[k], tb[k]);
        Var o = push_(std::move(out), requires_(a) || requires_(b), {a, b});
        int oi = o.i;
        nodes_[oi].back = [this, oi, a, b, da, db]() {
            const Tensor<T>& g = nodes_[oi].grad;
            if (requires_(a)) {
                Tensor<T>& ga = grad_buf_(a);
                for (int64_t k = 0; k < g.numel(); ++k) ga[k] += g[k] * da;
            }
            if (requires_(b)) {
                Tensor<T>& gb = grad_buf_(b);
                for (int64_t k = 0; k < g.numel(); ++k) gb[k] += g[k] * db;
            }
        };
        return o;
    }

    static int64_t prod_(const Shape& s, int from, int to) {
        int64_t n = 1;
        for (int d = from; d < to; ++d) n *= s[d];
        return n;
    }

    static void permute_copy_(const Tensor<T>& in, Tensor<T>& out, const std::vector<int>& perm) {
        const int nd = in.ndim();
        std::vector<int64_t> in_strides(nd, 1);
        for (int d = nd - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * in.dim(d + 1);
        std::vector<int64_t> walk(nd);  // stride in input for each output dim
        for (int d = 0; d < nd; ++d) walk[d] = in_strides[perm[d]];
        std::vector<int> idx(nd, 0);
        const int64_t n = in.numel();
        int64_t src = 0;
        for (int64_t k = 0; k < n; ++k) {
            out[k] = in[src];
            for (int d = nd - 1; d >= 0; --d) {
                idx[d]++;
                src += walk[d];
                if (idx[d] < out.dim(d)) break;
                src -= walk[d] * out.dim(d);
                idx[d] = 0;
            }
        }
    }

    // dC[M,N]; stored A, B with leading dims; writes into dA/dB if non-null.
    static void matmul_backward_slice_(const T* dc, const T* a, int lda, const T* b, int ldb, bool trans_a,
                                       bool trans_b, int M, int N, int K, T* da, T* db) {
        if (da) {
            if (!trans_a) {
                // dA[M,K] = dC * op(B)^T
                gemm(false, !trans_b, M, K, N, T(1), dc, N, b, ldb, T(1), da, lda);
            } else {
                // stored A is [K,M]: dA_stored[K,M] = op(B) * dC^T
                gemm(trans_b, true, K, M, N, T(1), b, ldb, dc, N, T(1), da, lda);
            }
        }
        if (db) {
            if (!trans_b) {
                // dB[K,N] = op(A)^T * dC
                gemm(!trans_a, false, K, N, M, T(1), a, lda, dc, N, T(1), db, ldb);
            } else {
                // stored B is [N,K]: dB_stored[N,K] = dC^T * op(A)
                gemm(true, trans_a, N, K, M, T(1), dc, N, a, lda, T(1), db, ldb);
            }
        }
    }

    void matmul_backward_(const T* dc, const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b,
                          int M, int N, int K, T* da, T* db) {
        matmul_backward_slice_(dc, a.data(), a.dim(1), b.data(), b.dim(1), trans_a, trans_b, M, N, K, da, db);
    }

    static void im2col_(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW,
                        T* col) {
        // col[(c*kh+i)*kw+j][oh*OW+ow]
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j) {
                    T* dst = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * OH * OW;
                    for (int oh = 0; oh < OH; ++oh) {
                        const int ih = oh * stride - pad + i;
                        if (ih < 0 || ih >= H) {
                            for (int ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = T(0);
                            continue;
                        }
                        const T* src = x + (static_cast<int64_t>(c) * H + ih) * W;
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride - pad + j;
                            dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                        }
                    }
                }
    }

    static void col2im_(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW,
                        T* x) {
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j) {
                    const T* src = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * OH * OW;
                    for (int oh = 0; oh < OH; ++oh) {
                        const int ih = oh * stride - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        T* dst = x + (static_cast<int64_t>(c) * H + ih) * W;
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride - pad + j;
                            if (iw >= 0 && iw < W) dst[iw] += src[oh * OW + ow];
                        }
                    }
                }
    }

    std::vector<Node> nodes_;
};

}  // namespace lipsync
