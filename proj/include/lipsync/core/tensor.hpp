#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/rng.hpp"

namespace lipsync {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. The buffer is shared, so copies are shallow;
// ops always allocate fresh buffers for their results.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        for (int d : shape_) LIPSYNC_CHECK(d > 0, ShapeError, "nonpositive dim in " + shape_str(shape_));
        buf_ = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        LIPSYNC_CHECK(static_cast<int64_t>(values.size()) == shape_numel(shape_), ShapeError,
                      "value count does not match " + shape_str(shape_));
        buf_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.begin(), t.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(std::move(shape));
        for (auto& x : t) x = static_cast<T>(rng.normal()) * stddev + mean;
        return t;
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return buf_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }
    T* begin() { return data(); }
    T* end() { return data() + numel(); }
    const T* begin() const { return data(); }
    const T* end() const { return data() + numel(); }

    T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int> idx) { return (*buf_)[static_cast<size_t>(flat_(idx))]; }
    const T& at(std::initializer_list<int> idx) const { return (*buf_)[static_cast<size_t>(flat_(idx))]; }

    // Shares the buffer; only the shape changes.
    Tensor reshaped(Shape shape) const {
        LIPSYNC_CHECK(shape_numel(shape) == numel(), ShapeError,
                      "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.buf_ = buf_;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = std::make_shared<std::vector<T>>(*buf_);
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t{shape_};
        for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>((*this)[i]);
        return t;
    }

    void fill(T value) { std::fill(begin(), end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const T& x : *this)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    T sum() const {
        T acc = T(0);
        for (const T& x : *this) acc += x;
        return acc;
    }

    double mean() const { return numel() ? static_cast<double>(sum()) / static_cast<double>(numel()) : 0.0; }

    T max_abs() const {
        T m = T(0);
        for (const T& x : *this) m = std::max(m, static_cast<T>(std::abs(static_cast<double>(x))));
        return m;
    }

    double norm2() const {
        double acc = 0;
        for (const T& x : *this) acc += static_cast<double>(x) * static_cast<double>(x);
        return std::sqrt(acc);
    }

private:
    int64_t flat_(std::initializer_list<int> idx) const {
        LIPSYNC_CHECK(idx.size() == shape_.size(), ShapeError, "index rank mismatch");
        int64_t off = 0;
        auto it = idx.begin();
        for (size_t d = 0; d < shape_.size(); ++d, ++it) {
            LIPSYNC_CHECK(*it >= 0 && *it < shape_[d], BoundsError, "index out of range");
            off = off * shape_[d] + *it;
        }
        return off;
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> buf_;

    template <class U>
    friend class Tensor;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace lipsync
