#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "coconv/common.hpp"

namespace coconv {

// Dense 4-D shape in (batch, channels, height, width) order.
struct Shape4 {
    index_t n = 0;
    index_t c = 0;
    index_t h = 0;
    index_t w = 0;

    index_t count() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense 4-D tensor, row-major (N,C,H,W). The scalar type doubles as the
// precision tag: float for training, double for gradient checks.
// Operations never mutate their inputs; they return fresh tensors.
template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape) {
        if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
            throw ShapeError("tensor dimensions must all be >= 1, got " + shape.str());
        }
        data_.assign(static_cast<std::size_t>(shape.count()), fill);
    }

    static Tensor zeros(Shape4 s) { return Tensor(s, T(0)); }
    static Tensor ones(Shape4 s) { return Tensor(s, T(1)); }
    static Tensor full(Shape4 s, T v) { return Tensor(s, v); }

    // Fills with 0,1,2,... in memory order.
    static Tensor arange(Shape4 s) {
        Tensor t(s);
        for (index_t i = 0; i < t.size(); ++i) t.data_[static_cast<std::size_t>(i)] = static_cast<T>(i);
        return t;
    }

    // Seed fully determines the contents.
    static Tensor uniform(Shape4 s, std::uint64_t seed, T lo = T(0), T hi = T(1)) {
        Tensor t(s);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<T> dist(lo, hi);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    static Tensor normal(Shape4 s, std::uint64_t seed, T mean = T(0), T stddev = T(1)) {
        Tensor t(s);
        std::mt19937_64 rng(seed);
        std::normal_distribution<T> dist(mean, stddev);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    const Shape4& shape() const { return shape_; }
    index_t size() const { return static_cast<index_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    index_t offset(index_t n, index_t c, index_t h, index_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T& operator()(index_t n, index_t c, index_t h, index_t w) {
        return data_[static_cast<std::size_t>(offset(n, c, h, w))];
    }
    T operator()(index_t n, index_t c, index_t h, index_t w) const {
        return data_[static_cast<std::size_t>(offset(n, c, h, w))];
    }

    T& at(index_t n, index_t c, index_t h, index_t w) {
        check_index(n, c, h, w);
        return (*this)(n, c, h, w);
    }
    T at(index_t n, index_t c, index_t h, index_t w) const {
        check_index(n, c, h, w);
        return (*this)(n, c, h, w);
    }

    // Reinterprets the element buffer under a new shape with equal count.
    Tensor reshaped(Shape4 s) const {
        if (s.count() != shape_.count()) {
            throw ShapeError("reshape " + shape_.str() + " -> " + s.str() + " changes element count");
        }
        Tensor out(s);
        out.data_ = data_;
        return out;
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

  private:
    void check_index(index_t n, index_t c, index_t h, index_t w) const {
        if (n < 0 || n >= shape_.n || c < 0 || c >= shape_.c || h < 0 || h >= shape_.h ||
            w < 0 || w >= shape_.w) {
            throw ShapeError("index out of range for tensor " + shape_.str());
        }
    }

    Shape4 shape_;
    std::vector<T> data_;
};

// Stacks parts along the channel axis; part i occupies a contiguous channel
// block in list order. All parts must agree on batch and spatial dims.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    const Shape4 ref = parts.front().shape();
    index_t channels = 0;
    for (const auto& p : parts) {
        const Shape4 s = p.shape();
        if (s.n != ref.n || s.h != ref.h || s.w != ref.w) {
            throw ShapeError("concat_channels: part " + s.str() + " does not match " + ref.str());
        }
        channels += s.c;
    }
    Tensor<T> out(Shape4{ref.n, channels, ref.h, ref.w});
    const index_t plane = ref.h * ref.w;
    for (index_t n = 0; n < ref.n; ++n) {
        index_t c_off = 0;
        for (const auto& p : parts) {
            const index_t pc = p.shape().c;
            const T* src = p.data() + n * pc * plane;
            T* dst = out.data() + (n * channels + c_off) * plane;
            std::copy(src, src + pc * plane, dst);
            c_off += pc;
        }
    }
    return out;
}

// Inverse of concat_channels for the given channel block sizes.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& t, const std::vector<index_t>& sizes) {
    index_t total = 0;
    for (index_t s : sizes) {
        if (s < 1) throw ShapeError("split_channels: block size must be >= 1");
        total += s;
    }
    if (total != t.shape().c) {
        throw ShapeError("split_channels: blocks sum to " + std::to_string(total) +
                         ", tensor has " + std::to_string(t.shape().c) + " channels");
    }
    const Shape4 s = t.shape();
    const index_t plane = s.h * s.w;
    std::vector<Tensor<T>> parts;
    parts.reserve(sizes.size());
    index_t c_off = 0;
    for (index_t pc : sizes) {
        Tensor<T> part(Shape4{s.n, pc, s.h, s.w});
        for (index_t n = 0; n < s.n; ++n) {
            const T* src = t.data() + (n * s.c + c_off) * plane;
            std::copy(src, src + pc * plane, part.data() + n * pc * plane);
        }
        parts.push_back(std::move(part));
        c_off += pc;
    }
    return parts;
}

}  // namespace coconv
