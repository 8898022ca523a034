#pragma once

#include <string>
#include <vector>

#include "coconv/conv2d.hpp"
#include "coconv/geometry.hpp"
#include "coconv/tensor.hpp"

namespace coconv {

// One dilation level of a multi-level convolution.
struct CoConvLevel {
    index_t dilation = 1;
    index_t out_channels = 0;
};

// Multi-level dilated convolution over a shared input. Level i applies
// kernels with dilation d_i and contributes a contiguous block of
// out_channels to the concatenated output; the total output width is the
// sum of the per-level blocks.
struct CoConvSpec {
    index_t in_channels = 0;
    index_t kernel_h = 0;
    index_t kernel_w = 0;
    index_t stride = 1;
    std::vector<CoConvLevel> levels;
    std::vector<index_t> paddings;  // one per level
    bool has_bias = false;

    index_t out_channels() const {
        index_t total = 0;
        for (const auto& l : levels) total += l.out_channels;
        return total;
    }

    std::vector<index_t> level_sizes() const {
        std::vector<index_t> sizes;
        sizes.reserve(levels.size());
        for (const auto& l : levels) sizes.push_back(l.out_channels);
        return sizes;
    }

    ConvGeometry level_geometry(std::size_t i) const {
        return ConvGeometry{in_channels, levels[i].out_channels, kernel_h,   kernel_w,
                            stride,      paddings[i],            levels[i].dilation, has_bias};
    }

    // All levels must yield the same output size on every valid input;
    // with symmetric padding that means 2*p_i - d_i*(K-1) is level-invariant.
    void validate() const {
        if (in_channels < 1) throw ConfigError("coconv spec: in_channels must be >= 1");
        if (kernel_h < 1 || kernel_w < 1) throw ConfigError("coconv spec: kernel dims must be >= 1");
        if (stride < 1) throw ConfigError("coconv spec: stride must be >= 1");
        if (levels.empty()) throw ConfigError("coconv spec: at least one level required");
        if (paddings.size() != levels.size())
            throw ConfigError("coconv spec: need one padding per level");
        // Non-decreasing rather than strictly increasing: repeated dilations
        // are the degenerate configuration equivalent to one standard conv.
        index_t prev_d = 0;
        for (const auto& l : levels) {
            if (l.out_channels < 1) throw ConfigError("coconv spec: level out_channels must be >= 1");
            if (l.dilation < 1) throw ConfigError("coconv spec: dilation must be >= 1");
            if (l.dilation < prev_d)
                throw ConfigError("coconv spec: dilations must be non-decreasing");
            prev_d = l.dilation;
        }
        for (index_t p : paddings) {
            if (p < 0) throw ConfigError("coconv spec: padding must be >= 0");
        }
        const index_t slack_h = 2 * paddings[0] - levels[0].dilation * (kernel_h - 1);
        const index_t slack_w = 2 * paddings[0] - levels[0].dilation * (kernel_w - 1);
        for (std::size_t i = 1; i < levels.size(); ++i) {
            if (2 * paddings[i] - levels[i].dilation * (kernel_h - 1) != slack_h ||
                2 * paddings[i] - levels[i].dilation * (kernel_w - 1) != slack_w) {
                throw ConfigError("coconv spec: level " + std::to_string(i) +
                                  " produces a different output size than level 0");
            }
        }
    }

    // Convenience constructor with p_i = d_i*(K-1)/2, the padding that makes
    // every level produce the same map size at any stride (odd kernels).
    static CoConvSpec same_padded(index_t in_channels, index_t kernel, index_t stride,
                                  std::vector<CoConvLevel> levels, bool has_bias = false) {
        CoConvSpec spec;
        spec.in_channels = in_channels;
        spec.kernel_h = kernel;
        spec.kernel_w = kernel;
        spec.stride = stride;
        spec.levels = std::move(levels);
        spec.paddings.reserve(spec.levels.size());
        for (const auto& l : spec.levels) spec.paddings.push_back(same_padding(kernel, l.dilation));
        spec.has_bias = has_bias;
        spec.validate();
        return spec;
    }
};

namespace detail {

template <typename T>
void check_coconv_args(const Tensor<T>& input, const std::vector<Tensor<T>>& level_weights,
                       const std::vector<T>* bias, const CoConvSpec& spec) {
    spec.validate();
    if (input.shape().c != spec.in_channels) {
        throw ShapeError("coconv input has " + std::to_string(input.shape().c) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    }
    if (level_weights.size() != spec.levels.size()) {
        throw ShapeError("coconv: expected " + std::to_string(spec.levels.size()) +
                         " level weight tensors, got " + std::to_string(level_weights.size()));
    }
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const Shape4 ws = level_weights[i].shape();
        if (ws.n != spec.levels[i].out_channels || ws.c != spec.in_channels ||
            ws.h != spec.kernel_h || ws.w != spec.kernel_w) {
            throw ShapeError("coconv level " + std::to_string(i) + " weights " + ws.str() +
                             " do not match spec");
        }
    }
    if (spec.has_bias &&
        (bias == nullptr || static_cast<index_t>(bias->size()) != spec.out_channels())) {
        throw ShapeError("coconv bias length must equal total out_channels");
    }
}

template <typename T>
std::vector<T> bias_slice(const std::vector<T>* bias, index_t offset, index_t count) {
    return std::vector<T>(bias->begin() + offset, bias->begin() + offset + count);
}

}  // namespace detail

// Runs every level over the shared input and concatenates the level outputs
// in spec order. Levels are independent of each other.
template <typename T>
Tensor<T> coconv_forward(const Tensor<T>& input, const std::vector<Tensor<T>>& level_weights,
                         std::type_identity_t<const std::vector<T>*> bias, const CoConvSpec& spec) {
    detail::check_coconv_args(input, level_weights, bias, spec);
    std::vector<Tensor<T>> parts;
    parts.reserve(spec.levels.size());
    index_t bias_off = 0;
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const ConvGeometry geom = spec.level_geometry(i);
        if (spec.has_bias) {
            const std::vector<T> slice = detail::bias_slice(bias, bias_off, geom.out_channels);
            parts.push_back(conv2d_forward(input, level_weights[i], &slice, geom));
        } else {
            parts.push_back(conv2d_forward(input, level_weights[i], nullptr, geom));
        }
        bias_off += geom.out_channels;
    }
    return concat_channels(parts);
}

template <typename T>
struct CoConvGrads {
    Tensor<T> input;
    std::vector<Tensor<T>> level_weights;
    std::vector<T> bias;  // empty unless spec.has_bias
};

template <typename T>
CoConvGrads<T> coconv_backward(const Tensor<T>& input, const std::vector<Tensor<T>>& level_weights,
                               const CoConvSpec& spec, const Tensor<T>& grad_out) {
    detail::check_coconv_args<T>(input, level_weights, nullptr,
                                 [&] {
                                     CoConvSpec s = spec;
                                     s.has_bias = false;
                                     return s;
                                 }());
    if (grad_out.shape().c != spec.out_channels()) {
        throw ShapeError("coconv grad_out has " + std::to_string(grad_out.shape().c) +
                         " channels, spec produces " + std::to_string(spec.out_channels()));
    }
    const std::vector<Tensor<T>> grad_parts = split_channels(grad_out, spec.level_sizes());

    CoConvGrads<T> grads;
    grads.input = Tensor<T>::zeros(input.shape());
    grads.level_weights.reserve(spec.levels.size());
    if (spec.has_bias) grads.bias.reserve(static_cast<std::size_t>(spec.out_channels()));
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const ConvGeometry geom = spec.level_geometry(i);
        Conv2dGrads<T> lg = conv2d_backward(input, level_weights[i], geom, grad_parts[i]);
        T* acc = grads.input.data();
        const T* src = lg.input.data();
        for (index_t p = 0; p < grads.input.size(); ++p) acc[p] += src[p];
        grads.level_weights.push_back(std::move(lg.weights));
        if (spec.has_bias) grads.bias.insert(grads.bias.end(), lg.bias.begin(), lg.bias.end());
    }
    return grads;
}

}  // namespace coconv
