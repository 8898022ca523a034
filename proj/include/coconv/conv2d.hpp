#pragma once

#include <type_traits>
#include <vector>

#include "coconv/geometry.hpp"
#include "coconv/tensor.hpp"

namespace coconv {

namespace detail {

// Unrolls dilated kernel taps of one image into a (C*Kh*Kw) x (Hout*Wout)
// patch matrix. Rows are ordered (c, i, j); out-of-bounds taps become zero.
template <typename T>
void im2col(const T* img, index_t channels, index_t in_h, index_t in_w, const ConvGeometry& g,
            index_t out_h, index_t out_w, T* col) {
    const index_t cols = out_h * out_w;
    for (index_t c = 0; c < channels; ++c) {
        for (index_t i = 0; i < g.kernel_h; ++i) {
            for (index_t j = 0; j < g.kernel_w; ++j) {
                T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * cols;
                for (index_t oh = 0; oh < out_h; ++oh) {
                    const index_t y = oh * g.stride - g.padding + i * g.dilation;
                    if (y < 0 || y >= in_h) {
                        for (index_t ow = 0; ow < out_w; ++ow) row[oh * out_w + ow] = T(0);
                        continue;
                    }
                    const T* src = img + (c * in_h + y) * in_w;
                    for (index_t ow = 0; ow < out_w; ++ow) {
                        const index_t x = ow * g.stride - g.padding + j * g.dilation;
                        row[oh * out_w + ow] = (x >= 0 && x < in_w) ? src[x] : T(0);
                    }
                }
            }
        }
    }
}

// Scatters a patch matrix back into an image, accumulating overlaps.
template <typename T>
void col2im_add(const T* col, index_t channels, index_t in_h, index_t in_w, const ConvGeometry& g,
                index_t out_h, index_t out_w, T* img) {
    const index_t cols = out_h * out_w;
    for (index_t c = 0; c < channels; ++c) {
        for (index_t i = 0; i < g.kernel_h; ++i) {
            for (index_t j = 0; j < g.kernel_w; ++j) {
                const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * cols;
                for (index_t oh = 0; oh < out_h; ++oh) {
                    const index_t y = oh * g.stride - g.padding + i * g.dilation;
                    if (y < 0 || y >= in_h) continue;
                    T* dst = img + (c * in_h + y) * in_w;
                    for (index_t ow = 0; ow < out_w; ++ow) {
                        const index_t x = ow * g.stride - g.padding + j * g.dilation;
                        if (x >= 0 && x < in_w) dst[x] += row[oh * out_w + ow];
                    }
                }
            }
        }
    }
}

// row-major C(MxN) += A(MxK) * B(KxN); the k-inner order fixes the
// accumulation order per output element, so results are reproducible.
template <typename T>
void gemm_accumulate(index_t m_dim, index_t k_dim, index_t n_dim, const T* a, const T* b, T* c) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (index_t m = 0; m < m_dim; ++m) {
        T* out_row = c + m * n_dim;
        const T* a_row = a + m * k_dim;
        for (index_t k = 0; k < k_dim; ++k) {
            const T ak = a_row[k];
            if (ak == T(0)) continue;
            const T* b_row = b + k * n_dim;
            for (index_t n = 0; n < n_dim; ++n) out_row[n] += ak * b_row[n];
        }
    }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weights, const std::vector<T>* bias,
                     const ConvGeometry& g) {
    g.validate();
    if (input.shape().c != g.in_channels) {
        throw ShapeError("conv input has " + std::to_string(input.shape().c) +
                         " channels, geometry expects " + std::to_string(g.in_channels));
    }
    const Shape4 ws = weights.shape();
    if (ws.n != g.out_channels || ws.c != g.in_channels || ws.h != g.kernel_h || ws.w != g.kernel_w) {
        throw ShapeError("conv weights " + ws.str() + " do not match geometry");
    }
    if (g.has_bias) {
        if (bias == nullptr || static_cast<index_t>(bias->size()) != g.out_channels)
            throw ShapeError("conv bias length must equal out_channels");
    }
}

}  // namespace detail

// Dilated cross-correlation. Output element (n,o,oh,ow) sums
// w[o,c,i,j] * x[n,c, oh*s-p+i*d, ow*s-p+j*d] over the kernel footprint,
// reading zero outside bounds, plus the per-channel bias when present.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         std::type_identity_t<const std::vector<T>*> bias,
                         const ConvGeometry& g) {
    detail::check_conv_args(input, weights, bias, g);
    const Shape4 in = input.shape();
    const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, g);
    Tensor<T> result(Shape4{in.n, g.out_channels, out.h, out.w});

    const index_t k_dim = g.in_channels * g.kernel_h * g.kernel_w;
    const index_t n_dim = out.h * out.w;
    std::vector<T> col(static_cast<std::size_t>(k_dim * n_dim));
    for (index_t n = 0; n < in.n; ++n) {
        const T* img = input.data() + n * in.c * in.h * in.w;
        detail::im2col(img, in.c, in.h, in.w, g, out.h, out.w, col.data());
        T* dst = result.data() + n * g.out_channels * n_dim;
        detail::gemm_accumulate(g.out_channels, k_dim, n_dim, weights.data(), col.data(), dst);
        if (g.has_bias) {
            for (index_t o = 0; o < g.out_channels; ++o) {
                const T b = (*bias)[static_cast<std::size_t>(o)];
                T* row = dst + o * n_dim;
                for (index_t p = 0; p < n_dim; ++p) row[p] += b;
            }
        }
    }
    return result;
}

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;  // empty unless the geometry has a bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const ConvGeometry& g, const Tensor<T>& grad_out) {
    detail::check_conv_args<T>(input, weights, nullptr, ConvGeometry{g.in_channels, g.out_channels,
                                                                     g.kernel_h, g.kernel_w, g.stride,
                                                                     g.padding, g.dilation, false});
    const Shape4 in = input.shape();
    const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, g);
    const Shape4 expected{in.n, g.out_channels, out.h, out.w};
    if (!(grad_out.shape() == expected)) {
        throw ShapeError("grad_out " + grad_out.shape().str() + " does not match conv output " +
                         expected.str());
    }

    Conv2dGrads<T> grads;
    grads.input = Tensor<T>::zeros(in);
    grads.weights = Tensor<T>::zeros(weights.shape());
    if (g.has_bias) grads.bias.assign(static_cast<std::size_t>(g.out_channels), T(0));

    const index_t k_dim = g.in_channels * g.kernel_h * g.kernel_w;
    const index_t n_dim = out.h * out.w;
    std::vector<T> col(static_cast<std::size_t>(k_dim * n_dim));
    std::vector<T> gcol(static_cast<std::size_t>(k_dim * n_dim));
    for (index_t n = 0; n < in.n; ++n) {
        const T* img = input.data() + n * in.c * in.h * in.w;
        const T* gout = grad_out.data() + n * g.out_channels * n_dim;
        detail::im2col(img, in.c, in.h, in.w, g, out.h, out.w, col.data());

        // dW[o,k] += <gout row o, col row k>
        T* gw = grads.weights.data();
        for (index_t o = 0; o < g.out_channels; ++o) {
            const T* go_row = gout + o * n_dim;
            for (index_t k = 0; k < k_dim; ++k) {
                const T* col_row = col.data() + k * n_dim;
                T acc = T(0);
                for (index_t p = 0; p < n_dim; ++p) acc += go_row[p] * col_row[p];
                gw[o * k_dim + k] += acc;
            }
        }

        // dX = col2im(W^T * gout): transposed (full) correlation with the kernel.
        std::fill(gcol.begin(), gcol.end(), T(0));
        for (index_t k = 0; k < k_dim; ++k) {
            T* gcol_row = gcol.data() + k * n_dim;
            for (index_t o = 0; o < g.out_channels; ++o) {
                const T wv = weights.data()[o * k_dim + k];
                if (wv == T(0)) continue;
                const T* go_row = gout + o * n_dim;
                for (index_t p = 0; p < n_dim; ++p) gcol_row[p] += wv * go_row[p];
            }
        }
        detail::col2im_add(gcol.data(), in.c, in.h, in.w, g, out.h, out.w,
                           grads.input.data() + n * in.c * in.h * in.w);

        if (g.has_bias) {
            for (index_t o = 0; o < g.out_channels; ++o) {
                const T* go_row = gout + o * n_dim;
                T acc = T(0);
                for (index_t p = 0; p < n_dim; ++p) acc += go_row[p];
                grads.bias[static_cast<std::size_t>(o)] += acc;
            }
        }
    }
    return grads;
}

// Brute-force implementation used as the correctness anchor for
// conv2d_forward. Kept as one explicit loop nest on purpose; it shares no
// helpers with the fast path.
template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& input, const Tensor<T>& weights,
                           std::type_identity_t<const std::vector<T>*> bias,
                           const ConvGeometry& g) {
    detail::check_conv_args(input, weights, bias, g);
    const Shape4 in = input.shape();
    const index_t out_h = (in.h + 2 * g.padding - g.dilation * (g.kernel_h - 1) - 1) / g.stride + 1;
    const index_t out_w = (in.w + 2 * g.padding - g.dilation * (g.kernel_w - 1) - 1) / g.stride + 1;
    if (out_h < 1 || out_w < 1) throw GeometryError("reference conv: kernel exceeds padded input");

    Tensor<T> result(Shape4{in.n, g.out_channels, out_h, out_w});
    for (index_t n = 0; n < in.n; ++n) {
        for (index_t o = 0; o < g.out_channels; ++o) {
            for (index_t oh = 0; oh < out_h; ++oh) {
                for (index_t ow = 0; ow < out_w; ++ow) {
                    T acc = T(0);
                    for (index_t c = 0; c < in.c; ++c) {
                        for (index_t i = 0; i < g.kernel_h; ++i) {
                            for (index_t j = 0; j < g.kernel_w; ++j) {
                                const index_t y = oh * g.stride - g.padding + i * g.dilation;
                                const index_t x = ow * g.stride - g.padding + j * g.dilation;
                                if (y < 0 || y >= in.h || x < 0 || x >= in.w) continue;
                                acc += weights(o, c, i, j) * input(n, c, y, x);
                            }
                        }
                    }
                    if (g.has_bias) acc += (*bias)[static_cast<std::size_t>(o)];
                    result(n, o, oh, ow) = acc;
                }
            }
        }
    }
    return result;
}

}  // namespace coconv
