#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coconv/coconv.hpp"
#include "coconv/conv2d.hpp"
#include "coconv/cost.hpp"
#include "coconv/tensor.hpp"

namespace coconv {

enum class Phase { train, eval };

// Named view of one learnable tensor (or running-stat buffer) inside a
// network. Buffers carry grad == nullptr and are skipped by the optimizer.
template <typename T>
struct ParamSlot {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T>* grad = nullptr;
    std::vector<index_t> dims;
    bool decay = false;

    bool trainable() const { return grad != nullptr; }
    index_t count() const { return static_cast<index_t>(value->size()); }
};

// A differentiable layer. forward in train phase caches whatever backward
// needs; backward consumes the cache of the most recent forward and
// accumulates parameter gradients in place.
template <typename T>
class Module {
  public:
    virtual ~Module() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, Phase phase) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) {}
    virtual Shape4 output_shape(const Shape4& in) const = 0;
    virtual void add_cost(const Shape4& in, CostReport& report,
                          const std::string& prefix) const {}
    virtual void set_stats_frozen(bool frozen) {}
    virtual const char* kind() const = 0;
};

namespace detail {

template <typename T>
std::vector<T> he_normal(index_t count, index_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<T> dist(T(0), std::sqrt(T(2) / static_cast<T>(fan_in)));
    std::vector<T> v(static_cast<std::size_t>(count));
    for (auto& x : v) x = dist(rng);
    return v;
}

template <typename T>
std::vector<T> unit_normal(index_t count, std::mt19937_64& rng) {
    std::normal_distribution<T> dist(T(0), T(1));
    std::vector<T> v(static_cast<std::size_t>(count));
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace detail

// Plain 2-D convolution layer. weight_scale != 1 selects the equalized
// learning-rate convention: weights are kept at unit variance and scaled by
// sqrt(gain/fan_in) at use.
template <typename T>
class Conv2dLayer : public Module<T> {
  public:
    Conv2dLayer(const ConvGeometry& geom, std::mt19937_64& rng) : geom_(geom) {
        geom.validate();
        weights_ = Tensor<T>(Shape4{geom.out_channels, geom.in_channels, geom.kernel_h, geom.kernel_w});
        weights_.storage() = detail::he_normal<T>(weights_.size(), fan_in(), rng);
        grad_weights_ = Tensor<T>::zeros(weights_.shape());
        if (geom.has_bias) {
            bias_.assign(static_cast<std::size_t>(geom.out_channels), T(0));
            grad_bias_.assign(bias_.size(), T(0));
        }
    }

    static Conv2dLayer equalized(const ConvGeometry& geom, std::mt19937_64& rng, T gain = T(2)) {
        Conv2dLayer layer(geom, rng);
        layer.weights_.storage() = detail::unit_normal<T>(layer.weights_.size(), rng);
        layer.scale_ = std::sqrt(gain / static_cast<T>(layer.fan_in()));
        return layer;
    }

    index_t fan_in() const { return geom_.in_channels * geom_.kernel_h * geom_.kernel_w; }
    const ConvGeometry& geometry() const { return geom_; }
    Tensor<T>& weights() { return weights_; }
    const Tensor<T>& weights() const { return weights_; }
    std::vector<T>& bias() { return bias_; }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        if (phase == Phase::train) input_ = x;
        const Tensor<T>& w = scale_ == T(1) ? weights_ : scaled_weights();
        return conv2d_forward(x, w, geom_.has_bias ? &bias_ : nullptr, geom_);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_.empty()) throw ShapeError("conv backward without cached forward");
        const Tensor<T>& w = scale_ == T(1) ? weights_ : scaled_weights();
        Conv2dGrads<T> grads = conv2d_backward(input_, w, geom_, grad_out);
        T* gw = grad_weights_.data();
        const T* src = grads.weights.data();
        for (index_t i = 0; i < grad_weights_.size(); ++i) gw[i] += scale_ * src[i];
        for (std::size_t i = 0; i < grad_bias_.size(); ++i) grad_bias_[i] += grads.bias[i];
        return std::move(grads.input);
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back(ParamSlot<T>{prefix + "weight", &weights_.storage(), &grad_weights_.storage(),
                                   {geom_.out_channels, geom_.in_channels, geom_.kernel_h, geom_.kernel_w},
                                   true});
        if (geom_.has_bias) {
            out.push_back(ParamSlot<T>{prefix + "bias", &bias_, &grad_bias_, {geom_.out_channels}, false});
        }
    }

    Shape4 output_shape(const Shape4& in) const override {
        const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, geom_);
        return Shape4{in.n, geom_.out_channels, out.h, out.w};
    }

    void add_cost(const Shape4& in, CostReport& report, const std::string& prefix) const override {
        const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, geom_);
        report.append(count_conv_cost(geom_, out, prefix + "conv"));
    }

    const char* kind() const override { return "conv"; }

  private:
    Tensor<T> scaled_weights() const {
        Tensor<T> w = weights_;
        for (index_t i = 0; i < w.size(); ++i) w.data()[i] *= scale_;
        return w;
    }

    ConvGeometry geom_;
    Tensor<T> weights_;
    Tensor<T> grad_weights_;
    std::vector<T> bias_;
    std::vector<T> grad_bias_;
    T scale_ = T(1);
    Tensor<T> input_;
};

// Multi-level dilated convolution layer.
template <typename T>
class CoConvLayer : public Module<T> {
  public:
    CoConvLayer(const CoConvSpec& spec, std::mt19937_64& rng) : spec_(spec) {
        spec.validate();
        const index_t fan = spec.in_channels * spec.kernel_h * spec.kernel_w;
        for (const auto& level : spec.levels) {
            Tensor<T> w(Shape4{level.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
            w.storage() = detail::he_normal<T>(w.size(), fan, rng);
            grad_level_weights_.push_back(Tensor<T>::zeros(w.shape()));
            level_weights_.push_back(std::move(w));
        }
        if (spec.has_bias) {
            bias_.assign(static_cast<std::size_t>(spec.out_channels()), T(0));
            grad_bias_.assign(bias_.size(), T(0));
        }
    }

    static CoConvLayer equalized(const CoConvSpec& spec, std::mt19937_64& rng, T gain = T(2)) {
        CoConvLayer layer(spec, rng);
        for (auto& w : layer.level_weights_) w.storage() = detail::unit_normal<T>(w.size(), rng);
        const index_t fan = spec.in_channels * spec.kernel_h * spec.kernel_w;
        layer.scale_ = std::sqrt(gain / static_cast<T>(fan));
        return layer;
    }

    const CoConvSpec& spec() const { return spec_; }
    std::vector<Tensor<T>>& level_weights() { return level_weights_; }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        if (phase == Phase::train) input_ = x;
        if (scale_ == T(1)) return coconv_forward(x, level_weights_, bias_ptr(), spec_);
        return coconv_forward(x, scaled_weights(), bias_ptr(), spec_);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_.empty()) throw ShapeError("coconv backward without cached forward");
        CoConvGrads<T> grads =
            scale_ == T(1) ? coconv_backward(input_, level_weights_, spec_, grad_out)
                           : coconv_backward(input_, scaled_weights(), spec_, grad_out);
        for (std::size_t l = 0; l < level_weights_.size(); ++l) {
            T* gw = grad_level_weights_[l].data();
            const T* src = grads.level_weights[l].data();
            for (index_t i = 0; i < grad_level_weights_[l].size(); ++i) gw[i] += scale_ * src[i];
        }
        if (spec_.has_bias) {
            // conv grads carry no bias term here because the backward pass is
            // bias-agnostic; accumulate it directly from grad_out.
            const Shape4 gs = grad_out.shape();
            for (index_t n = 0; n < gs.n; ++n) {
                for (index_t c = 0; c < gs.c; ++c) {
                    T acc = T(0);
                    const T* row = grad_out.data() + (n * gs.c + c) * gs.h * gs.w;
                    for (index_t p = 0; p < gs.h * gs.w; ++p) acc += row[p];
                    grad_bias_[static_cast<std::size_t>(c)] += acc;
                }
            }
        }
        return std::move(grads.input);
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        for (std::size_t l = 0; l < level_weights_.size(); ++l) {
            out.push_back(ParamSlot<T>{prefix + "level" + std::to_string(l) + ".weight",
                                       &level_weights_[l].storage(), &grad_level_weights_[l].storage(),
                                       {spec_.levels[l].out_channels, spec_.in_channels,
                                        spec_.kernel_h, spec_.kernel_w},
                                       true});
        }
        if (spec_.has_bias) {
            out.push_back(
                ParamSlot<T>{prefix + "bias", &bias_, &grad_bias_, {spec_.out_channels()}, false});
        }
    }

    Shape4 output_shape(const Shape4& in) const override {
        const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, spec_.level_geometry(0));
        return Shape4{in.n, spec_.out_channels(), out.h, out.w};
    }

    void add_cost(const Shape4& in, CostReport& report, const std::string& prefix) const override {
        const SpatialSize out = conv_output_shape(SpatialSize{in.h, in.w}, spec_.level_geometry(0));
        report.append(count_coconv_cost(spec_, out, prefix + "coconv"));
    }

    const char* kind() const override { return "coconv"; }

  private:
    const std::vector<T>* bias_ptr() const { return spec_.has_bias ? &bias_ : nullptr; }

    std::vector<Tensor<T>> scaled_weights() const {
        std::vector<Tensor<T>> scaled = level_weights_;
        for (auto& w : scaled)
            for (index_t i = 0; i < w.size(); ++i) w.data()[i] *= scale_;
        return scaled;
    }

    CoConvSpec spec_;
    std::vector<Tensor<T>> level_weights_;
    std::vector<Tensor<T>> grad_level_weights_;
    std::vector<T> bias_;
    std::vector<T> grad_bias_;
    T scale_ = T(1);
    Tensor<T> input_;
};

// Batch normalization over (N,H,W) per channel. Train phase normalizes by
// batch statistics and updates the running estimates unless frozen; eval
// phase is a fixed affine map from the running estimates.
template <typename T>
class BatchNorm2d : public Module<T> {
  public:
    explicit BatchNorm2d(index_t channels, T momentum = T(0.1), T eps = T(1e-5))
        : channels_(channels), momentum_(momentum), eps_(eps) {
        gamma_.assign(static_cast<std::size_t>(channels), T(1));
        beta_.assign(static_cast<std::size_t>(channels), T(0));
        running_mean_.assign(static_cast<std::size_t>(channels), T(0));
        running_var_.assign(static_cast<std::size_t>(channels), T(1));
        grad_gamma_.assign(static_cast<std::size_t>(channels), T(0));
        grad_beta_.assign(static_cast<std::size_t>(channels), T(0));
    }

    index_t channels() const { return channels_; }
    std::vector<T>& gamma() { return gamma_; }
    std::vector<T>& beta() { return beta_; }
    std::vector<T>& running_mean() { return running_mean_; }
    std::vector<T>& running_var() { return running_var_; }

    void set_stats_frozen(bool frozen) override { frozen_ = frozen; }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        if (s.c != channels_)
            throw ShapeError("batchnorm expects " + std::to_string(channels_) + " channels");
        const index_t m = s.n * s.h * s.w;
        Tensor<T> y(s);
        if (phase == Phase::train) {
            if (m < 2) throw DataError("batchnorm: train mode needs N*H*W >= 2 per channel");
            mean_.assign(static_cast<std::size_t>(channels_), T(0));
            invstd_.assign(static_cast<std::size_t>(channels_), T(0));
            std::vector<T> var(static_cast<std::size_t>(channels_), T(0));
            for (index_t c = 0; c < channels_; ++c) {
                T acc = T(0);
                for (index_t n = 0; n < s.n; ++n) {
                    const T* row = x.data() + (n * s.c + c) * s.h * s.w;
                    for (index_t p = 0; p < s.h * s.w; ++p) acc += row[p];
                }
                mean_[static_cast<std::size_t>(c)] = acc / static_cast<T>(m);
            }
            for (index_t c = 0; c < channels_; ++c) {
                T acc = T(0);
                const T mu = mean_[static_cast<std::size_t>(c)];
                for (index_t n = 0; n < s.n; ++n) {
                    const T* row = x.data() + (n * s.c + c) * s.h * s.w;
                    for (index_t p = 0; p < s.h * s.w; ++p) {
                        const T d = row[p] - mu;
                        acc += d * d;
                    }
                }
                var[static_cast<std::size_t>(c)] = acc / static_cast<T>(m);
            }
            for (index_t c = 0; c < channels_; ++c)
                invstd_[static_cast<std::size_t>(c)] =
                    T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps_);
            if (!frozen_) {
                for (index_t c = 0; c < channels_; ++c) {
                    const auto i = static_cast<std::size_t>(c);
                    running_mean_[i] = (T(1) - momentum_) * running_mean_[i] + momentum_ * mean_[i];
                    const T unbiased = var[i] * static_cast<T>(m) / static_cast<T>(m - 1);
                    running_var_[i] = (T(1) - momentum_) * running_var_[i] + momentum_ * unbiased;
                }
            }
            xhat_ = Tensor<T>(s);
            for (index_t n = 0; n < s.n; ++n) {
                for (index_t c = 0; c < channels_; ++c) {
                    const auto i = static_cast<std::size_t>(c);
                    const T* row = x.data() + (n * s.c + c) * s.h * s.w;
                    T* xh = xhat_.data() + (n * s.c + c) * s.h * s.w;
                    T* out = y.data() + (n * s.c + c) * s.h * s.w;
                    for (index_t p = 0; p < s.h * s.w; ++p) {
                        xh[p] = (row[p] - mean_[i]) * invstd_[i];
                        out[p] = gamma_[i] * xh[p] + beta_[i];
                    }
                }
            }
            train_cache_ = true;
        } else {
            for (index_t n = 0; n < s.n; ++n) {
                for (index_t c = 0; c < channels_; ++c) {
                    const auto i = static_cast<std::size_t>(c);
                    const T inv = T(1) / std::sqrt(running_var_[i] + eps_);
                    const T* row = x.data() + (n * s.c + c) * s.h * s.w;
                    T* out = y.data() + (n * s.c + c) * s.h * s.w;
                    for (index_t p = 0; p < s.h * s.w; ++p)
                        out[p] = gamma_[i] * (row[p] - running_mean_[i]) * inv + beta_[i];
                }
            }
            train_cache_ = false;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        const Shape4 s = grad_out.shape();
        if (s.c != channels_) throw ShapeError("batchnorm backward: channel mismatch");
        if (!train_cache_) throw ShapeError("batchnorm backward requires a train-phase forward");
        Tensor<T> gx(s);
        const index_t m = s.n * s.h * s.w;
        for (index_t c = 0; c < channels_; ++c) {
            const auto i = static_cast<std::size_t>(c);
            T sum_g = T(0), sum_gx = T(0);
            for (index_t n = 0; n < s.n; ++n) {
                const T* g = grad_out.data() + (n * s.c + c) * s.h * s.w;
                const T* xh = xhat_.data() + (n * s.c + c) * s.h * s.w;
                for (index_t p = 0; p < s.h * s.w; ++p) {
                    sum_g += g[p];
                    sum_gx += g[p] * xh[p];
                }
            }
            grad_beta_[i] += sum_g;
            grad_gamma_[i] += sum_gx;
            const T k = gamma_[i] * invstd_[i] / static_cast<T>(m);
            for (index_t n = 0; n < s.n; ++n) {
                const T* g = grad_out.data() + (n * s.c + c) * s.h * s.w;
                const T* xh = xhat_.data() + (n * s.c + c) * s.h * s.w;
                T* out = gx.data() + (n * s.c + c) * s.h * s.w;
                for (index_t p = 0; p < s.h * s.w; ++p)
                    out[p] = k * (static_cast<T>(m) * g[p] - sum_g - xh[p] * sum_gx);
            }
        }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back(ParamSlot<T>{prefix + "gamma", &gamma_, &grad_gamma_, {channels_}, false});
        out.push_back(ParamSlot<T>{prefix + "beta", &beta_, &grad_beta_, {channels_}, false});
        out.push_back(ParamSlot<T>{prefix + "running_mean", &running_mean_, nullptr, {channels_}, false});
        out.push_back(ParamSlot<T>{prefix + "running_var", &running_var_, nullptr, {channels_}, false});
    }

    Shape4 output_shape(const Shape4& in) const override { return in; }

    void add_cost(const Shape4& in, CostReport& report, const std::string& prefix) const override {
        report.add(prefix + "bn", 2 * channels_, 0);
    }

    const char* kind() const override { return "batchnorm"; }

  private:
    index_t channels_;
    T momentum_;
    T eps_;
    bool frozen_ = false;
    std::vector<T> gamma_, beta_, running_mean_, running_var_;
    std::vector<T> grad_gamma_, grad_beta_;
    std::vector<T> mean_, invstd_;
    Tensor<T> xhat_;
    bool train_cache_ = false;
};

// Elementwise max(x, 0) or max(x, slope*x).
template <typename T>
class Activation : public Module<T> {
  public:
    static Activation relu() { return Activation(T(0)); }
    static Activation leaky_relu(T slope) { return Activation(slope); }

    explicit Activation(T slope = T(0)) : slope_(slope) {}

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        if (phase == Phase::train) input_ = x;
        Tensor<T> y(x.shape());
        for (index_t i = 0; i < x.size(); ++i) {
            const T v = x.data()[i];
            y.data()[i] = v > T(0) ? v : slope_ * v;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_.empty()) throw ShapeError("activation backward without cached forward");
        Tensor<T> gx(grad_out.shape());
        for (index_t i = 0; i < grad_out.size(); ++i) {
            gx.data()[i] = input_.data()[i] > T(0) ? grad_out.data()[i] : slope_ * grad_out.data()[i];
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override { return in; }
    const char* kind() const override { return "activation"; }

  private:
    T slope_;
    Tensor<T> input_;
};

// Max pooling with -inf padding semantics: padded cells never win.
template <typename T>
class MaxPool2d : public Module<T> {
  public:
    MaxPool2d(index_t kernel, index_t stride, index_t padding)
        : kernel_(kernel), stride_(stride), padding_(padding) {
        if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel)
            throw GeometryError("maxpool: need kernel >= 1, stride >= 1, 0 <= padding < kernel");
    }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        const index_t oh = sliding_output_extent(s.h, kernel_, stride_, padding_, 1);
        const index_t ow = sliding_output_extent(s.w, kernel_, stride_, padding_, 1);
        Tensor<T> y(Shape4{s.n, s.c, oh, ow});
        argmax_.assign(static_cast<std::size_t>(y.size()), -1);
        in_shape_ = s;
        index_t out_idx = 0;
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t c = 0; c < s.c; ++c) {
                const T* plane = x.data() + (n * s.c + c) * s.h * s.w;
                for (index_t i = 0; i < oh; ++i) {
                    for (index_t j = 0; j < ow; ++j, ++out_idx) {
                        T best = T(0);
                        index_t best_at = -1;
                        for (index_t ki = 0; ki < kernel_; ++ki) {
                            const index_t yy = i * stride_ - padding_ + ki;
                            if (yy < 0 || yy >= s.h) continue;
                            for (index_t kj = 0; kj < kernel_; ++kj) {
                                const index_t xx = j * stride_ - padding_ + kj;
                                if (xx < 0 || xx >= s.w) continue;
                                const T v = plane[yy * s.w + xx];
                                if (best_at < 0 || v > best) {
                                    best = v;
                                    best_at = (n * s.c + c) * s.h * s.w + yy * s.w + xx;
                                }
                            }
                        }
                        y.data()[out_idx] = best;
                        argmax_[static_cast<std::size_t>(out_idx)] = best_at;
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (argmax_.empty()) throw ShapeError("maxpool backward without cached forward");
        Tensor<T> gx = Tensor<T>::zeros(in_shape_);
        for (index_t i = 0; i < grad_out.size(); ++i) {
            gx.data()[argmax_[static_cast<std::size_t>(i)]] += grad_out.data()[i];
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override {
        return Shape4{in.n, in.c, sliding_output_extent(in.h, kernel_, stride_, padding_, 1),
                      sliding_output_extent(in.w, kernel_, stride_, padding_, 1)};
    }

    const char* kind() const override { return "maxpool"; }

  private:
    index_t kernel_, stride_, padding_;
    Shape4 in_shape_;
    std::vector<index_t> argmax_;
};

// Reduces H x W to 1 x 1 by the mean.
template <typename T>
class GlobalAvgPool : public Module<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        in_shape_ = s;
        Tensor<T> y(Shape4{s.n, s.c, 1, 1});
        const index_t plane = s.h * s.w;
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t c = 0; c < s.c; ++c) {
                const T* row = x.data() + (n * s.c + c) * plane;
                T acc = T(0);
                for (index_t p = 0; p < plane; ++p) acc += row[p];
                y(n, c, 0, 0) = acc / static_cast<T>(plane);
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        Tensor<T> gx(in_shape_);
        const index_t plane = in_shape_.h * in_shape_.w;
        for (index_t n = 0; n < in_shape_.n; ++n) {
            for (index_t c = 0; c < in_shape_.c; ++c) {
                const T g = grad_out(n, c, 0, 0) / static_cast<T>(plane);
                T* row = gx.data() + (n * in_shape_.c + c) * plane;
                for (index_t p = 0; p < plane; ++p) row[p] = g;
            }
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override { return Shape4{in.n, in.c, 1, 1}; }
    const char* kind() const override { return "global_avgpool"; }

  private:
    Shape4 in_shape_;
};

// Nearest-neighbour 2x upsampling; backward sums each 2x2 block.
template <typename T>
class UpsampleNearest2x : public Module<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        in_shape_ = s;
        Tensor<T> y(Shape4{s.n, s.c, s.h * 2, s.w * 2});
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t c = 0; c < s.c; ++c) {
                const T* src = x.data() + (n * s.c + c) * s.h * s.w;
                T* dst = y.data() + (n * s.c + c) * s.h * s.w * 4;
                for (index_t i = 0; i < s.h; ++i) {
                    for (index_t j = 0; j < s.w; ++j) {
                        const T v = src[i * s.w + j];
                        dst[(2 * i) * 2 * s.w + 2 * j] = v;
                        dst[(2 * i) * 2 * s.w + 2 * j + 1] = v;
                        dst[(2 * i + 1) * 2 * s.w + 2 * j] = v;
                        dst[(2 * i + 1) * 2 * s.w + 2 * j + 1] = v;
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        Tensor<T> gx(in_shape_);
        const Shape4 s = in_shape_;
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t c = 0; c < s.c; ++c) {
                const T* g = grad_out.data() + (n * s.c + c) * s.h * s.w * 4;
                T* dst = gx.data() + (n * s.c + c) * s.h * s.w;
                for (index_t i = 0; i < s.h; ++i) {
                    for (index_t j = 0; j < s.w; ++j) {
                        dst[i * s.w + j] = g[(2 * i) * 2 * s.w + 2 * j] +
                                           g[(2 * i) * 2 * s.w + 2 * j + 1] +
                                           g[(2 * i + 1) * 2 * s.w + 2 * j] +
                                           g[(2 * i + 1) * 2 * s.w + 2 * j + 1];
                    }
                }
            }
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override {
        return Shape4{in.n, in.c, in.h * 2, in.w * 2};
    }
    const char* kind() const override { return "upsample2x"; }

  private:
    Shape4 in_shape_;
};

// Affine map on (N, F, 1, 1) tensors.
template <typename T>
class Dense : public Module<T> {
  public:
    Dense(index_t in_features, index_t out_features, std::mt19937_64& rng)
        : in_(in_features), out_(out_features) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in_features));
        std::uniform_real_distribution<T> dist(-bound, bound);
        weights_.assign(static_cast<std::size_t>(in_ * out_), T(0));
        for (auto& w : weights_) w = dist(rng);
        bias_.assign(static_cast<std::size_t>(out_), T(0));
        grad_weights_.assign(weights_.size(), T(0));
        grad_bias_.assign(bias_.size(), T(0));
    }

    static Dense equalized(index_t in_features, index_t out_features, std::mt19937_64& rng,
                           T gain = T(2)) {
        Dense layer(in_features, out_features, rng);
        layer.weights_ = detail::unit_normal<T>(layer.in_ * layer.out_, rng);
        layer.scale_ = std::sqrt(gain / static_cast<T>(in_features));
        return layer;
    }

    std::vector<T>& weights() { return weights_; }
    std::vector<T>& bias() { return bias_; }
    index_t in_features() const { return in_; }
    index_t out_features() const { return out_; }

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        if (s.c != in_ || s.h != 1 || s.w != 1)
            throw ShapeError("dense expects (N," + std::to_string(in_) + ",1,1), got " + s.str());
        if (phase == Phase::train) input_ = x;
        Tensor<T> y(Shape4{s.n, out_, 1, 1});
        for (index_t n = 0; n < s.n; ++n) {
            const T* xv = x.data() + n * in_;
            T* yv = y.data() + n * out_;
            for (index_t o = 0; o < out_; ++o) {
                const T* row = weights_.data() + o * in_;
                T acc = T(0);
                for (index_t f = 0; f < in_; ++f) acc += row[f] * xv[f];
                yv[o] = scale_ * acc + bias_[static_cast<std::size_t>(o)];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_.empty()) throw ShapeError("dense backward without cached forward");
        const Shape4 s = input_.shape();
        Tensor<T> gx(s);
        for (index_t n = 0; n < s.n; ++n) {
            const T* g = grad_out.data() + n * out_;
            const T* xv = input_.data() + n * in_;
            T* gxv = gx.data() + n * in_;
            for (index_t f = 0; f < in_; ++f) gxv[f] = T(0);
            for (index_t o = 0; o < out_; ++o) {
                const T go = g[o];
                grad_bias_[static_cast<std::size_t>(o)] += go;
                T* gw = grad_weights_.data() + o * in_;
                const T* row = weights_.data() + o * in_;
                for (index_t f = 0; f < in_; ++f) {
                    gw[f] += scale_ * go * xv[f];
                    gxv[f] += scale_ * go * row[f];
                }
            }
        }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back(ParamSlot<T>{prefix + "weight", &weights_, &grad_weights_, {out_, in_}, true});
        out.push_back(ParamSlot<T>{prefix + "bias", &bias_, &grad_bias_, {out_}, false});
    }

    Shape4 output_shape(const Shape4& in) const override { return Shape4{in.n, out_, 1, 1}; }

    void add_cost(const Shape4& in, CostReport& report, const std::string& prefix) const override {
        report.add(prefix + "fc", in_ * out_ + out_, in_ * out_);
    }

    const char* kind() const override { return "dense"; }

  private:
    index_t in_, out_;
    std::vector<T> weights_, bias_;
    std::vector<T> grad_weights_, grad_bias_;
    T scale_ = T(1);
    Tensor<T> input_;
};

// Per-pixel feature normalization: x / sqrt(mean_c(x^2) + eps).
template <typename T>
class PixelNorm : public Module<T> {
  public:
    explicit PixelNorm(T eps = T(1e-8)) : eps_(eps) {}

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        const Shape4 s = x.shape();
        if (phase == Phase::train) input_ = x;
        inv_.assign(static_cast<std::size_t>(s.n * s.h * s.w), T(0));
        Tensor<T> y(s);
        const index_t plane = s.h * s.w;
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t p = 0; p < plane; ++p) {
                T acc = T(0);
                for (index_t c = 0; c < s.c; ++c) {
                    const T v = x.data()[(n * s.c + c) * plane + p];
                    acc += v * v;
                }
                const T inv = T(1) / std::sqrt(acc / static_cast<T>(s.c) + eps_);
                inv_[static_cast<std::size_t>(n * plane + p)] = inv;
                for (index_t c = 0; c < s.c; ++c) {
                    y.data()[(n * s.c + c) * plane + p] = x.data()[(n * s.c + c) * plane + p] * inv;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_.empty()) throw ShapeError("pixelnorm backward without cached forward");
        const Shape4 s = input_.shape();
        Tensor<T> gx(s);
        const index_t plane = s.h * s.w;
        for (index_t n = 0; n < s.n; ++n) {
            for (index_t p = 0; p < plane; ++p) {
                const T inv = inv_[static_cast<std::size_t>(n * plane + p)];
                T dot = T(0);
                for (index_t c = 0; c < s.c; ++c) {
                    dot += grad_out.data()[(n * s.c + c) * plane + p] *
                           input_.data()[(n * s.c + c) * plane + p];
                }
                const T k = inv * inv * inv * dot / static_cast<T>(s.c);
                for (index_t c = 0; c < s.c; ++c) {
                    const index_t at = (n * s.c + c) * plane + p;
                    gx.data()[at] = grad_out.data()[at] * inv - input_.data()[at] * k;
                }
            }
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override { return in; }
    const char* kind() const override { return "pixelnorm"; }

  private:
    T eps_;
    Tensor<T> input_;
    std::vector<T> inv_;
};

// Reinterprets (N, c*h*w, 1, 1) <-> (N, c, h, w).
template <typename T>
class Reshape : public Module<T> {
  public:
    Reshape(index_t c, index_t h, index_t w) : c_(c), h_(h), w_(w) {}

    Tensor<T> forward(const Tensor<T>& x, Phase phase) override {
        in_shape_ = x.shape();
        return x.reshaped(Shape4{x.shape().n, c_, h_, w_});
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override { return grad_out.reshaped(in_shape_); }

    Shape4 output_shape(const Shape4& in) const override { return Shape4{in.n, c_, h_, w_}; }
    const char* kind() const override { return "reshape"; }

  private:
    index_t c_, h_, w_;
    Shape4 in_shape_;
};

}  // namespace coconv
