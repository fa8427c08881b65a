#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "csiloc/errors.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"

namespace csiloc {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

// A trainable tensor with its gradient accumulator and Adam moment state.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t step_count = 0;

    Parameter(std::string param_name, Tensor<T> init)
        : name(std::move(param_name)),
          value(std::move(init)),
          grad(value.shape()),
          m(value.shape()),
          v(value.shape()) {}

    void zero_grad() { grad.fill(T(0)); }
};

namespace detail {

template <typename T>
Tensor<T> kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

inline void require_rank(const std::vector<std::size_t>& shape, std::size_t rank, const std::string& who) {
    if (shape.size() != rank) {
        throw DimensionError(who + ": expected rank-" + std::to_string(rank) +
                             " input, got shape " + shape_string(shape));
    }
}

} // namespace detail

// One layer of the network. `apply` is the pure inference path and never
// touches layer state, so a const model is safe to evaluate from several
// threads. `forward` additionally caches what `backward` needs; backward
// consumes that cache and accumulates parameter gradients.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Tensor<T> apply(const Tensor<T>& x) const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Parameter<T>*> params() { return {}; }
    // Shape algebra without data; also the single input-validation point.
    virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;
    virtual nlohmann::json describe() const = 0;

protected:
    void require_primed(bool primed) const {
        if (!primed) throw StateError(kind() + ": backward called without a preceding forward");
    }
};

template <typename T>
class Dense : public Layer<T> {
public:
    Dense(std::size_t in_dim, std::size_t out_dim, Rng& rng)
        : in_(in_dim),
          out_(out_dim),
          weight_("weight", detail::kaiming_uniform<T>({out_dim, in_dim}, in_dim, rng)),
          bias_("bias", Tensor<T>({out_dim})) {}

    Dense(Tensor<T> weight, Tensor<T> bias)
        : in_(weight.extent(1)), out_(weight.extent(0)),
          weight_("weight", std::move(weight)), bias_("bias", std::move(bias)) {
        if (bias_.value.shape() != std::vector<std::size_t>{out_}) {
            throw DimensionError("dense: bias shape " + shape_string(bias_.value.shape()) +
                                 " does not match weight rows " + std::to_string(out_));
        }
    }

    std::string kind() const override { return "dense"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        detail::require_rank(in, 2, "dense");
        if (in[1] != in_) {
            throw DimensionError("dense: expected input dim " + std::to_string(in_) +
                                 ", got " + std::to_string(in[1]) + " (input shape " + shape_string(in) + ")");
        }
        return {in[0], out_};
    }

    Tensor<T> apply(const Tensor<T>& x) const override {
        Tensor<T> y(output_shape(x.shape()));
        const std::size_t batch = x.extent(0);
        ConstMatMap<T> xm(x.data(), batch, in_);
        ConstMatMap<T> wm(weight_.value.data(), out_, in_);
        MatMap<T> ym(y.data(), batch, out_);
        ym.noalias() = xm * wm.transpose();
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> y = apply(x);
        cached_input_ = x;
        primed_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        const std::size_t batch = cached_input_.extent(0);
        ConstMatMap<T> gm(grad_out.data(), batch, out_);
        ConstMatMap<T> xm(cached_input_.data(), batch, in_);
        ConstMatMap<T> wm(weight_.value.data(), out_, in_);

        MatMap<T> dwm(weight_.grad.data(), out_, in_);
        dwm.noalias() += gm.transpose() * xm;
        // plain loop: Eigen's reductions group terms by pointer alignment,
        // which would make reruns within a process differ in the last bits
        const T* g = grad_out.data();
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += g[i * out_ + j];

        Tensor<T> dx({batch, in_});
        MatMap<T> dxm(dx.data(), batch, in_);
        dxm.noalias() = gm * wm;
        return dx;
    }

    std::vector<Parameter<T>*> params() override { return {&weight_, &bias_}; }

    nlohmann::json describe() const override {
        return {{"kind", "dense"}, {"in", in_}, {"out", out_}, {"params", in_ * out_ + out_}};
    }

private:
    std::size_t in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> cached_input_;
    bool primed_ = false;
};

template <typename T>
class ReLU : public Layer<T> {
public:
    std::string kind() const override { return "relu"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }

    Tensor<T> apply(const Tensor<T>& x) const override {
        Tensor<T> y = x;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] < T(0)) y[i] = T(0);
        }
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> y(x.shape());
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] > T(0)) {
                y[i] = x[i];
                mask_[i] = 1;
            }
        }
        primed_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        Tensor<T> dx(grad_out.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask_[i] ? grad_out[i] : T(0);
        return dx;
    }

    nlohmann::json describe() const override { return {{"kind", "relu"}}; }

private:
    std::vector<std::uint8_t> mask_;
    bool primed_ = false;
};

// [batch, ...] -> [batch, product of trailing extents]
template <typename T>
class Flatten : public Layer<T> {
public:
    std::string kind() const override { return "flatten"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() < 2) {
            throw DimensionError("flatten: expected rank >= 2 input, got shape " + shape_string(in));
        }
        std::size_t flat = 1;
        for (std::size_t d = 1; d < in.size(); ++d) flat *= in[d];
        return {in[0], flat};
    }

    Tensor<T> apply(const Tensor<T>& x) const override { return x.reshaped(output_shape(x.shape())); }

    Tensor<T> forward(const Tensor<T>& x) override {
        cached_shape_ = x.shape();
        primed_ = true;
        return apply(x);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        return grad_out.reshaped(cached_shape_);
    }

    nlohmann::json describe() const override { return {{"kind", "flatten"}}; }

private:
    std::vector<std::size_t> cached_shape_;
    bool primed_ = false;
};

// Valid cross-correlation over [batch, c_in, h, w] images.
template <typename T>
class Conv2d : public Layer<T> {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           Rng& rng, std::size_t stride = 1, std::size_t padding = 0)
        : cin_(in_channels), cout_(out_channels), kh_(kernel), kw_(kernel),
          stride_(stride), pad_(padding),
          kernel_("kernel", detail::kaiming_uniform<T>({out_channels, in_channels, kernel, kernel},
                                                       in_channels * kernel * kernel, rng)),
          bias_("bias", Tensor<T>({out_channels})) {
        if (stride_ == 0) throw ConfigError("conv2d: stride must be >= 1");
    }

    Conv2d(Tensor<T> kernel, Tensor<T> bias, std::size_t stride = 1, std::size_t padding = 0)
        : cin_(kernel.extent(1)), cout_(kernel.extent(0)),
          kh_(kernel.extent(2)), kw_(kernel.extent(3)),
          stride_(stride), pad_(padding),
          kernel_("kernel", std::move(kernel)), bias_("bias", std::move(bias)) {
        if (stride_ == 0) throw ConfigError("conv2d: stride must be >= 1");
    }

    std::string kind() const override { return "conv2d"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        detail::require_rank(in, 4, "conv2d");
        if (in[1] != cin_) {
            throw DimensionError("conv2d: expected " + std::to_string(cin_) + " input channels, got " +
                                 std::to_string(in[1]) + " (input shape " + shape_string(in) + ")");
        }
        const std::size_t hp = in[2] + 2 * pad_, wp = in[3] + 2 * pad_;
        if (hp < kh_ || wp < kw_) {
            throw DimensionError("conv2d: kernel " + std::to_string(kh_) + "x" + std::to_string(kw_) +
                                 " larger than padded input " + std::to_string(hp) + "x" + std::to_string(wp));
        }
        return {in[0], cout_, (hp - kh_) / stride_ + 1, (wp - kw_) / stride_ + 1};
    }

    Tensor<T> apply(const Tensor<T>& x) const override {
        Tensor<T> padded = pad_input(x);
        return correlate(padded, x.extent(0));
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        cached_padded_ = pad_input(x);
        primed_ = true;
        return correlate(cached_padded_, x.extent(0));
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        const std::size_t batch = cached_padded_.extent(0);
        const std::size_t hp = cached_padded_.extent(2), wp = cached_padded_.extent(3);
        const std::size_t ho = grad_out.extent(2), wo = grad_out.extent(3);
        const std::size_t k = cin_ * kh_ * kw_, n = ho * wo;

        Tensor<T> dpad(cached_padded_.shape());
        std::vector<T> col(k * n), dcol(k * n);
        ConstMatMap<T> km(kernel_.value.data(), cout_, k);
        MatMap<T> dkm(kernel_.grad.data(), cout_, k);

        for (std::size_t b = 0; b < batch; ++b) {
            im2col(cached_padded_.data() + b * cin_ * hp * wp, hp, wp, ho, wo, col.data());
            const T* gout = grad_out.data() + b * cout_ * n;
            ConstMatMap<T> gm(gout, cout_, n);
            ConstMatMap<T> colm(col.data(), k, n);
            dkm.noalias() += gm * colm.transpose();
            // plain loop: Eigen's 1-D redux groups terms by pointer alignment,
            // which would make reruns within a process differ in the last bits
            for (std::size_t co = 0; co < cout_; ++co) {
                T acc = 0;
                for (std::size_t c = 0; c < n; ++c) acc += gout[co * n + c];
                bias_.grad[co] += acc;
            }

            MatMap<T> dcolm(dcol.data(), k, n);
            dcolm.noalias() = km.transpose() * gm;
            col2im(dcol.data(), hp, wp, ho, wo, dpad.data() + b * cin_ * hp * wp);
        }
        return strip_padding(dpad);
    }

    std::vector<Parameter<T>*> params() override { return {&kernel_, &bias_}; }

    nlohmann::json describe() const override {
        return {{"kind", "conv2d"},
                {"in_channels", cin_},
                {"out_channels", cout_},
                {"kernel", {kh_, kw_}},
                {"stride", stride_},
                {"padding", pad_},
                {"params", cout_ * cin_ * kh_ * kw_ + cout_}};
    }

private:
    Tensor<T> pad_input(const Tensor<T>& x) const {
        output_shape(x.shape()); // validates
        if (pad_ == 0) return x;
        const std::size_t batch = x.extent(0), h = x.extent(2), w = x.extent(3);
        const std::size_t hp = h + 2 * pad_, wp = w + 2 * pad_;
        Tensor<T> padded({batch, cin_, hp, wp});
        for (std::size_t bc = 0; bc < batch * cin_; ++bc) {
            const T* src = x.data() + bc * h * w;
            T* dst = padded.data() + bc * hp * wp + pad_ * wp + pad_;
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
                src += w;
                dst += wp;
            }
        }
        return padded;
    }

    Tensor<T> strip_padding(const Tensor<T>& dpad) const {
        if (pad_ == 0) return dpad;
        const std::size_t batch = dpad.extent(0), hp = dpad.extent(2), wp = dpad.extent(3);
        const std::size_t h = hp - 2 * pad_, w = wp - 2 * pad_;
        Tensor<T> dx({batch, cin_, h, w});
        for (std::size_t bc = 0; bc < batch * cin_; ++bc) {
            const T* src = dpad.data() + bc * hp * wp + pad_ * wp + pad_;
            T* dst = dx.data() + bc * h * w;
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
                src += wp;
                dst += w;
            }
        }
        return dx;
    }

    // col rows are (ci, u, v), columns are output positions (i, j)
    void im2col(const T* img, std::size_t hp, std::size_t wp,
                std::size_t ho, std::size_t wo, T* col) const {
        for (std::size_t ci = 0; ci < cin_; ++ci) {
            const T* plane = img + ci * hp * wp;
            for (std::size_t u = 0; u < kh_; ++u) {
                for (std::size_t v = 0; v < kw_; ++v) {
                    for (std::size_t i = 0; i < ho; ++i) {
                        const T* src = plane + (i * stride_ + u) * wp + v;
                        for (std::size_t j = 0; j < wo; ++j) *col++ = src[j * stride_];
                    }
                }
            }
        }
    }

    void col2im(const T* col, std::size_t hp, std::size_t wp,
                std::size_t ho, std::size_t wo, T* img) const {
        for (std::size_t ci = 0; ci < cin_; ++ci) {
            T* plane = img + ci * hp * wp;
            for (std::size_t u = 0; u < kh_; ++u) {
                for (std::size_t v = 0; v < kw_; ++v) {
                    for (std::size_t i = 0; i < ho; ++i) {
                        T* dst = plane + (i * stride_ + u) * wp + v;
                        for (std::size_t j = 0; j < wo; ++j) dst[j * stride_] += *col++;
                    }
                }
            }
        }
    }

    Tensor<T> correlate(const Tensor<T>& padded, std::size_t batch) const {
        const std::size_t hp = padded.extent(2), wp = padded.extent(3);
        const std::size_t ho = (hp - kh_) / stride_ + 1, wo = (wp - kw_) / stride_ + 1;
        const std::size_t k = cin_ * kh_ * kw_, n = ho * wo;
        Tensor<T> y({batch, cout_, ho, wo});
        std::vector<T> col(k * n);
        ConstMatMap<T> km(kernel_.value.data(), cout_, k);
        for (std::size_t b = 0; b < batch; ++b) {
            im2col(padded.data() + b * cin_ * hp * wp, hp, wp, ho, wo, col.data());
            ConstMatMap<T> colm(col.data(), k, n);
            MatMap<T> ym(y.data() + b * cout_ * n, cout_, n);
            ym.noalias() = km * colm;
            for (std::size_t co = 0; co < cout_; ++co) ym.row(co).array() += bias_.value[co];
        }
        return y;
    }

    std::size_t cin_, cout_, kh_, kw_, stride_, pad_;
    Parameter<T> kernel_, bias_;
    Tensor<T> cached_padded_;
    bool primed_ = false;
};

// Fixed 2x2 window, stride 2. Odd trailing rows/columns are dropped.
// Ties resolve to the first element in row-major window order.
template <typename T>
class MaxPool2d : public Layer<T> {
public:
    std::string kind() const override { return "maxpool2d"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        detail::require_rank(in, 4, "maxpool2d");
        if (in[2] < 2 || in[3] < 2) {
            throw DimensionError("maxpool2d: spatial extents must be >= 2, got shape " + shape_string(in));
        }
        return {in[0], in[1], in[2] / 2, in[3] / 2};
    }

    Tensor<T> apply(const Tensor<T>& x) const override {
        return pool(x, nullptr);
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        cached_input_shape_ = x.shape();
        Tensor<T> y = pool(x, &argmax_);
        primed_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        Tensor<T> dx(cached_input_shape_);
        for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
        return dx;
    }

    nlohmann::json describe() const override {
        return {{"kind", "maxpool2d"}, {"window", {2, 2}}, {"stride", 2}};
    }

private:
    Tensor<T> pool(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
        Tensor<T> y(output_shape(x.shape()));
        const std::size_t planes = x.extent(0) * x.extent(1);
        const std::size_t h = x.extent(2), w = x.extent(3);
        const std::size_t ho = h / 2, wo = w / 2;
        if (argmax) argmax->resize(y.size());
        std::size_t out = 0;
        for (std::size_t p = 0; p < planes; ++p) {
            const std::size_t base = p * h * w;
            for (std::size_t i = 0; i < ho; ++i) {
                for (std::size_t j = 0; j < wo; ++j) {
                    const std::size_t tl = base + 2 * i * w + 2 * j;
                    const std::size_t cand[4] = {tl, tl + 1, tl + w, tl + w + 1};
                    std::size_t best = cand[0];
                    for (int c = 1; c < 4; ++c) {
                        if (x[cand[c]] > x[best]) best = cand[c];
                    }
                    y[out] = x[best];
                    if (argmax) (*argmax)[out] = best;
                    ++out;
                }
            }
        }
        return y;
    }

    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> cached_input_shape_;
    bool primed_ = false;
};

// Adjoint of the strided correlation, used by the CNN decoder to upsample.
// An optional target extent pins the output size exactly; the slack between
// the natural output and the target is split symmetrically (extra cells see
// only the bias).
template <typename T>
class ConvTranspose2d : public Layer<T> {
public:
    ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                    Rng& rng, std::size_t stride = 1,
                    std::size_t target_h = 0, std::size_t target_w = 0)
        : cin_(in_channels), cout_(out_channels), kh_(kernel), kw_(kernel),
          stride_(stride), target_h_(target_h), target_w_(target_w),
          kernel_("kernel", detail::kaiming_uniform<T>({out_channels, in_channels, kernel, kernel},
                                                       in_channels * kernel * kernel, rng)),
          bias_("bias", Tensor<T>({out_channels})) {
        if (stride_ == 0) throw ConfigError("conv_transpose2d: stride must be >= 1");
    }

    ConvTranspose2d(Tensor<T> kernel, Tensor<T> bias, std::size_t stride = 1,
                    std::size_t target_h = 0, std::size_t target_w = 0)
        : cin_(kernel.extent(1)), cout_(kernel.extent(0)),
          kh_(kernel.extent(2)), kw_(kernel.extent(3)),
          stride_(stride), target_h_(target_h), target_w_(target_w),
          kernel_("kernel", std::move(kernel)), bias_("bias", std::move(bias)) {
        if (stride_ == 0) throw ConfigError("conv_transpose2d: stride must be >= 1");
    }

    std::string kind() const override { return "conv_transpose2d"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        detail::require_rank(in, 4, "conv_transpose2d");
        if (in[1] != cin_) {
            throw DimensionError("conv_transpose2d: expected " + std::to_string(cin_) +
                                 " input channels, got " + std::to_string(in[1]) +
                                 " (input shape " + shape_string(in) + ")");
        }
        return {in[0], cout_, extent_for(in[2], kh_, target_h_), extent_for(in[3], kw_, target_w_)};
    }

    Tensor<T> apply(const Tensor<T>& x) const override { return upsample(x); }

    Tensor<T> forward(const Tensor<T>& x) override {
        cached_input_ = x;
        primed_ = true;
        return upsample(x);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_primed(primed_);
        primed_ = false;
        const std::size_t batch = cached_input_.extent(0);
        const std::size_t h = cached_input_.extent(2), w = cached_input_.extent(3);
        const std::size_t ho = grad_out.extent(2), wo = grad_out.extent(3);
        const std::size_t oh = offset_for(h, kh_, target_h_), ow = offset_for(w, kw_, target_w_);
        const std::size_t k = cout_ * kh_ * kw_, hw = h * w;

        std::vector<T> kperm = permuted_kernel();
        std::vector<T> dkperm(k * cin_, T(0));
        std::vector<T> gcol(k * hw);
        Tensor<T> dx(cached_input_.shape());

        for (std::size_t b = 0; b < batch; ++b) {
            const T* gout = grad_out.data() + b * cout_ * ho * wo;
            // gather the window of grad_out that each input cell scattered to
            T* gc = gcol.data();
            for (std::size_t co = 0; co < cout_; ++co) {
                const T* plane = gout + co * ho * wo;
                for (std::size_t u = 0; u < kh_; ++u) {
                    for (std::size_t v = 0; v < kw_; ++v) {
                        for (std::size_t i = 0; i < h; ++i) {
                            const T* src = plane + (i * stride_ + u + oh) * wo + v + ow;
                            for (std::size_t j = 0; j < w; ++j) *gc++ = src[j * stride_];
                        }
                    }
                }
                for (std::size_t c = 0; c < ho * wo; ++c) bias_.grad[co] += plane[c];
            }
            ConstMatMap<T> gcm(gcol.data(), k, hw);
            ConstMatMap<T> kpm(kperm.data(), k, cin_);
            ConstMatMap<T> xm(cached_input_.data() + b * cin_ * hw, cin_, hw);
            MatMap<T> dxm(dx.data() + b * cin_ * hw, cin_, hw);
            dxm.noalias() = kpm.transpose() * gcm;
            MatMap<T> dkpm(dkperm.data(), k, cin_);
            dkpm.noalias() += gcm * xm.transpose();
        }

        // fold the permuted kernel gradient back into [c_out, c_in, kh, kw]
        for (std::size_t co = 0; co < cout_; ++co) {
            for (std::size_t u = 0; u < kh_; ++u) {
                for (std::size_t v = 0; v < kw_; ++v) {
                    const std::size_t row = (co * kh_ + u) * kw_ + v;
                    for (std::size_t ci = 0; ci < cin_; ++ci) {
                        kernel_.grad[((co * cin_ + ci) * kh_ + u) * kw_ + v] += dkperm[row * cin_ + ci];
                    }
                }
            }
        }
        return dx;
    }

    std::vector<Parameter<T>*> params() override { return {&kernel_, &bias_}; }

    nlohmann::json describe() const override {
        nlohmann::json j{{"kind", "conv_transpose2d"},
                         {"in_channels", cin_},
                         {"out_channels", cout_},
                         {"kernel", {kh_, kw_}},
                         {"stride", stride_},
                         {"params", cout_ * cin_ * kh_ * kw_ + cout_}};
        if (target_h_ || target_w_) j["target"] = {target_h_, target_w_};
        return j;
    }

private:
    std::size_t extent_for(std::size_t in, std::size_t kernel, std::size_t target) const {
        const std::size_t base = (in - 1) * stride_ + kernel;
        if (target == 0) return base;
        if (target < base || target > base + stride_) {
            throw DimensionError("conv_transpose2d: target extent " + std::to_string(target) +
                                 " unreachable from input extent " + std::to_string(in) +
                                 " (natural output " + std::to_string(base) + ", stride " +
                                 std::to_string(stride_) + ")");
        }
        return target;
    }

    std::size_t offset_for(std::size_t in, std::size_t kernel, std::size_t target) const {
        return (extent_for(in, kernel, target) - ((in - 1) * stride_ + kernel)) / 2;
    }

    // kernel rearranged to rows (co, u, v), columns ci
    std::vector<T> permuted_kernel() const {
        std::vector<T> kperm(cout_ * kh_ * kw_ * cin_);
        for (std::size_t co = 0; co < cout_; ++co) {
            for (std::size_t ci = 0; ci < cin_; ++ci) {
                for (std::size_t u = 0; u < kh_; ++u) {
                    for (std::size_t v = 0; v < kw_; ++v) {
                        kperm[((co * kh_ + u) * kw_ + v) * cin_ + ci] =
                            kernel_.value[((co * cin_ + ci) * kh_ + u) * kw_ + v];
                    }
                }
            }
        }
        return kperm;
    }

    Tensor<T> upsample(const Tensor<T>& x) const {
        const auto out_shape = output_shape(x.shape());
        const std::size_t batch = x.extent(0), h = x.extent(2), w = x.extent(3);
        const std::size_t ho = out_shape[2], wo = out_shape[3];
        const std::size_t oh = offset_for(h, kh_, target_h_), ow = offset_for(w, kw_, target_w_);
        const std::size_t k = cout_ * kh_ * kw_, hw = h * w;

        Tensor<T> y(out_shape);
        std::vector<T> kperm = permuted_kernel();
        std::vector<T> cols(k * hw);
        ConstMatMap<T> kpm(kperm.data(), k, cin_);

        for (std::size_t b = 0; b < batch; ++b) {
            ConstMatMap<T> xm(x.data() + b * cin_ * hw, cin_, hw);
            MatMap<T> cm(cols.data(), k, hw);
            cm.noalias() = kpm * xm;

            T* yout = y.data() + b * cout_ * ho * wo;
            const T* cp = cols.data();
            for (std::size_t co = 0; co < cout_; ++co) {
                T* plane = yout + co * ho * wo;
                for (std::size_t c = 0; c < ho * wo; ++c) plane[c] = bias_.value[co];
            }
            for (std::size_t co = 0; co < cout_; ++co) {
                T* plane = yout + co * ho * wo;
                for (std::size_t u = 0; u < kh_; ++u) {
                    for (std::size_t v = 0; v < kw_; ++v) {
                        for (std::size_t i = 0; i < h; ++i) {
                            T* dst = plane + (i * stride_ + u + oh) * wo + v + ow;
                            for (std::size_t j = 0; j < w; ++j) dst[j * stride_] += *cp++;
                        }
                    }
                }
            }
        }
        return y;
    }

    std::size_t cin_, cout_, kh_, kw_, stride_, target_h_, target_w_;
    Parameter<T> kernel_, bias_;
    Tensor<T> cached_input_;
    bool primed_ = false;
};

// An ordered pile of layers sharing one forward/backward chain.
template <typename T>
class Stack {
public:
    Stack() = default;
    Stack(Stack&&) noexcept = default;
    Stack& operator=(Stack&&) noexcept = default;

    void push(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    Layer<T>& at(std::size_t i) { return *layers_.at(i); }
    const Layer<T>& at(std::size_t i) const { return *layers_.at(i); }

    Tensor<T> apply(const Tensor<T>& x) const {
        Tensor<T> cur = x;
        for (const auto& l : layers_) cur = l->apply(cur);
        return cur;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> cur = x;
        for (const auto& l : layers_) cur = l->forward(cur);
        return cur;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        Tensor<T> cur = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
        return cur;
    }

    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out;
        for (const auto& l : layers_) {
            for (Parameter<T>* p : l->params()) out.push_back(p);
        }
        return out;
    }

    // "<index>.<param>" names, stable across runs; used by checkpoints
    std::vector<std::pair<std::string, Parameter<T>*>> named_params() {
        std::vector<std::pair<std::string, Parameter<T>*>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            for (Parameter<T>* p : layers_[i]->params()) {
                out.emplace_back(std::to_string(i) + "." + p->name, p);
            }
        }
        return out;
    }

    std::vector<std::size_t> output_shape(std::vector<std::size_t> in) const {
        for (const auto& l : layers_) in = l->output_shape(in);
        return in;
    }

    nlohmann::json describe() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& l : layers_) arr.push_back(l->describe());
        return arr;
    }

    void zero_grad() {
        for (Parameter<T>* p : params()) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

} // namespace csiloc
