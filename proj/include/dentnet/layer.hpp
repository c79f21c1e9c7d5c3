#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/ops.hpp"
#include "dentnet/prng.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

enum class Mode { Train, Eval };

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// One network stage. forward() caches whatever backward() needs; backward()
// consumes exactly one forward's cache and accumulates parameter gradients.
// Batch tensors carry the sample dimension first: [B x H x W x C] or [B x D].
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  // Shape of one sample's output given one sample's input; throws if the
  // input cannot feed this layer. Used for the build-time composition check.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode, Prng* rng) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<ParamRef> params() { return {}; }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(0.0);
  }

 protected:
  void require_cache(bool have) const {
    if (!have)
      throw std::logic_error(kind() + ": backward called without a preceding forward");
  }
};

inline std::size_t batch_of(const Tensor& t) { return t.dim(0); }

inline Shape sample_shape(const Tensor& batch) {
  return Shape(batch.shape().begin() + 1, batch.shape().end());
}

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(std::size_t kernel, std::size_t in_channels, std::size_t filters,
              std::size_t stride = 1, Padding padding = Padding::Same)
      : kernel_(kernel),
        in_channels_(in_channels),
        filters_(filters),
        stride_(stride),
        padding_(padding),
        kernels_({kernel, kernel, in_channels, filters}),
        bias_({filters}),
        grad_kernels_({kernel, kernel, in_channels, filters}),
        grad_bias_({filters}) {}

  std::string kind() const override { return "conv"; }

  std::size_t kernel() const { return kernel_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t filters() const { return filters_; }
  std::size_t stride() const { return stride_; }
  Padding padding() const { return padding_; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3)
      throw std::invalid_argument("conv expects HxWxC input, got " + shape_str(in));
    if (in[2] != in_channels_)
      throw std::invalid_argument("conv channel mismatch: input " + shape_str(in) +
                                  " vs kernels " + shape_str(kernels_.shape()));
    const ConvGeometry g = conv_geometry(in[0], in[1], kernel_, stride_, padding_);
    return {g.out_h, g.out_w, filters_};
  }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    const std::size_t b = batch_of(x);
    const std::size_t h = x.dim(1), w = x.dim(2);
    const ConvGeometry g = conv_geometry(h, w, kernel_, stride_, padding_);
    Tensor out({b, g.out_h, g.out_w, filters_});
    const Tensor flat = kernels_.reshaped({kernel_ * kernel_ * in_channels_, filters_});
    const std::size_t sample_in = h * w * in_channels_;
    const std::size_t sample_out = g.out_h * g.out_w * filters_;
    for (std::size_t i = 0; i < b; ++i) {
      Tensor img({h, w, in_channels_},
                 std::vector<double>(x.data() + i * sample_in, x.data() + (i + 1) * sample_in));
      const Tensor col = im2col(img, kernel_, stride_, g);
      Tensor y = matmul(col, flat);
      double* py = y.data();
      for (std::size_t r = 0; r < g.out_h * g.out_w; ++r)
        for (std::size_t fj = 0; fj < filters_; ++fj) py[r * filters_ + fj] += bias_[fj];
      std::copy(py, py + sample_out, out.data() + i * sample_out);
    }
    cached_input_ = x;
    has_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    const Tensor& x = cached_input_;
    const std::size_t b = batch_of(x);
    const std::size_t h = x.dim(1), w = x.dim(2);
    const ConvGeometry g = conv_geometry(h, w, kernel_, stride_, padding_);
    const std::size_t rows = g.out_h * g.out_w;
    const std::size_t sample_in = h * w * in_channels_;
    const std::size_t patch = kernel_ * kernel_ * in_channels_;
    Tensor dx(x.shape());
    const Tensor flat = kernels_.reshaped({patch, filters_});
    Tensor dflat({patch, filters_});
    for (std::size_t i = 0; i < b; ++i) {
      Tensor img({h, w, in_channels_},
                 std::vector<double>(x.data() + i * sample_in, x.data() + (i + 1) * sample_in));
      const Tensor col = im2col(img, kernel_, stride_, g);
      Tensor dyb({rows, filters_},
                 std::vector<double>(dy.data() + i * rows * filters_,
                                     dy.data() + (i + 1) * rows * filters_));
      matmul_at_acc(col, dyb, dflat);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t fj = 0; fj < filters_; ++fj) grad_bias_[fj] += dyb(r, fj);
      const Tensor dcol = matmul_bt(dyb, flat);
      const Tensor dimg = col2im(dcol, h, w, in_channels_, kernel_, stride_, g);
      std::copy(dimg.data(), dimg.data() + sample_in, dx.data() + i * sample_in);
    }
    for (std::size_t i = 0; i < dflat.size(); ++i) grad_kernels_[i] += dflat[i];
    return dx;
  }

  std::vector<ParamRef> params() override {
    return {{"kernels", &kernels_, &grad_kernels_}, {"bias", &bias_, &grad_bias_}};
  }

 private:
  std::size_t kernel_, in_channels_, filters_, stride_;
  Padding padding_;
  Tensor kernels_, bias_, grad_kernels_, grad_bias_;
  Tensor cached_input_;
  bool has_cache_ = false;
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}

  std::string kind() const override { return "maxpool"; }
  std::size_t window() const { return window_; }
  std::size_t stride() const { return stride_; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3)
      throw std::invalid_argument("maxpool expects HxWxC input, got " + shape_str(in));
    if (window_ > in[0] || window_ > in[1])
      throw std::invalid_argument("maxpool window " + std::to_string(window_) +
                                  " exceeds input " + shape_str(in));
    return {(in[0] - window_) / stride_ + 1, (in[1] - window_) / stride_ + 1, in[2]};
  }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    const std::size_t b = batch_of(x);
    const std::size_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t sample_in = h * w * c;
    const Shape out_s = output_shape({h, w, c});
    const std::size_t sample_out = out_s[0] * out_s[1] * out_s[2];
    Tensor out({b, out_s[0], out_s[1], out_s[2]});
    argmax_.assign(b * sample_out, 0);
    for (std::size_t i = 0; i < b; ++i) {
      Tensor img({h, w, c},
                 std::vector<double>(x.data() + i * sample_in, x.data() + (i + 1) * sample_in));
      PoolResult r = maxpool2d(img, window_, stride_);
      std::copy(r.out.data(), r.out.data() + sample_out, out.data() + i * sample_out);
      std::copy(r.argmax.begin(), r.argmax.end(), argmax_.begin() + i * sample_out);
    }
    in_h_ = h;
    in_w_ = w;
    in_c_ = c;
    has_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    const std::size_t b = batch_of(dy);
    const std::size_t sample_out = dy.size() / b;
    const std::size_t sample_in = in_h_ * in_w_ * in_c_;
    Tensor dx({b, in_h_, in_w_, in_c_});
    for (std::size_t i = 0; i < b; ++i) {
      const double* pdy = dy.data() + i * sample_out;
      double* pdx = dx.data() + i * sample_in;
      for (std::size_t j = 0; j < sample_out; ++j) {
        const std::size_t ch = j % in_c_;
        pdx[argmax_[i * sample_out + j] * in_c_ + ch] += pdy[j];
      }
    }
    return dx;
  }

 private:
  std::size_t window_, stride_;
  std::size_t in_h_ = 0, in_w_ = 0, in_c_ = 0;
  std::vector<std::size_t> argmax_;
  bool has_cache_ = false;
};

// max(0, x); the subgradient at exactly 0 is taken as 0.
class ReluLayer final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    Tensor y = x;
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > 0.0) {
        mask_[i] = 1;
      } else {
        y[i] = 0.0;
      }
    }
    has_cache_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx[i] = 0.0;
    return dx;
  }

 private:
  std::vector<unsigned char> mask_;
  bool has_cache_ = false;
};

// Fully connected map. Accepts any input rank; everything after the batch
// dimension is flattened, and backward restores the original shape.
class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out)
      : in_(in), out_(out), weights_({in, out}), bias_({out}),
        grad_weights_({in, out}), grad_bias_({out}) {}

  std::string kind() const override { return "fc"; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Shape output_shape(const Shape& in) const override {
    if (shape_numel(in) != in_)
      throw std::invalid_argument("fc expects " + std::to_string(in_) +
                                  " input features, got " + shape_str(in));
    return {out_};
  }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    const std::size_t b = batch_of(x);
    cached_input_ = x.reshaped({b, x.size() / b});
    if (cached_input_.dim(1) != in_)
      throw std::invalid_argument("fc expects " + std::to_string(in_) +
                                  " input features, got " + shape_str(x.shape()));
    Tensor y = matmul(cached_input_, weights_);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < out_; ++j) y(i, j) += bias_[j];
    input_shape_ = x.shape();
    has_cache_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    const std::size_t b = batch_of(dy);
    matmul_at_acc(cached_input_, dy, grad_weights_);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < out_; ++j) grad_bias_[j] += dy(i, j);
    Tensor dx = matmul_bt(dy, weights_);
    return dx.reshaped(input_shape_);
  }

  std::vector<ParamRef> params() override {
    return {{"weights", &weights_, &grad_weights_}, {"bias", &bias_, &grad_bias_}};
  }

 private:
  std::size_t in_, out_;
  Tensor weights_, bias_, grad_weights_, grad_bias_;
  Tensor cached_input_;
  Shape input_shape_;
  bool has_cache_ = false;
};

// Inverted dropout: in train mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate), so the expected activation
// equals the input. Eval mode is the identity.
class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw std::invalid_argument("dropout rate must be in [0,1), got " + std::to_string(rate));
  }

  std::string kind() const override { return "dropout"; }
  double rate() const { return rate_; }
  void set_rate(double r) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
    rate_ = r;
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x, Mode mode, Prng* rng) override {
    has_cache_ = true;
    if (mode == Mode::Eval || rate_ == 0.0) {
      scale_.assign(x.size(), 1.0);
      return x;
    }
    if (!rng) throw std::logic_error("dropout: train-mode forward needs a generator");
    const double keep = 1.0 - rate_;
    scale_.assign(x.size(), 0.0);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (rng->next_double() < keep) {
        scale_[i] = 1.0 / keep;
        y[i] *= scale_[i];
      } else {
        y[i] = 0.0;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale_[i];
    return dx;
  }

 private:
  double rate_;
  std::vector<double> scale_;
  bool has_cache_ = false;
};

// Row-wise softmax over [B x K] with max-shift stabilization.
class SoftmaxLayer final : public Layer {
 public:
  std::string kind() const override { return "softmax"; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 1)
      throw std::invalid_argument("softmax expects a flat class vector, got " + shape_str(in));
    return in;
  }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    const std::size_t b = batch_of(x);
    const std::size_t k = x.size() / b;
    Tensor y = x.reshaped({b, k});
    for (std::size_t i = 0; i < b; ++i) {
      double mx = y(i, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, y(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        y(i, j) = std::exp(y(i, j) - mx);
        sum += y(i, j);
      }
      for (std::size_t j = 0; j < k; ++j) y(i, j) /= sum;
    }
    cached_probs_ = y;
    has_cache_ = true;
    return y;
  }

  // Generic Jacobian-vector product; the cross-entropy training path skips
  // this and starts from the fused (p - onehot)/B logit gradient instead.
  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    const std::size_t b = dy.dim(0), k = dy.dim(1);
    Tensor dx({b, k});
    for (std::size_t i = 0; i < b; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += dy(i, j) * cached_probs_(i, j);
      for (std::size_t j = 0; j < k; ++j)
        dx(i, j) = cached_probs_(i, j) * (dy(i, j) - dot);
    }
    return dx;
  }

  const Tensor& cached_probs() const { return cached_probs_; }
  void drop_cache() { has_cache_ = false; }
  bool has_cache() const { return has_cache_; }

 private:
  Tensor cached_probs_;
  bool has_cache_ = false;
};

}  // namespace dentnet
