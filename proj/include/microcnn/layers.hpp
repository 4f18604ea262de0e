#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/rng.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn {

enum class Mode { train, infer };

enum class Activation { none, relu };

/// Handle to one parameter tensor owned by a layer. `grad` is null for
/// non-trainable state such as batch-norm running statistics.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;

  bool trainable() const { return grad != nullptr; }
};

// ---------------------------------------------------------------------------
// Stateless kernels shared by the layer classes.

inline Tensor relu(const Tensor& x) {
  return map(x, [](float v) { return v > 0.0f ? v : 0.0f; });
}

/// Gradient through ReLU given the forward input or output (their signs
/// agree). The subgradient at exactly zero is zero.
inline Tensor relu_backward(const Tensor& grad_y, const Tensor& forward_value) {
  return zip_with(grad_y, forward_value, "relu_backward",
                  [](float g, float v) { return v > 0.0f ? g : 0.0f; });
}

/// Row-wise softmax over the last axis of a [N, K] tensor, with the row
/// maximum subtracted before exponentiation.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("softmax expects [N,K], got " + x.shape().to_string());
  const std::size_t rows = x.dim(0), k = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < rows; ++n) {
    const float* in = x.raw() + n * k;
    float* out = y.raw() + n * k;
    float top = in[0];
    for (std::size_t j = 1; j < k; ++j) top = std::max(top, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = std::exp(in[j] - top);
      total += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<float>(out[j] / total);
  }
  return y;
}

/// Vector-Jacobian product of softmax: dx = y * (dy - <dy, y>) per row.
inline Tensor softmax_backward(const Tensor& grad_y, const Tensor& y) {
  require_same_shape(grad_y, y, "softmax_backward");
  const std::size_t rows = y.dim(0), k = y.dim(1);
  Tensor dx(y.shape());
  for (std::size_t n = 0; n < rows; ++n) {
    double inner = 0.0;
    for (std::size_t j = 0; j < k; ++j) inner += double(grad_y[n * k + j]) * y[n * k + j];
    for (std::size_t j = 0; j < k; ++j)
      dx[n * k + j] = static_cast<float>(y[n * k + j] * (grad_y[n * k + j] - inner));
  }
  return dx;
}

/// He-uniform initialisation, limit sqrt(6 / fan_in).
inline Tensor he_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return rng_uniform(rng, shape, -limit, limit);
}

// ---------------------------------------------------------------------------

/// Base class for all layers. Shapes passed to `output_shape` exclude the
/// batch axis; tensors passed to `forward` include it.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;
  Layer(Layer&&) = default;
  Layer& operator=(Layer&&) = default;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;

  /// Canonical one-line description used in checkpoint descriptors.
  virtual std::string descriptor() const = 0;

  /// Throws DimensionError if the per-sample input shape is incompatible.
  virtual Shape output_shape(const Shape& input) const = 0;

  /// Train mode populates the cache consumed by backward(); infer mode
  /// invalidates it.
  Tensor forward(const Tensor& x, Mode mode) {
    if (mode == Mode::train) return train_forward(x);
    clear_cache();
    return infer(x);
  }

  /// Read-only inference. Touches no layer state.
  virtual Tensor infer(const Tensor& x) const = 0;

  /// Returns dL/dx and accumulates (+=) parameter gradients.
  virtual Tensor backward(const Tensor& grad_y) = 0;

  virtual std::vector<ParamRef> params() { return {}; }

  /// Includes non-trainable state (batch-norm running statistics).
  virtual std::size_t parameter_count() const { return 0; }

  void zero_grad() {
    for (auto& p : params())
      if (p.grad) p.grad->fill(0.0f);
  }

 protected:
  virtual Tensor train_forward(const Tensor& x) = 0;
  virtual void clear_cache() = 0;

  [[noreturn]] void missing_cache() const {
    throw CacheError(name_ + ": backward called without a preceding train-mode forward");
  }
  void check_grad_shape(const Tensor& grad_y, const Shape& expected) const {
    if (!(grad_y.shape() == expected))
      throw DimensionError(name_ + ": gradient shape " + grad_y.shape().to_string() +
                           " does not match forward output " + expected.to_string());
  }

 private:
  std::string name_;
};

namespace detail {

inline const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "none"; }

inline std::string format_float(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

inline Shape with_batch(std::size_t batch, const Shape& sample) {
  std::vector<std::size_t> dims{batch};
  dims.insert(dims.end(), sample.dims().begin(), sample.dims().end());
  return Shape(dims);
}

inline Shape drop_batch(const Shape& s) {
  if (s.rank() < 2) return Shape{1};
  return Shape(std::vector<std::size_t>(s.dims().begin() + 1, s.dims().end()));
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Valid (unpadded) 2-D convolution over NHWC input, implemented as
/// im2col followed by a matrix product. Weights are [kh, kw, Cin, Cout],
/// which is already the [kh*kw*Cin, Cout] matrix the product needs.
class Conv2D : public Layer {
 public:
  Conv2D(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
         std::size_t kernel_w, std::size_t stride, Activation act, Rng& rng)
      : Layer(std::move(name)),
        in_channels_(in_channels),
        filters_(filters),
        kh_(kernel_h),
        kw_(kernel_w),
        stride_(stride),
        act_(act),
        weights_(he_uniform(rng, Shape{kernel_h, kernel_w, in_channels, filters},
                            kernel_h * kernel_w * in_channels)),
        bias_(Shape{filters}),
        grad_w_(weights_.shape()),
        grad_b_(bias_.shape()) {
    if (stride_ == 0) throw DimensionError(this->name() + ": stride must be >= 1");
  }

  std::string kind() const override { return "conv2d"; }
  std::string descriptor() const override {
    std::ostringstream os;
    os << "conv2d in=" << in_channels_ << " filters=" << filters_ << " kh=" << kh_ << " kw=" << kw_
       << " stride=" << stride_ << " act=" << detail::activation_name(act_);
    return os.str();
  }

  Shape output_shape(const Shape& in) const override {
    if (in.rank() != 3)
      throw DimensionError(name() + ": expected [H,W,C] input, got " + in.to_string());
    if (in[2] != in_channels_)
      throw DimensionError(name() + ": expected " + std::to_string(in_channels_) +
                           " input channels, got " + std::to_string(in[2]));
    if (in[0] < kh_ || in[1] < kw_)
      throw DimensionError(name() + ": input " + in.to_string() + " is smaller than the " +
                           std::to_string(kh_) + "x" + std::to_string(kw_) + " kernel");
    return Shape{(in[0] - kh_) / stride_ + 1, (in[1] - kw_) / stride_ + 1, filters_};
  }

  Tensor infer(const Tensor& x) const override {
    const Shape out = output_shape(detail::drop_batch(x.shape()));
    const Tensor cols = im2col(x, out);
    return finish(matmul(cols, weight_matrix()), x.dim(0), out);
  }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->output.shape());
    const std::size_t rows = cache_->cols.dim(0);
    Tensor g = act_ == Activation::relu ? relu_backward(grad_y, cache_->output) : grad_y;
    g.reshape(Shape{rows, filters_});

    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t co = 0; co < filters_; ++co) grad_b_[co] += g[r * filters_ + co];
    Tensor gw = matmul_tn(cache_->cols, g);
    gw.reshape(weights_.shape());
    add_inplace(grad_w_, gw);

    const Tensor grad_cols = matmul(g, transpose(weight_matrix()));
    return col2im(grad_cols, cache_->input_shape, detail::drop_batch(cache_->output.shape()));
  }

  std::vector<ParamRef> params() override {
    return {{name() + ".weight", &weights_, &grad_w_}, {name() + ".bias", &bias_, &grad_b_}};
  }
  std::size_t parameter_count() const override { return weights_.size() + bias_.size(); }

  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }
  const Tensor& grad_weights() const { return grad_w_; }
  const Tensor& grad_bias() const { return grad_b_; }

 protected:
  Tensor train_forward(const Tensor& x) override {
    const Shape out = output_shape(detail::drop_batch(x.shape()));
    Tensor cols = im2col(x, out);
    Tensor y = finish(matmul(cols, weight_matrix()), x.dim(0), out);
    cache_ = Cache{x.shape(), std::move(cols), y};
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  struct Cache {
    Shape input_shape;
    Tensor cols;
    Tensor output;
  };

  Tensor weight_matrix() const {
    return weights_.reshaped(Shape{kh_ * kw_ * in_channels_, filters_});
  }

  Tensor finish(Tensor y, std::size_t batch, const Shape& out) const {
    const std::size_t rows = y.dim(0);
    float* p = y.raw();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t co = 0; co < filters_; ++co) {
        float v = p[r * filters_ + co] + bias_[co];
        if (act_ == Activation::relu && !(v > 0.0f)) v = 0.0f;
        p[r * filters_ + co] = v;
      }
    y.reshape(detail::with_batch(batch, out));
    return y;
  }

  // Row (n, i, j) holds the receptive field x[n, i*s .. i*s+kh, j*s .. j*s+kw, :]
  // in (a, b, ci) order. Each kernel row is one contiguous kw*Cin run.
  Tensor im2col(const Tensor& x, const Shape& out) const {
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = in_channels_;
    const std::size_t oh = out[0], ow = out[1];
    const std::size_t k = kh_ * kw_ * c, run = kw_ * c;
    Tensor cols(Shape{batch * oh * ow, k});
    float* dst = cols.raw();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t a = 0; a < kh_; ++a) {
            const float* src = x.raw() + ((n * h + i * stride_ + a) * w + j * stride_) * c;
            std::memcpy(dst, src, run * sizeof(float));
            dst += run;
          }
    (void)w;
    return cols;
  }

  Tensor col2im(const Tensor& cols, const Shape& input_shape, const Shape& out) const {
    Tensor dx(input_shape);
    const std::size_t batch = input_shape[0], h = input_shape[1], w = input_shape[2];
    const std::size_t c = in_channels_, oh = out[0], ow = out[1], run = kw_ * c;
    const float* src = cols.raw();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t a = 0; a < kh_; ++a) {
            float* d = dx.raw() + ((n * h + i * stride_ + a) * w + j * stride_) * c;
            for (std::size_t e = 0; e < run; ++e) d[e] += src[e];
            src += run;
          }
    return dx;
  }

  std::size_t in_channels_, filters_, kh_, kw_, stride_;
  Activation act_;
  Tensor weights_, bias_, grad_w_, grad_b_;
  std::optional<Cache> cache_;
};

// ---------------------------------------------------------------------------

/// Square max pooling with stride equal to the window. Trailing rows and
/// columns that do not fill a window are dropped.
class MaxPool2D : public Layer {
 public:
  MaxPool2D(std::string name, std::size_t size) : Layer(std::move(name)), size_(size) {
    if (size_ == 0) throw DimensionError(this->name() + ": pool size must be >= 1");
  }

  std::string kind() const override { return "maxpool"; }
  std::string descriptor() const override { return "maxpool size=" + std::to_string(size_); }

  Shape output_shape(const Shape& in) const override {
    if (in.rank() != 3)
      throw DimensionError(name() + ": expected [H,W,C] input, got " + in.to_string());
    if (in[0] < size_ || in[1] < size_)
      throw DimensionError(name() + ": input " + in.to_string() + " is smaller than the pool window");
    return Shape{in[0] / size_, in[1] / size_, in[2]};
  }

  Tensor infer(const Tensor& x) const override { return pool(x, nullptr); }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->output_shape);
    Tensor dx(cache_->input_shape);
    for (std::size_t o = 0; o < grad_y.size(); ++o) dx[cache_->winners[o]] += grad_y[o];
    return dx;
  }

  std::size_t size() const { return size_; }

 protected:
  Tensor train_forward(const Tensor& x) override {
    std::vector<std::size_t> winners;
    Tensor y = pool(x, &winners);
    cache_ = Cache{x.shape(), y.shape(), std::move(winners)};
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  struct Cache {
    Shape input_shape;
    Shape output_shape;
    std::vector<std::size_t> winners;  // flat input index per output cell
  };

  Tensor pool(const Tensor& x, std::vector<std::size_t>* winners) const {
    const Shape out = output_shape(detail::drop_batch(x.shape()));
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor y(detail::with_batch(batch, out));
    if (winners) winners->assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < out[0]; ++i)
        for (std::size_t j = 0; j < out[1]; ++j)
          for (std::size_t ch = 0; ch < c; ++ch, ++o) {
            std::size_t best = ((n * h + i * size_) * w + j * size_) * c + ch;
            for (std::size_t a = 0; a < size_; ++a)
              for (std::size_t b = 0; b < size_; ++b) {
                const std::size_t idx = ((n * h + i * size_ + a) * w + j * size_ + b) * c + ch;
                if (x[idx] > x[best]) best = idx;
              }
            y[o] = x[best];
            if (winners) (*winners)[o] = best;
          }
    return y;
  }

  std::size_t size_;
  std::optional<Cache> cache_;
};

// ---------------------------------------------------------------------------

/// Batch normalisation over the last (channel) axis. Statistics are taken
/// over every other axis: batch and spatial for 4-D input, batch for 2-D.
/// Training uses biased batch statistics; running statistics follow
/// r <- momentum * r + (1 - momentum) * batch_stat.
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, std::size_t channels, float momentum = 0.99f, float epsilon = 1e-3f)
      : Layer(std::move(name)),
        channels_(channels),
        momentum_(momentum),
        epsilon_(epsilon),
        gamma_(Shape{channels}, 1.0f),
        beta_(Shape{channels}),
        running_mean_(Shape{channels}),
        running_var_(Shape{channels}, 1.0f),
        grad_gamma_(Shape{channels}),
        grad_beta_(Shape{channels}) {}

  std::string kind() const override { return "batchnorm"; }
  std::string descriptor() const override {
    return "batchnorm channels=" + std::to_string(channels_) +
           " momentum=" + detail::format_float(momentum_) +
           " epsilon=" + detail::format_float(epsilon_);
  }

  Shape output_shape(const Shape& in) const override {
    if (in[in.rank() - 1] != channels_)
      throw DimensionError(name() + ": expected " + std::to_string(channels_) +
                           " channels on the last axis, got " + in.to_string());
    return in;
  }

  Tensor infer(const Tensor& x) const override {
    check_input(x);
    std::vector<float> scale(channels_), shift(channels_);
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(double(running_var_[c]) + epsilon_);
      scale[c] = static_cast<float>(gamma_[c] * inv);
      shift[c] = static_cast<float>(beta_[c] - gamma_[c] * running_mean_[c] * inv);
    }
    Tensor y(x.shape());
    const std::size_t rows = x.size() / channels_;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c)
        y[r * channels_ + c] = x[r * channels_ + c] * scale[c] + shift[c];
    return y;
  }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->xhat.shape());
    const std::size_t rows = grad_y.size() / channels_;
    const Tensor& xhat = cache_->xhat;
    std::vector<double> sum_g(channels_, 0.0), sum_gx(channels_, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) {
        const double g = grad_y[r * channels_ + c];
        sum_g[c] += g;
        sum_gx[c] += g * xhat[r * channels_ + c];
      }
    for (std::size_t c = 0; c < channels_; ++c) {
      grad_beta_[c] += static_cast<float>(sum_g[c]);
      grad_gamma_[c] += static_cast<float>(sum_gx[c]);
    }
    // dx = gamma * invstd / M * (M * g - sum(g) - xhat * sum(g * xhat))
    Tensor dx(grad_y.shape());
    const double m = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t i = r * channels_ + c;
        const double k = gamma_[c] * cache_->inv_std[c] / m;
        dx[i] = static_cast<float>(k * (m * grad_y[i] - sum_g[c] - xhat[i] * sum_gx[c]));
      }
    return dx;
  }

  std::vector<ParamRef> params() override {
    return {{name() + ".gamma", &gamma_, &grad_gamma_},
            {name() + ".beta", &beta_, &grad_beta_},
            {name() + ".running_mean", &running_mean_, nullptr},
            {name() + ".running_var", &running_var_, nullptr}};
  }
  std::size_t parameter_count() const override { return 4 * channels_; }

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  const Tensor& grad_gamma() const { return grad_gamma_; }
  const Tensor& grad_beta() const { return grad_beta_; }
  float epsilon() const { return epsilon_; }
  float momentum() const { return momentum_; }

 protected:
  Tensor train_forward(const Tensor& x) override {
    check_input(x);
    const std::size_t rows = x.size() / channels_;
    if (rows < 2)
      throw DimensionError(name() + ": training needs at least 2 values per channel, got " +
                           std::to_string(rows));
    std::vector<double> mean(channels_, 0.0), var(channels_, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) mean[c] += x[r * channels_ + c];
    for (auto& v : mean) v /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) {
        const double d = x[r * channels_ + c] - mean[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(rows);

    Cache cache{Tensor(x.shape()), std::vector<double>(channels_)};
    for (std::size_t c = 0; c < channels_; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon_);
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t i = r * channels_ + c;
        const float xh = static_cast<float>((x[i] - mean[c]) * cache.inv_std[c]);
        cache.xhat[i] = xh;
        y[i] = gamma_[c] * xh + beta_[c];
      }
    for (std::size_t c = 0; c < channels_; ++c) {
      running_mean_[c] = static_cast<float>(momentum_ * running_mean_[c] + (1.0 - momentum_) * mean[c]);
      running_var_[c] = static_cast<float>(momentum_ * running_var_[c] + (1.0 - momentum_) * var[c]);
    }
    cache_ = std::move(cache);
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
  };

  void check_input(const Tensor& x) const {
    if (x.rank() < 2 || x.dim(x.rank() - 1) != channels_)
      throw DimensionError(name() + ": expected " + std::to_string(channels_) +
                           " channels on the last axis, got " + x.shape().to_string());
  }

  std::size_t channels_;
  float momentum_, epsilon_;
  Tensor gamma_, beta_, running_mean_, running_var_, grad_gamma_, grad_beta_;
  std::optional<Cache> cache_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: in train mode each element survives with probability
/// 1 - rate and survivors are scaled by 1 / (1 - rate). Infer mode is the
/// identity.
class Dropout : public Layer {
 public:
  Dropout(std::string name, float rate, Rng rng) : Layer(std::move(name)), rate_(rate), rng_(rng) {
    if (!(rate_ >= 0.0f && rate_ < 1.0f))
      throw std::invalid_argument(this->name() + ": dropout rate must be in [0, 1)");
  }

  std::string kind() const override { return "dropout"; }
  std::string descriptor() const override { return "dropout rate=" + detail::format_float(rate_); }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor infer(const Tensor& x) const override { return x; }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->shape());
    return mul(grad_y, *cache_);
  }

  float rate() const { return rate_; }
  /// Restarts the mask stream, e.g. to replay an identical mask.
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  /// Per-element multiplier of the last train-mode forward: 0 or 1/(1-rate).
  const std::optional<Tensor>& mask() const { return cache_; }

 protected:
  Tensor train_forward(const Tensor& x) override {
    Tensor mask(x.shape(), 1.0f);
    if (rate_ > 0.0f) {
      const float keep_scale = 1.0f / (1.0f - rate_);
      const double keep = 1.0 - rate_;
      for (auto& m : mask.data()) m = rng_.bernoulli(keep) ? keep_scale : 0.0f;
    }
    Tensor y = mul(x, mask);
    cache_ = std::move(mask);
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  float rate_;
  Rng rng_;
  std::optional<Tensor> cache_;
};

// ---------------------------------------------------------------------------

/// Fully connected layer: y = x W + b, W is [in, out].
class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Activation act, Rng& rng)
      : Layer(std::move(name)),
        in_(in),
        out_(out),
        act_(act),
        weights_(he_uniform(rng, Shape{in, out}, in)),
        bias_(Shape{out}),
        grad_w_(weights_.shape()),
        grad_b_(bias_.shape()) {}

  std::string kind() const override { return "dense"; }
  std::string descriptor() const override {
    return "dense in=" + std::to_string(in_) + " out=" + std::to_string(out_) +
           " act=" + detail::activation_name(act_);
  }

  Shape output_shape(const Shape& in) const override {
    if (in.rank() != 1 || in[0] != in_)
      throw DimensionError(name() + ": expected [" + std::to_string(in_) + "] input, got " +
                           in.to_string());
    return Shape{out_};
  }

  Tensor infer(const Tensor& x) const override {
    check_input(x);
    return finish(matmul(x, weights_));
  }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->output.shape());
    const Tensor g = act_ == Activation::relu ? relu_backward(grad_y, cache_->output) : grad_y;
    add_inplace(grad_w_, matmul_tn(cache_->input, g));
    const std::size_t rows = g.dim(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_; ++j) grad_b_[j] += g[r * out_ + j];
    return matmul_nt(g, weights_);
  }

  std::vector<ParamRef> params() override {
    return {{name() + ".weight", &weights_, &grad_w_}, {name() + ".bias", &bias_, &grad_b_}};
  }
  std::size_t parameter_count() const override { return weights_.size() + bias_.size(); }

  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }
  const Tensor& grad_weights() const { return grad_w_; }
  const Tensor& grad_bias() const { return grad_b_; }

 protected:
  Tensor train_forward(const Tensor& x) override {
    check_input(x);
    Tensor y = finish(matmul(x, weights_));
    cache_ = Cache{x, y};
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  struct Cache {
    Tensor input;
    Tensor output;
  };

  void check_input(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw DimensionError(name() + ": expected [N," + std::to_string(in_) + "] input, got " +
                           x.shape().to_string());
  }

  Tensor finish(Tensor y) const {
    const std::size_t rows = y.dim(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_; ++j) {
        float v = y[r * out_ + j] + bias_[j];
        if (act_ == Activation::relu && !(v > 0.0f)) v = 0.0f;
        y[r * out_ + j] = v;
      }
    return y;
  }

  std::size_t in_, out_;
  Activation act_;
  Tensor weights_, bias_, grad_w_, grad_b_;
  std::optional<Cache> cache_;
};

// ---------------------------------------------------------------------------

/// Standalone ReLU or softmax layer.
class ActivationLayer : public Layer {
 public:
  enum class Kind { relu, softmax };

  ActivationLayer(std::string name, Kind kind) : Layer(std::move(name)), kind_(kind) {}

  std::string kind() const override { return kind_ == Kind::relu ? "relu" : "softmax"; }
  std::string descriptor() const override { return kind(); }
  Kind activation() const { return kind_; }

  Shape output_shape(const Shape& in) const override {
    if (kind_ == Kind::softmax && in.rank() != 1)
      throw DimensionError(name() + ": softmax expects a flat [K] input, got " + in.to_string());
    return in;
  }

  Tensor infer(const Tensor& x) const override {
    return kind_ == Kind::relu ? relu(x) : softmax(x);
  }

  Tensor backward(const Tensor& grad_y) override {
    if (!cache_) missing_cache();
    check_grad_shape(grad_y, cache_->shape());
    return kind_ == Kind::relu ? relu_backward(grad_y, *cache_) : softmax_backward(grad_y, *cache_);
  }

 protected:
  Tensor train_forward(const Tensor& x) override {
    Tensor y = infer(x);
    cache_ = y;
    return y;
  }
  void clear_cache() override { cache_.reset(); }

 private:
  Kind kind_;
  std::optional<Tensor> cache_;
};

// ---------------------------------------------------------------------------

/// [N, ...] -> [N, P]; backward restores the cached input shape.
class Flatten : public Layer {
 public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}

  std::string kind() const override { return "flatten"; }
  std::string descriptor() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return Shape{in.count()}; }

  Tensor infer(const Tensor& x) const override {
    return x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)});
  }

  Tensor backward(const Tensor& grad_y) override {
    if (!input_shape_) missing_cache();
    return grad_y.reshaped(*input_shape_);
  }

 protected:
  Tensor train_forward(const Tensor& x) override {
    input_shape_ = x.shape();
    return infer(x);
  }
  void clear_cache() override { input_shape_.reset(); }

 private:
  std::optional<Shape> input_shape_;
};

}  // namespace microcnn
