#pragma once

// Test-only reference implementations. Nothing here calls into the layer
// kernels it is used to check.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "microcnn/image.hpp"
#include "microcnn/rng.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn::testing {

/// y[n,i,j,co] = b[co] + sum_{a,b,ci} x[n, i*s+a, j*s+b, ci] * w[a,b,ci,co]
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t KH = w.dim(0), KW = w.dim(1), CO = w.dim(3);
  const std::size_t OH = (H - KH) / stride + 1, OW = (W - KW) / stride + 1;
  Tensor y(Shape{N, OH, OW, CO});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t co = 0; co < CO; ++co) {
          double acc = bias[co];
          for (std::size_t a = 0; a < KH; ++a)
            for (std::size_t b = 0; b < KW; ++b)
              for (std::size_t ci = 0; ci < C; ++ci)
                acc += double(x.at({n, i * stride + a, j * stride + b, ci})) * w.at({a, b, ci, co});
          y.at({n, i, j, co}) = static_cast<float>(acc);
        }
  return y;
}

/// Window scan; first maximum in row-major window order wins.
inline Tensor naive_maxpool(const Tensor& x, std::size_t size) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor y(Shape{N, H / size, W / size, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H / size; ++i)
      for (std::size_t j = 0; j < W / size; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          float best = x.at({n, i * size, j * size, c});
          for (std::size_t a = 0; a < size; ++a)
            for (std::size_t b = 0; b < size; ++b) best = std::max(best, x.at({n, i * size + a, j * size + b, c}));
          y.at({n, i, j, c}) = best;
        }
  return y;
}

/// Scalar Adam recurrence with double moments. The parameter is rounded to
/// float after every step, matching float32 parameter storage.
inline std::vector<float> scalar_adam(float start, const std::vector<double>& grads, double lr = 0.001,
                                      double b1 = 0.9, double b2 = 0.999, double eps = 1e-7) {
  std::vector<float> trace;
  double m = 0, v = 0;
  float p = start;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, double(t)));
    double vh = v / (1 - std::pow(b2, double(t)));
    p = static_cast<float>(p - lr * mh / (std::sqrt(vh) + eps));
    trace.push_back(p);
  }
  return trace;
}

/// <y, r> accumulated in double; the scalar probe used by finite differences.
inline double probe(const Tensor& y, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += double(y[i]) * r[i];
  return acc;
}

/// Central differences of `loss()` with respect to every element of `x`.
/// The divisor is the perturbation actually realised in float.
inline Tensor numeric_gradient(Tensor& x, const std::function<double()>& loss, float step = 1e-2f) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    const float up = orig + step, down = orig - step;
    x[i] = up;
    const double lp = loss();
    x[i] = down;
    const double lm = loss();
    x[i] = orig;
    g[i] = static_cast<float>((lp - lm) / (double(up) - double(down)));
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-2) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  return worst;
}

/// Self-deleting scratch directory.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("microcnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline RgbImage uniform_noise_image(Rng& rng, std::size_t h, std::size_t w, int lo, int hi) {
  RgbImage img{h, w, std::vector<std::uint8_t>(h * w * 3)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(lo + static_cast<int>(rng.below(std::uint64_t(hi - lo + 1))));
  return img;
}

/// Two-folder PNG dataset: `per_class` dark images (pixels 0..80) under
/// "a_dark" and bright ones (175..255) under "b_bright", with sizes between
/// 56 and 72 so loading exercises the resize path.
inline void write_separable_dataset(const std::filesystem::path& root, std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  const char* dirs[2] = {"a_dark", "b_bright"};
  for (int c = 0; c < 2; ++c) {
    std::filesystem::create_directories(root / dirs[c]);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t h = 56 + rng.below(17), w = 56 + rng.below(17);
      const RgbImage img = c == 0 ? uniform_noise_image(rng, h, w, 0, 80) : uniform_noise_image(rng, h, w, 175, 255);
      char name[32];
      std::snprintf(name, sizeof name, "img_%04zu.png", i);
      write_png(root / dirs[c] / name, img);
    }
  }
}

}  // namespace microcnn::testing
