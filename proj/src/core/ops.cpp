#include "clb/core/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace clb {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
void check_finite_impl(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value in " + what + " at index " + std::to_string(i));
    }
  }
}

}  // namespace

void check_finite(std::span<const float> values, const std::string& what) {
  check_finite_impl(values, what);
}
void check_finite(std::span<const double> values, const std::string& what) {
  check_finite_impl(values, what);
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

/// Sum of term(0..n-1) in an order that depends only on n. Eigen's own
/// reductions peel by pointer alignment, which changes rounding from one
/// allocation to the next.
template <typename T, typename F>
T ordered_sum(std::size_t n, F term) {
  constexpr std::size_t kLanes = 8;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
  }
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
T ordered_sum(const T* p, std::size_t n) {
  return ordered_sum<T>(n, [p](std::size_t i) { return p[i]; });
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void record(Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->record(out, std::move(fn));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

// Unary elementwise op with derivative expressed through (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  {
    const T* __restrict in = a.values().data();
    T* __restrict o = out.values().data();
    for (std::size_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
  }
  if (recording<T>({&a})) {
    record(out, [a, out, deriv, n]() {
      const T* __restrict g = out.grad().data();
      T* __restrict ga = a.grad().data();
      const T* __restrict x = a.values().data();
      const T* __restrict y = out.values().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
  }
  return out;
}

// Unary op whose derivative is 1 where `pass(x)` holds and 0 elsewhere.
template <typename T, typename Fwd, typename Pass>
Tensor<T> gated_unary(const Tensor<T>& a, Fwd fwd, Pass pass) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  {
    const T* __restrict in = a.values().data();
    T* __restrict o = out.values().data();
    for (std::size_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
  }
  if (recording<T>({&a})) {
    record(out, [a, out, pass, n]() {
      const T* __restrict g = out.grad().data();
      T* __restrict ga = a.grad().data();
      const T* __restrict x = a.values().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        ga[i] += pass(x[i]) ? gi : T(0);
      }
    });
  }
  return out;
}

// C[N,M] = A[N,D] * B[D,M], all row-major. Every output cell accumulates its
// products in ascending k from zero, so a row's result does not depend on
// which other rows share the batch.
template <typename T, std::size_t R, std::size_t J>
void gemm_tile(const T* A, const T* B, T* C, std::size_t i0, std::size_t rn, std::size_t j0,
               std::size_t jn, std::size_t D, std::size_t M) {
  T acc[R][J] = {};
  for (std::size_t k = 0; k < D; ++k) {
    const T* __restrict b = B + k * M + j0;
    for (std::size_t r = 0; r < rn; ++r) {
      const T a = A[(i0 + r) * D + k];
      for (std::size_t j = 0; j < jn; ++j) acc[r][j] += a * b[j];
    }
  }
  for (std::size_t r = 0; r < rn; ++r) {
    for (std::size_t j = 0; j < jn; ++j) C[(i0 + r) * M + j0 + j] = acc[r][j];
  }
}

template <typename T>
void gemm_fixed_order(const T* A, const T* B, T* C, std::size_t N, std::size_t D, std::size_t M) {
  constexpr std::size_t R = 4, J = 128 / sizeof(T);
  for (std::size_t j0 = 0; j0 < M; j0 += J) {
    const std::size_t jn = std::min(J, M - j0);
    for (std::size_t i0 = 0; i0 < N; i0 += R) {
      const std::size_t rn = std::min(R, N - i0);
      if (rn == R && jn == J) {
        gemm_tile<T, R, J>(A, B, C, i0, R, j0, J, D, M);
      } else {
        gemm_tile<T, R, J>(A, B, C, i0, rn, j0, jn, D, M);
      }
    }
  }
}

std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }

}  // namespace

ClassMask expand_mask(const ClassMask& mask, std::size_t rows, std::size_t classes) {
  if (mask.empty()) return ClassMask(rows * classes, 1);
  if (mask.size() == rows * classes) return mask;
  if (mask.size() != classes) {
    throw ShapeError("mask: expected " + std::to_string(classes) + " or " +
                     std::to_string(rows * classes) + " entries, got " +
                     std::to_string(mask.size()));
  }
  ClassMask out(rows * classes);
  for (std::size_t n = 0; n < rows; ++n) {
    std::copy(mask.begin(), mask.end(), out.begin() + static_cast<std::ptrdiff_t>(n * classes));
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  if (recording<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  if (recording<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  if (recording<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        // Split by sign so exp never overflows.
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return gated_unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return gated_unary(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x) { return (x >= lo) & (x <= hi); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  // Blocked so float partial sums stay short; blocks accumulate in double.
  constexpr std::size_t kBlock = 1024;
  double acc = 0.0;
  const T* p = a.values().data();
  for (std::size_t i = 0; i < a.numel(); i += kBlock) {
    acc += static_cast<double>(ordered_sum(p + i, std::min(kBlock, a.numel() - i)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (recording<T>({&a})) {
    record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (T& ga : a.grad()) ga += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  Tensor<T> out(std::move(shape), a.buffer());
  if (recording<T>({&a})) {
    record(out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank()) throw ShapeError("concat_rows: rank mismatch");
  for (std::size_t d = 1; d < a.rank(); ++d) {
    if (a.dim(d) != b.dim(d)) {
      throw ShapeError("concat_rows: axis " + std::to_string(d) + " differs: " +
                       shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> values;
  values.reserve(a.numel() + b.numel());
  values.insert(values.end(), a.buffer().begin(), a.buffer().end());
  values.insert(values.end(), b.buffer().begin(), b.buffer().end());
  Tensor<T> out(std::move(shape), std::move(values));
  if (recording<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const std::size_t off = a.numel();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
  return Tensor<T>(a.shape(), a.buffer());
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_to_string(input.shape()));
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be [K,C,kh,kw], got " + shape_to_string(kernels.shape()));
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), height = input.dim(2),
                    width = input.dim(3);
  const std::size_t n_kernels = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != channels) {
    throw ShapeError("conv2d: channel axis (1) mismatch: input has " + std::to_string(channels) +
                     ", kernels expect " + std::to_string(kernels.dim(1)));
  }
  if (height < kh) throw ShapeError("conv2d: height axis (2) " + std::to_string(height) + " smaller than kernel " + std::to_string(kh));
  if (width < kw) throw ShapeError("conv2d: width axis (3) " + std::to_string(width) + " smaller than kernel " + std::to_string(kw));
  if (bias.numel() != n_kernels) {
    throw ShapeError("conv2d: bias axis (0) has " + std::to_string(bias.numel()) + " entries for " +
                     std::to_string(n_kernels) + " kernels");
  }
  const std::size_t out_h = height - kh + 1, out_w = width - kw + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t patch = channels * kh * kw;

  // Per-image patch matrices: cols[n][(c,ky,kx), oy*out_w + ox] = x[n, c, oy+ky, ox+kx].
  // Each image then goes through an identically shaped GEMM, so its output
  // does not depend on its position in the batch.
  const std::size_t image_cols = patch * plane;
  auto cols = std::make_shared<std::vector<T>>(n_batch * image_cols);
  const T* x = input.values().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* img = cols->data() + n * image_cols;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* row = img + ((c * kh + ky) * kw + kx) * plane;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T* src = x + ((n * channels + c) * height + oy + ky) * width + kx;
            std::memcpy(row + oy * out_w, src, out_w * sizeof(T));
          }
        }
      }
    }
  }

  Tensor<T> out(Shape{n_batch, n_kernels, out_h, out_w});
  T* o = out.values().data();
  const CMapR<T> wmat(kernels.values().data(), n_kernels, patch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    MapR<T> y(o + n * n_kernels * plane, n_kernels, plane);
    y.noalias() = wmat * CMapR<T>(cols->data() + n * image_cols, patch, plane);
    for (std::size_t k = 0; k < n_kernels; ++k) {
      const T b = bias[k];
      T* dst = o + (n * n_kernels + k) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] += b;
    }
  }

  if (recording<T>({&input, &kernels, &bias})) {
    if (!kernels.requires_grad()) cols.reset();
    record(out, [=]() mutable {
      const T* g = out.grad().data();
      const std::size_t image_out = n_kernels * plane;
      if (kernels.requires_grad()) {
        MapR<T> dw(kernels.grad().data(), n_kernels, patch);
        for (std::size_t n = 0; n < n_batch; ++n) {
          dw.noalias() += CMapR<T>(g + n * image_out, n_kernels, plane) *
                          CMapR<T>(cols->data() + n * image_cols, patch, plane).transpose();
        }
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t k = 0; k < n_kernels; ++k) {
            gb[k] += ordered_sum(g + n * image_out + k * plane, plane);
          }
        }
      }
      if (input.requires_grad()) {
        MatR<T> dcols(patch, plane);
        const CMapR<T> wm(kernels.values().data(), n_kernels, patch);
        T* gx = input.grad().data();
        for (std::size_t n = 0; n < n_batch; ++n) {
          dcols.noalias() = wm.transpose() * CMapR<T>(g + n * image_out, n_kernels, plane);
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const T* row = dcols.data() + ((c * kh + ky) * kw + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                  T* __restrict dst = gx + ((n * channels + c) * height + oy + ky) * width + kx;
                  const T* __restrict src = row + oy * out_w;
                  for (std::size_t ox = 0; ox < out_w; ++ox) dst[ox] += src[ox];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: input must be [N,C,H,W], got " + shape_to_string(input.shape()));
  if (window == 0) throw ArgumentError("maxpool2d: window must be positive");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), height = input.dim(2),
                    width = input.dim(3);
  const std::size_t out_h = height / window, out_w = width / window;
  if (out_h == 0 || out_w == 0) throw ShapeError("maxpool2d: input " + shape_to_string(input.shape()) + " smaller than window");
  Tensor<T> out(Shape{n_batch, channels, out_h, out_w});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const T* x = input.values().data();
  T* o = out.values().data();
  std::size_t idx = 0;
  for (std::size_t nc = 0; nc < n_batch * channels; ++nc) {
    const T* plane = x + nc * height * width;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox, ++idx) {
        std::size_t best = (oy * window) * width + ox * window;
        T best_v = plane[best];
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t at = (oy * window + dy) * width + ox * window + dx;
            if (plane[at] > best_v) {
              best_v = plane[at];
              best = at;
            }
          }
        }
        o[idx] = best_v;
        (*argmax)[idx] = static_cast<std::uint32_t>(nc * height * width + best);
      }
    }
  }
  if (recording<T>({&input})) {
    record(out, [input, out, argmax]() mutable {
      auto g = out.grad();
      auto gx = input.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw ShapeError("batchnorm: input must be [N,F] or [N,C,H,W], got " + shape_to_string(input.shape()));
  }
  const std::size_t n_batch = input.dim(0), features = input.dim(1);
  const std::size_t spatial = input.numel() / (n_batch * features);
  if (gamma.numel() != features || beta.numel() != features ||
      stats.running_mean.size() != features || stats.running_var.size() != features) {
    throw ShapeError("batchnorm: feature axis (1) has " + std::to_string(features) +
                     " entries but parameters hold " + std::to_string(gamma.numel()));
  }
  if (mode == Mode::Train && n_batch < 2) {
    throw ArgumentError("batchnorm: train mode needs a batch of at least 2, got " +
                        std::to_string(n_batch));
  }
  const std::size_t count = n_batch * spatial;
  auto mean_v = std::make_shared<std::vector<T>>(features);
  auto inv_std = std::make_shared<std::vector<T>>(features);
  const T* x = input.values().data();
  if (mode == Mode::Train) {
    for (std::size_t f = 0; f < features; ++f) {
      double s = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        s += static_cast<double>(ordered_sum(x + (n * features + f) * spatial, spatial));
      }
      const double mu = s / static_cast<double>(count);
      const T mu_t = static_cast<T>(mu);
      double s2 = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* xf = x + (n * features + f) * spatial;
        s2 += static_cast<double>(ordered_sum<T>(spatial, [xf, mu_t](std::size_t i) {
          const T d = xf[i] - mu_t;
          return d * d;
        }));
      }
      const double var = s2 / static_cast<double>(count);
      (*mean_v)[f] = mu_t;
      (*inv_std)[f] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(stats.eps)));
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      stats.running_mean[f] = static_cast<T>((1.0 - stats.momentum) * stats.running_mean[f] + stats.momentum * mu);
      stats.running_var[f] = static_cast<T>((1.0 - stats.momentum) * stats.running_var[f] + stats.momentum * unbiased);
    }
  } else {
    for (std::size_t f = 0; f < features; ++f) {
      (*mean_v)[f] = stats.running_mean[f];
      (*inv_std)[f] = T(1) / std::sqrt(stats.running_var[f] + stats.eps);
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  Tensor<T> out(input.shape());
  T* o = out.values().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t base = (n * features + f) * spatial;
      const T mu = (*mean_v)[f], is = (*inv_std)[f], g = gamma[f], b = beta[f];
      const T* __restrict src = x + base;
      T* __restrict h = xhat->data() + base;
      T* __restrict dst = o + base;
      for (std::size_t i = 0; i < spatial; ++i) {
        h[i] = (src[i] - mu) * is;
        dst[i] = g * h[i] + b;
      }
    }
  }
  if (recording<T>({&input, &gamma, &beta})) {
    record(out, [=]() mutable {
      const T* gout = out.grad().data();
      std::vector<double> sum_dy(features, 0.0), sum_dy_xhat(features, 0.0);
      for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t f = 0; f < features; ++f) {
          const std::size_t base = (n * features + f) * spatial;
          const T* g = gout + base;
          const T* h = xhat->data() + base;
          sum_dy[f] += static_cast<double>(ordered_sum(g, spatial));
          sum_dy_xhat[f] += static_cast<double>(ordered_sum<T>(spatial, [g, h](std::size_t i) { return g[i] * h[i]; }));
        }
      }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad();
        for (std::size_t f = 0; f < features; ++f) gg[f] += static_cast<T>(sum_dy_xhat[f]);
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad();
        for (std::size_t f = 0; f < features; ++f) gb[f] += static_cast<T>(sum_dy[f]);
      }
      if (!input.requires_grad()) return;
      T* gx_all = input.grad().data();
      const double m = static_cast<double>(count);
      for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t f = 0; f < features; ++f) {
          const std::size_t base = (n * features + f) * spatial;
          const T k = gamma[f] * (*inv_std)[f];
          const T* __restrict g = gout + base;
          const T* __restrict h = xhat->data() + base;
          T* __restrict gx = gx_all + base;
          if (mode == Mode::Train) {
            const T a = static_cast<T>(sum_dy[f] / m), b = static_cast<T>(sum_dy_xhat[f] / m);
            for (std::size_t i = 0; i < spatial; ++i) gx[i] += k * (g[i] - a - h[i] * b);
          } else {
            for (std::size_t i = 0; i < spatial; ++i) gx[i] += k * g[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2) throw ShapeError("dense: input must be [N,D], got " + shape_to_string(input.shape()));
  if (weight.rank() != 2) throw ShapeError("dense: weight must be [D,M], got " + shape_to_string(weight.shape()));
  const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  if (weight.dim(0) != d) {
    throw ShapeError("dense: inner axis mismatch: input axis 1 has " + std::to_string(d) +
                     ", weight axis 0 has " + std::to_string(weight.dim(0)));
  }
  if (bias.numel() != m) {
    throw ShapeError("dense: bias has " + std::to_string(bias.numel()) + " entries, output axis 1 has " + std::to_string(m));
  }
  Tensor<T> out(Shape{n, m});
  gemm_fixed_order(input.values().data(), weight.values().data(), out.values().data(), n, d, m);
  for (std::size_t r = 0; r < n; ++r) {
    T* row = out.values().data() + r * m;
    for (std::size_t c = 0; c < m; ++c) row[c] += bias[c];
  }
  if (recording<T>({&input, &weight, &bias})) {
    record(out, [=]() mutable {
      CMapR<T> dy(out.grad().data(), n, m);
      if (weight.requires_grad()) {
        MapR<T>(weight.grad().data(), d, m).noalias() +=
            CMapR<T>(input.values().data(), n, d).transpose() * dy;
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        const T* dyp = out.grad().data();
        for (std::size_t c = 0; c < m; ++c) {
          gb[c] += ordered_sum<T>(n, [dyp, c, m](std::size_t r) { return dyp[r * m + c]; });
        }
      }
      if (input.requires_grad()) {
        MapR<T>(input.grad().data(), n, d).noalias() +=
            dy * CMapR<T>(weight.values().data(), d, m).transpose();
      }
    });
  }
  return out;
}

namespace {

void require_temperature(double t, const char* op) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ArgumentError(std::string(op) + ": temperature must be positive, got " + std::to_string(t));
  }
}

void require_mask_rows(const ClassMask& full, std::size_t rows, std::size_t classes, const char* op) {
  for (std::size_t n = 0; n < rows; ++n) {
    bool any = false;
    for (std::size_t c = 0; c < classes; ++c) any = any || full[n * classes + c];
    if (!any) throw ArgumentError(std::string(op) + ": mask selects no class in row " + std::to_string(n));
  }
}

// Row-wise softmax of z/T over unmasked entries into p (masked entries 0).
template <typename T>
void masked_softmax_rows(const T* z, const std::uint8_t* mask, std::size_t rows,
                         std::size_t classes, double temperature, T* p) {
  for (std::size_t n = 0; n < rows; ++n) {
    const T* zr = z + n * classes;
    const std::uint8_t* mr = mask + n * classes;
    T* pr = p + n * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      if (mr[c]) mx = std::max(mx, static_cast<double>(zr[c]) / temperature);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (mr[c]) {
        const double e = std::exp(static_cast<double>(zr[c]) / temperature - mx);
        pr[c] = static_cast<T>(e);
        total += e;
      } else {
        pr[c] = T(0);
      }
    }
    for (std::size_t c = 0; c < classes; ++c) pr[c] = static_cast<T>(static_cast<double>(pr[c]) / total);
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_with_temperature(const Tensor<T>& logits, T temperature, const ClassMask& mask) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits must be [N,C], got " + shape_to_string(logits.shape()));
  require_temperature(static_cast<double>(temperature), "softmax");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  ClassMask full = expand_mask(mask, rows, classes);
  require_mask_rows(full, rows, classes, "softmax");
  Tensor<T> out(logits.shape());
  masked_softmax_rows(logits.values().data(), full.data(), rows, classes,
                      static_cast<double>(temperature), out.values().data());
  if (recording<T>({&logits})) {
    record(out, [logits, out, temperature, rows, classes]() mutable {
      auto g = out.grad();
      auto p = out.values();
      auto gz = logits.grad();
      for (std::size_t n = 0; n < rows; ++n) {
        double dot = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
          dot += static_cast<double>(g[n * classes + c]) * static_cast<double>(p[n * classes + c]);
        }
        for (std::size_t c = 0; c < classes; ++c) {
          const std::size_t i = n * classes + c;
          gz[i] += static_cast<T>(static_cast<double>(p[i]) *
                                  (static_cast<double>(g[i]) - dot) / static_cast<double>(temperature));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets) {
  require_same_shape(probabilities.shape(), targets.shape(), "cross_entropy");
  if (probabilities.rank() != 2) throw ShapeError("cross_entropy: expected [N,C]");
  const std::size_t rows = probabilities.dim(0), classes = probabilities.dim(1);
  static constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double ps = 0.0, ts = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = static_cast<double>(probabilities[n * classes + c]);
      const double t = static_cast<double>(targets[n * classes + c]);
      if (p < 0.0) throw ArgumentError("cross_entropy: negative probability in row " + std::to_string(n));
      ps += p;
      ts += t;
      if (t != 0.0) total -= t * std::log(std::max(p, kFloor));
    }
    if (std::abs(ps - 1.0) > 1e-5) throw ArgumentError("cross_entropy: probability row " + std::to_string(n) + " sums to " + std::to_string(ps));
    if (std::abs(ts - 1.0) > 1e-5) throw ArgumentError("cross_entropy: target row " + std::to_string(n) + " sums to " + std::to_string(ts));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(rows)));
  if (recording<T>({&probabilities})) {
    record(out, [probabilities, targets, out, rows]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(rows);
      auto gp = probabilities.grad();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const double p = static_cast<double>(probabilities[i]);
        if (p >= kFloor) gp[i] += static_cast<T>(-g * static_cast<double>(targets[i]) / p);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const T> targets,
                                const ClassMask& mask, std::span<const T> row_weights,
                                SoftmaxLossOptions options) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,C], got " + shape_to_string(logits.shape()));
  require_temperature(options.temperature, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != rows * classes) throw ShapeError("softmax_cross_entropy: targets size mismatch");
  if (!row_weights.empty() && row_weights.size() != rows) throw ShapeError("softmax_cross_entropy: row weight count mismatch");
  ClassMask full = expand_mask(mask, rows, classes);
  require_mask_rows(full, rows, classes, "softmax_cross_entropy");
  const double temp = options.temperature;
  auto weights = std::make_shared<std::vector<double>>(rows, 1.0 / static_cast<double>(rows));
  if (!row_weights.empty()) {
    for (std::size_t n = 0; n < rows; ++n) (*weights)[n] = static_cast<double>(row_weights[n]);
  }
  auto probs = std::make_shared<std::vector<T>>(rows * classes);
  const T* z = logits.values().data();
  masked_softmax_rows(z, full.data(), rows, classes, temp, probs->data());
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      if (full[n * classes + c]) mx = std::max(mx, static_cast<double>(z[n * classes + c]) / temp);
    }
    double lse = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (full[n * classes + c]) lse += std::exp(static_cast<double>(z[n * classes + c]) / temp - mx);
    }
    lse = std::log(lse) + mx;
    double row = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double t = static_cast<double>(targets[n * classes + c]);
      if (t == 0.0) continue;
      if (!full[n * classes + c]) {
        throw ArgumentError("softmax_cross_entropy: target mass on masked class " + std::to_string(c));
      }
      row -= t * (static_cast<double>(z[n * classes + c]) / temp - lse);
    }
    total += (*weights)[n] * row;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(options.scale * total));
  if (recording<T>({&logits})) {
    auto tgt = std::make_shared<std::vector<T>>(targets.begin(), targets.end());
    record(out, [=]() mutable {
      const double g = static_cast<double>(out.grad()[0]) * options.scale / temp;
      auto gz = logits.grad();
      for (std::size_t n = 0; n < rows; ++n) {
        double tsum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) tsum += static_cast<double>((*tgt)[n * classes + c]);
        const double w = g * (*weights)[n];
        for (std::size_t c = 0; c < classes; ++c) {
          const std::size_t i = n * classes + c;
          if (!full[i]) continue;
          gz[i] += static_cast<T>(w * (static_cast<double>((*probs)[i]) * tsum - static_cast<double>((*tgt)[i])));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets) {
  require_same_shape(probabilities.shape(), targets.shape(), "binary_cross_entropy");
  const std::size_t rows = rows_of(probabilities.shape());
  static constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.numel(); ++i) {
    const double p = static_cast<double>(probabilities[i]);
    const double t = static_cast<double>(targets[i]);
    if (p < 0.0 || p > 1.0) throw ArgumentError("binary_cross_entropy: probability outside [0,1] at " + std::to_string(i));
    if (t < 0.0 || t > 1.0) throw ArgumentError("binary_cross_entropy: target outside [0,1] at " + std::to_string(i));
    if (t != 0.0) total -= t * std::log(std::max(p, kFloor));
    if (t != 1.0) total -= (1.0 - t) * std::log(std::max(1.0 - p, kFloor));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(rows)));
  if (recording<T>({&probabilities})) {
    record(out, [probabilities, targets, out, rows]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(rows);
      auto gp = probabilities.grad();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const double p = static_cast<double>(probabilities[i]);
        const double t = static_cast<double>(targets[i]);
        double d = 0.0;
        if (t != 0.0) d -= t / std::max(p, kFloor);
        if (t != 1.0) d += (1.0 - t) / std::max(1.0 - p, kFloor);
        gp[i] += static_cast<T>(g * d);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same_shape(mu.shape(), logvar.shape(), "gaussian_kl");
  const std::size_t rows = rows_of(mu.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    const double m = static_cast<double>(mu[i]);
    const double lv = static_cast<double>(logvar[i]);
    total += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(rows)));
  if (recording<T>({&mu, &logvar})) {
    record(out, [mu, logvar, out, rows]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(rows);
      if (mu.requires_grad()) {
        auto gm = mu.grad();
        for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += static_cast<T>(g * static_cast<double>(mu[i]));
      }
      if (logvar.requires_grad()) {
        auto gl = logvar.grad();
        for (std::size_t i = 0; i < gl.size(); ++i) {
          gl[i] += static_cast<T>(g * 0.5 * (std::exp(static_cast<double>(logvar[i])) - 1.0));
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits, const ClassMask& mask) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [N,C]");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  ClassMask full = expand_mask(mask, rows, classes);
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t n = 0; n < rows; ++n) {
    bool found = false;
    T best{};
    for (std::size_t c = 0; c < classes; ++c) {
      if (!full[n * classes + c]) continue;
      const T v = logits[n * classes + c];
      if (!found || v > best) {
        best = v;
        out[n] = c;
        found = true;
      }
    }
    if (!found) throw ArgumentError("argmax_rows: mask selects no class in row " + std::to_string(n));
  }
  return out;
}

#define CLB_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> detach(const Tensor<T>&);                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               BatchNormStats<T>&, Mode);                                       \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax_with_temperature(const Tensor<T>&, T, const ClassMask&);           \
  template Tensor<T> cross_entropy(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const T>,                \
                                           const ClassMask&, std::span<const T>,                \
                                           SoftmaxLossOptions);                                 \
  template Tensor<T> binary_cross_entropy(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> gaussian_kl(const Tensor<T>&, const Tensor<T>&);                           \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&, const ClassMask&);

CLB_INSTANTIATE_OPS(float)
CLB_INSTANTIATE_OPS(double)

}  // namespace clb
