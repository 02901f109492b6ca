#include "dfi/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <utility>

#include "gemm.hpp"

namespace dfi {

void set_compute_threads(int threads) { detail::set_blas_threads(threads < 1 ? 1 : threads); }

namespace fault {
namespace {
std::atomic<bool> flip_conv{false};
}
void set_flip_conv_gradient(bool on) { flip_conv.store(on); }
bool flip_conv_gradient() { return flip_conv.load(std::memory_order_relaxed); }
}  // namespace fault

namespace {

// Scratch for im2col columns, reused across calls on the same thread.
template <typename T>
T* workspace(std::size_t count) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < count) buffer.resize(count);
  return buffer.data();
}

struct ConvGeometry {
  long in_c, in_h, in_w;
  long kh, kw;
  long out_h, out_w;
  long stride, pad;

  long rows() const { return in_c * kh * kw; }
  long cols() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry geometry(const Shape& input, const Shape& output,
                      const ConvParams<T>& p) {
  return {static_cast<long>(input.c),      static_cast<long>(input.h),
          static_cast<long>(input.w),      static_cast<long>(p.kernel_h()),
          static_cast<long>(p.kernel_w()), static_cast<long>(output.h),
          static_cast<long>(output.w),     p.stride,
          p.pad};
}

// Output positions [lo, hi) whose tap k lands inside [0, extent).
std::pair<long, long> valid_range(long extent, long out, long stride, long pad,
                                  long k) {
  long lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  const long top = extent - 1 + pad - k;
  long hi = top < 0 ? 0 : top / stride + 1;
  hi = std::min(hi, out);
  lo = std::min(lo, hi);
  return {lo, hi};
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const long n_cols = g.cols();
  for (long c = 0; c < g.in_c; ++c) {
    for (long ki = 0; ki < g.kh; ++ki) {
      const auto [y_lo, y_hi] = valid_range(g.in_h, g.out_h, g.stride, g.pad, ki);
      for (long kj = 0; kj < g.kw; ++kj) {
        const auto [x_lo, x_hi] =
            valid_range(g.in_w, g.out_w, g.stride, g.pad, kj);
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * n_cols;
        for (long oy = 0; oy < g.out_h; ++oy) {
          T* dst = row + oy * g.out_w;
          if (oy < y_lo || oy >= y_hi) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src =
              image + (c * g.in_h + oy * g.stride - g.pad + ki) * g.in_w;
          std::fill(dst, dst + x_lo, T{0});
          if (g.stride == 1) {
            std::copy(src + x_lo - g.pad + kj, src + x_hi - g.pad + kj,
                      dst + x_lo);
          } else {
            for (long ox = x_lo; ox < x_hi; ++ox) {
              dst[ox] = src[ox * g.stride - g.pad + kj];
            }
          }
          std::fill(dst + x_hi, dst + g.out_w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const long n_cols = g.cols();
  for (long c = 0; c < g.in_c; ++c) {
    for (long ki = 0; ki < g.kh; ++ki) {
      const auto [y_lo, y_hi] = valid_range(g.in_h, g.out_h, g.stride, g.pad, ki);
      for (long kj = 0; kj < g.kw; ++kj) {
        const auto [x_lo, x_hi] =
            valid_range(g.in_w, g.out_w, g.stride, g.pad, kj);
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * n_cols;
        for (long oy = y_lo; oy < y_hi; ++oy) {
          const T* src = row + oy * g.out_w;
          T* dst = image + (c * g.in_h + oy * g.stride - g.pad + ki) * g.in_w;
          for (long ox = x_lo; ox < x_hi; ++ox) {
            dst[ox * g.stride - g.pad + kj] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_pointwise(const ConvParams<T>& p) {
  return p.kernel_h() == 1 && p.kernel_w() == 1 && p.stride == 1 && p.pad == 0;
}

std::string describe(std::string_view layer) {
  return "layer " + std::string(layer) + ": ";
}

}  // namespace

template <typename T>
Shape conv2d_output_shape(const Shape& input, const ConvParams<T>& p,
                          std::string_view layer) {
  const Shape& k = p.weights.shape();
  if (k.count() == 0) {
    throw ShapeError(describe(layer) + "empty weight tensor " + to_string(k));
  }
  if (input.c != k.c) {
    throw ShapeError(describe(layer) + "input has " + std::to_string(input.c) +
                     " channels but weights " + to_string(k) + " expect " +
                     std::to_string(k.c) + " (input dims " + to_string(input) +
                     ")");
  }
  if (p.bias.size() != k.n) {
    throw ShapeError(describe(layer) + "bias length " +
                     std::to_string(p.bias.size()) + " does not match " +
                     std::to_string(k.n) + " output channels");
  }
  if (p.stride < 1 || p.pad < 0) {
    throw ShapeError(describe(layer) + "invalid stride " +
                     std::to_string(p.stride) + " / pad " +
                     std::to_string(p.pad));
  }
  const long padded_h = static_cast<long>(input.h) + 2L * p.pad;
  const long padded_w = static_cast<long>(input.w) + 2L * p.pad;
  if (padded_h < static_cast<long>(k.h) || padded_w < static_cast<long>(k.w)) {
    throw ShapeError(describe(layer) + "input " + to_string(input) +
                     " is smaller than kernel " + to_string(k));
  }
  return {input.n, k.n,
          static_cast<std::size_t>((padded_h - static_cast<long>(k.h)) / p.stride + 1),
          static_cast<std::size_t>((padded_w - static_cast<long>(k.w)) / p.stride + 1)};
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const ConvParams<T>& p, std::string_view layer) {
  const Shape out_shape = conv2d_output_shape(input.shape(), p, layer);
  BasicTensor<T> out(out_shape);
  const ConvGeometry g = geometry(input.shape(), out_shape, p);
  const int m = static_cast<int>(p.out_channels());
  const int k = static_cast<int>(g.rows());
  const int n = static_cast<int>(g.cols());
  const bool pointwise = is_pointwise(p);
  T* col = pointwise ? nullptr : workspace<T>(g.rows() * g.cols());

  for (std::size_t b = 0; b < input.n(); ++b) {
    const T* rhs = input.plane(b, 0);
    if (!pointwise) {
      im2col(input.plane(b, 0), g, col);
      rhs = col;
    }
    T* y = out.plane(b, 0);
    for (int oc = 0; oc < m; ++oc) {
      std::fill(y + static_cast<long>(oc) * n, y + static_cast<long>(oc + 1) * n,
                p.bias[oc]);
    }
    detail::gemm(false, false, m, n, k, T{1}, p.weights.ptr(), k, rhs, n, T{1},
                 y, n);
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const ConvParams<T>& p,
                                     const Shape& input_shape,
                                     std::string_view layer) {
  const Shape expected = conv2d_output_shape(input_shape, p, layer);
  if (grad_out.shape() != expected) {
    throw ShapeError(describe(layer) + "gradient dims " +
                     to_string(grad_out.shape()) + " do not match output dims " +
                     to_string(expected));
  }
  BasicTensor<T> grad_in(input_shape);
  const ConvGeometry g = geometry(input_shape, expected, p);
  const int m = static_cast<int>(p.out_channels());
  const int k = static_cast<int>(g.rows());
  const int n = static_cast<int>(g.cols());
  const bool pointwise = is_pointwise(p);
  T* col = pointwise ? nullptr : workspace<T>(g.rows() * g.cols());
  const T alpha = fault::flip_conv_gradient() ? T{-1} : T{1};

  for (std::size_t b = 0; b < grad_out.n(); ++b) {
    T* dst = pointwise ? grad_in.plane(b, 0) : col;
    detail::gemm(true, false, k, n, m, alpha, p.weights.ptr(), k,
                 grad_out.plane(b, 0), n, T{0}, dst, n);
    if (!pointwise) col2im(col, g, grad_in.plane(b, 0));
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const ConvParams<T>& p,
                                     std::string_view layer) {
  const auto infer = [&](std::size_t out, std::size_t kernel) -> std::size_t {
    const long v = (static_cast<long>(out) - 1) * p.stride +
                   static_cast<long>(kernel) - 2L * p.pad;
    if (out == 0 || v < 1) {
      throw ShapeError(describe(layer) + "cannot infer input dims from " +
                       to_string(grad_out.shape()));
    }
    return static_cast<std::size_t>(v);
  };
  const Shape input{grad_out.n(), p.in_channels(),
                    infer(grad_out.h(), p.kernel_h()),
                    infer(grad_out.w(), p.kernel_w())};
  return conv2d_backward_input(grad_out, p, input, layer);
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  const T* src = input.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0; i < input.size(); ++i) {
    dst[i] = src[i] > T{0} ? src[i] : T{0};
  }
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& saved_input) {
  if (grad_out.shape() != saved_input.shape()) {
    throw ShapeError("relu_backward: gradient dims " +
                     to_string(grad_out.shape()) + " vs saved input " +
                     to_string(saved_input.shape()));
  }
  BasicTensor<T> out(grad_out.shape());
  const T* g = grad_out.ptr();
  const T* x = saved_input.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    dst[i] = x[i] > T{0} ? g[i] : T{0};
  }
  return out;
}

template <typename T>
PoolResult<T> maxpool2x2_forward(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0) {
    throw ShapeError("maxpool2x2: empty spatial dims " + to_string(s));
  }
  const Shape out_shape{s.n, s.c, (s.h + 1) / 2, (s.w + 1) / 2};
  PoolResult<T> result{BasicTensor<T>(out_shape), ArgmaxIndices{s, {}}};
  result.argmax.index.resize(out_shape.count());
  T* out = result.output.ptr();
  std::size_t* idx = result.argmax.index.data();

  std::size_t o = 0;
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (b * s.c + c) * s.plane();
      const T* plane = input.ptr() + base;
      for (std::size_t oy = 0; oy < out_shape.h; ++oy) {
        const std::size_t y0 = 2 * oy;
        const std::size_t y1 = std::min(y0 + 1, s.h - 1);
        for (std::size_t ox = 0; ox < out_shape.w; ++ox, ++o) {
          const std::size_t x0 = 2 * ox;
          const std::size_t x1 = std::min(x0 + 1, s.w - 1);
          const std::size_t window[4] = {y0 * s.w + x0, y0 * s.w + x1,
                                         y1 * s.w + x0, y1 * s.w + x1};
          std::size_t best = window[0];
          for (int i = 1; i < 4; ++i) {
            if (plane[window[i]] > plane[best]) best = window[i];
          }
          out[o] = plane[best];
          idx[o] = base + best;
        }
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   const ArgmaxIndices& indices) {
  if (grad_out.size() != indices.index.size()) {
    throw ShapeError("maxpool2x2_backward: gradient dims " +
                     to_string(grad_out.shape()) + " do not match " +
                     std::to_string(indices.index.size()) +
                     " recorded windows");
  }
  BasicTensor<T> grad_in(indices.input_shape);
  const T* g = grad_out.ptr();
  T* dst = grad_in.ptr();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    assert(indices.index[i] < grad_in.size());
    dst[indices.index[i]] += g[i];
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, std::size_t out_h,
                               std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("bilinear_resize: target dims must be positive");
  }
  const Shape& s = input.shape();
  if (s.h == out_h && s.w == out_w) return input;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  const auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src =
          out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) /
                        static_cast<double>(out - 1)
                  : 0.0;
      const auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
      result[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return result;
  };
  const std::vector<Tap> ys = taps(s.h, out_h);
  const std::vector<Tap> xs = taps(s.w, out_w);

  BasicTensor<T> out(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(b, c);
      T* dst = out.plane(b, c);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const Tap& ty = ys[oy];
        const T* r0 = src + ty.lo * s.w;
        const T* r1 = src + ty.hi * s.w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const Tap& tx = xs[ox];
          const double top = (1.0 - tx.frac) * r0[tx.lo] + tx.frac * r0[tx.hi];
          const double bottom = (1.0 - tx.frac) * r1[tx.lo] + tx.frac * r1[tx.hi];
          dst[oy * out_w + ox] =
              static_cast<T>((1.0 - ty.frac) * top + ty.frac * bottom);
        }
      }
    }
  }
  return out;
}

#define DFI_INSTANTIATE_KERNELS(T)                                            \
  template Shape conv2d_output_shape(const Shape&, const ConvParams<T>&,      \
                                     std::string_view);                       \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&,               \
                                         const ConvParams<T>&,                \
                                         std::string_view);                   \
  template BasicTensor<T> conv2d_backward_input(                              \
      const BasicTensor<T>&, const ConvParams<T>&, const Shape&,              \
      std::string_view);                                                      \
  template BasicTensor<T> conv2d_backward_input(                              \
      const BasicTensor<T>&, const ConvParams<T>&, std::string_view);         \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&,                \
                                        const BasicTensor<T>&);               \
  template PoolResult<T> maxpool2x2_forward(const BasicTensor<T>&);           \
  template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&,          \
                                              const ArgmaxIndices&);          \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, std::size_t, \
                                          std::size_t);

DFI_INSTANTIATE_KERNELS(float)
DFI_INSTANTIATE_KERNELS(double)

#undef DFI_INSTANTIATE_KERNELS

}  // namespace dfi
