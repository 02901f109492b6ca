#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "dfi/tensor.hpp"

namespace dfi {

/// Weights (out_c, in_c, kh, kw) plus per-output-channel bias. VGG layers
/// are all 3x3, stride 1, pad 1.
template <typename T>
struct ConvParams {
  BasicTensor<T> weights;
  std::vector<T> bias;
  int stride = 1;
  int pad = 1;

  std::size_t out_channels() const { return weights.n(); }
  std::size_t in_channels() const { return weights.c(); }
  std::size_t kernel_h() const { return weights.h(); }
  std::size_t kernel_w() const { return weights.w(); }

  template <typename U>
  ConvParams<U> cast() const {
    return ConvParams<U>{weights.template cast<U>(),
                         std::vector<U>(bias.begin(), bias.end()), stride,
                         pad};
  }
};

/// Flat input offsets selected by each max-pool window.
struct ArgmaxIndices {
  Shape input_shape;
  std::vector<std::size_t> index;
};

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  ArgmaxIndices argmax;
};

/// Output dims of a convolution; throws ShapeError naming `layer` when the
/// input channel count or parameters are inconsistent.
template <typename T>
Shape conv2d_output_shape(const Shape& input, const ConvParams<T>& p,
                          std::string_view layer = "conv");

/// Cross-correlation plus bias, computed as im2col followed by GEMM.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const ConvParams<T>& p,
                              std::string_view layer = "conv");

/// Transpose of conv2d_forward's linear part applied to `grad_out`.
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const ConvParams<T>& p,
                                     const Shape& input_shape,
                                     std::string_view layer = "conv");

// Infers the smallest input shape consistent with grad_out.
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out,
                                     const ConvParams<T>& p,
                                     std::string_view layer = "conv");

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

// Gradient passes only where saved_input > 0 (subgradient at 0 is 0).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out,
                             const BasicTensor<T>& saved_input);

/// 2x2 stride-2 max pooling. Odd heights/widths replicate the last
/// row/column, so the output is ceil(h/2) x ceil(w/2). Ties keep the first
/// element in row-major window order.
template <typename T>
PoolResult<T> maxpool2x2_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   const ArgmaxIndices& indices);

/// Bilinear interpolation with corner-aligned sampling.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, std::size_t out_h,
                               std::size_t out_w);

/// Caps the BLAS thread pool. Values below 1 are treated as 1.
void set_compute_threads(int threads);

namespace fault {
// Test hook: while set, conv2d_backward_input returns the negated gradient.
void set_flip_conv_gradient(bool on);
bool flip_conv_gradient();
}  // namespace fault

}  // namespace dfi
