#pragma once

#include <cstddef>
#include <vector>

#include "advsim/tensor.hpp"

// Plain forward kernels over tensors. The tape in tape.hpp records the same
// computations and adds reverse-mode gradients.
namespace advsim::ops {

inline constexpr double kLogFloor = 1e-12;

// Valid (unpadded) 2-D convolution. input [H,W,Cin], kernel [k,k,Cin,Cout];
// output [(H-k)/stride+1, (W-k)/stride+1, Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, std::size_t stride,
                             const Shape& input_shape);
Tensor conv2d_backward_kernel(const Tensor& input, const Tensor& grad_out, std::size_t stride,
                              const Shape& kernel_shape);

// Adds bias[c] along the last axis.
Tensor add_bias(const Tensor& input, const Tensor& bias);

Tensor relu(const Tensor& input);
Tensor scale(const Tensor& input, double factor);

// 2x2 max pooling with stride 2 over [H,W,C]; H and W must be even. When
// `argmax` is non-null it receives, per output element, the flat input index
// of the winning element (first in row-major window order on ties).
Tensor maxpool2(const Tensor& input, std::vector<std::size_t>* argmax = nullptr);

// Affine map over the flattened input: out = x . weights + bias, with
// weights [n,m] where n = input.size().
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor softmax(const Tensor& logits);

// Logistic function; results are kept strictly inside (0, 1).
Tensor sigmoid(const Tensor& input);

// -sum t_i log p_i with the log clamped at log(1e-12). Throws DomainError on
// negative target entries.
double ce_loss(const Tensor& probs, const Tensor& target);
Tensor ce_loss_grad(const Tensor& probs, const Tensor& target);

// -sum [t log p + (1-t) log(1-p)] with both logs clamped at log(1e-12).
double bce_loss(const Tensor& probs, const Tensor& target);
Tensor bce_loss_grad(const Tensor& probs, const Tensor& target);

}  // namespace advsim::ops
