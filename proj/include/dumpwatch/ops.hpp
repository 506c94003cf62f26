#pragma once

#include "dumpwatch/tensor.hpp"

namespace dumpwatch {

// Layer operations. Each takes the graph to record into; with an inference
// graph they only compute the forward value.
//
// Image tensors are laid out [batch, channels, height, width].

/// Stride-1 cross-correlation with zero "same" padding.
/// kernel [Cout, Cin, k, k] with odd k, bias [Cout].
template <typename T>
BasicTensor<T> conv2d(Graph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias);

/// 2x2 max pooling, stride 2. Ties go to the first cell in row-major order.
template <typename T>
BasicTensor<T> max_pool_2x2(Graph<T>& g, const BasicTensor<T>& input);

/// Stride-2 2x2 transposed convolution. kernel [Cin, Cout, 2, 2], bias [Cout].
template <typename T>
BasicTensor<T> transposed_conv_2x2(Graph<T>& g, const BasicTensor<T>& input,
                                   const BasicTensor<T>& kernel, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> concat_channels(Graph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Spatial window [top, top+height) x [left, left+width) of every image.
template <typename T>
BasicTensor<T> crop2d(Graph<T>& g, const BasicTensor<T>& input, std::size_t top,
                      std::size_t left, std::size_t height, std::size_t width);

template <typename T>
BasicTensor<T> relu(Graph<T>& g, const BasicTensor<T>& x);

/// Output is clamped into the open interval (0, 1).
template <typename T>
BasicTensor<T> sigmoid(Graph<T>& g, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mul(Graph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sum(Graph<T>& g, const BasicTensor<T>& x);

/**
 * Mean over all pixels of
 *   pos_weight * y * softplus(-z) + (1 - y) * softplus(z)
 * which is the weighted binary cross-entropy of sigmoid(z) against y,
 * evaluated without ever forming log(sigmoid(z)).
 */
template <typename T>
BasicTensor<T> weighted_bce_with_logits(Graph<T>& g, const BasicTensor<T>& logits,
                                        const BasicTensor<T>& target, double pos_weight);

// Scalar helpers shared with the non-differentiable paths.
double stable_sigmoid(double x);
double softplus(double x);

}  // namespace dumpwatch
