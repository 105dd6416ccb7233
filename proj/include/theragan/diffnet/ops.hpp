#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "theragan/diffnet/graph.hpp"

namespace theragan::diffnet {

using Rng = std::mt19937_64;

// Output length of a strided 1-D convolution.
std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad);
// Output length of a 1-D transposed convolution.
std::size_t tconv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad,
                                std::size_t output_pad = 0);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_pad = 0;  // transposed convolution only
};

// x: (N, Cin, L), weight: (Cout, Cin, K), bias: (Cout) -> (N, Cout, Lout)
Var conv1d(Var x, Var weight, Var bias, ConvGeometry geo = {});
// x: (N, Cin, L), weight: (Cin, Cout, K), bias: (Cout)
Var tconv1d(Var x, Var weight, Var bias, ConvGeometry geo = {});
// Per-channel convolution. x: (N, C, L), weight: (C, K), bias: (C)
Var depthwise_conv1d(Var x, Var weight, Var bias, ConvGeometry geo = {});
// Depthwise (C, K) followed by pointwise (Cout, C) and bias (Cout), fused.
Var sepconv1d(Var x, Var depthwise, Var pointwise, Var bias, ConvGeometry geo = {});
// x: (N, Cin, H, W), weight: (Cout, Cin, KH, KW), bias: (Cout); same stride/pad on both axes.
Var conv2d(Var x, Var weight, Var bias, ConvGeometry geo = {});

// Affine map over the last axis. x: (..., F), weight: (Out, F), bias: (Out)
Var dense(Var x, Var weight, Var bias);

// Pooling over the last axis; padded positions are ignored by max and count
// as zeros for average.
Var maxpool1d(Var x, std::size_t width, std::size_t stride, std::size_t pad = 0);
Var avgpool1d(Var x, std::size_t width, std::size_t stride, std::size_t pad = 0);

Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.01);
Var tanh(Var x);
Var sigmoid(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
// Adds a constant tensor broadcast over the leading (batch) axis.
Var add_broadcast(Var x, const Tensor& constant);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<std::size_t>& order);
// Elements [begin, begin + count) of the last axis.
Var slice_last(Var x, std::size_t begin, std::size_t count);
// Element `index` of the last axis; drops that axis.
Var select_last(Var x, std::size_t index);
Var mean_axis(Var x, std::size_t axis);
Var sum_all(Var x);

// Batched matrix product over the last two axes: (..., M, K) x (..., K, P).
Var matmul(Var a, Var b);
Var softmax_last(Var x);
// Layer normalization over the last axis with learned gain/offset (F).
Var layer_norm_last(Var x, Var gain, Var offset, double eps = 1e-5);

// Adds N(0, sigma^2) noise drawn from rng. The realization is captured and
// the op is the identity for gradients.
Var gaussian_noise(Var x, double sigma, Rng& rng);

inline constexpr double kDftEpsilon = 1e-12;
// Magnitude of the real DFT along the last axis: (..., L) -> (..., L/2 + 1),
// sqrt(re^2 + im^2 + eps).
Var dft_magnitude(Var x);

// -mean(y log p + (1 - y) log(1 - p)) with p clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Var probabilities, std::span<const double> labels);
// -mean log p[label] over rows of a (N, K) probability matrix.
Var cross_entropy(Var probabilities, std::span<const std::size_t> labels);

}  // namespace theragan::diffnet
