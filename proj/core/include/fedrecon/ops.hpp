#pragma once

#include <cstddef>

#include "fedrecon/tensor.hpp"

// Differentiable operators. Image tensors are NCHW.
namespace fedrecon::ad {

// Lower clamp for probabilities produced by sigmoid; the upper one is 1 - kProbClamp.
inline constexpr double kProbClamp = 1e-7;

// input [N, Cin, H, W], kernel [Cout, Cin, k, k], optional bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0);

Tensor upsample_nearest2(const Tensor& input);
// 2x2 window, stride 2; ties go to the first element in row-major order.
Tensor maxpool2(const Tensor& input);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& input);

Tensor relu(const Tensor& input);
Tensor leaky_relu(const Tensor& input, double slope);
// Output clamped to [kProbClamp, 1 - kProbClamp]; gradient is zero where clamped.
Tensor sigmoid(const Tensor& input);

// input [N, in], weight [out, in], bias [out] -> [N, out]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// sum |pred - ref| over all elements (the L1 norm). Subgradient 0 at ties.
Tensor l1_loss(const Tensor& pred, const Tensor& ref);
// Elementwise -[label * log p + (1 - label) * log(1 - p)] for a hard label in {0, 1}.
// Throws a domain error if any p lies outside the open interval (0, 1).
Tensor bce_terms(const Tensor& p, double label);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace fedrecon::ad
