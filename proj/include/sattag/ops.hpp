#pragma once

#include "sattag/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace sattag {

// Differentiable tensor operations. Every function records a backward rule
// on the active tape when an input requires a gradient.

// [M×K]·[K×N] -> [M×N], or batched [B×M×K]·[B×K×N] -> [B×M×N].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor transpose_last2(const Tensor& x);

// `b` may have the same shape as `a` or any trailing suffix of it; it is
// then broadcast across the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t length);
// [d0×…] -> [count×d0×…], each copy sharing the gradient of `x`.
Tensor repeat_leading(const Tensor& x, std::size_t count);

struct Conv1dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct Conv2dOptions {
    std::size_t stride_freq = 1;
    std::size_t stride_time = 1;
    std::size_t pad_freq = 0;
    std::size_t pad_time = 0;
};

// Cross-correlation. input [B×Cin×T], weight [Cout×Cin×k], bias [Cout] or
// undefined.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv1dOptions opts = {});
// input [B×Cin×F×T], weight [Cout×Cin×f×t], bias [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

// Pooling along one axis; output extent floor((n - window)/stride) + 1.
// max_pool routes the gradient to the first maximal index.
Tensor max_pool(const Tensor& x, std::size_t axis, std::size_t window, std::size_t stride);
Tensor avg_pool(const Tensor& x, std::size_t axis, std::size_t window, std::size_t stride);

Tensor softmax(const Tensor& x, int axis);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Normalizes x [B×C×…] per channel (axis 1). Training mode uses batch
// statistics and updates the running stats; eval mode uses running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training);

// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy of probabilities against {0,1} targets.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

// Replaces row `row` of every [S×S] slice of x [N×S×S] with a fixed
// distribution. `values` holds either S entries (shared by all slices) or
// N·S entries. Overridden entries receive no gradient.
Tensor override_row(const Tensor& x, std::size_t row, std::span<const double> values);

}  // namespace sattag
