#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spcnn/rng.hpp"
#include "spcnn/tensor.hpp"

// Forward and hand-written backward kernels for the CNN layers. All kernels
// operate on a single sample; spatial tensors are [C, H, W].
namespace spcnn::ops {

enum class Padding { Same, Valid };

inline constexpr std::size_t kKernelSize = 3;

/// 3x3 convolution (cross-correlation). Same padding zero-pads by one pixel.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, Padding padding);

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_kernels;
    Tensor grad_bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out, Padding padding);

/// Adds the kernel and bias gradients into the given buffers. `grad_input` may
/// be null when the caller has no use for it (first layer).
void conv2d_backward_accumulate(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                                Padding padding, Tensor& grad_kernels, Tensor& grad_bias, Tensor* grad_input);

struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

/// 2x2 window, stride 2; a trailing odd row/column is dropped.
PoolResult maxpool2x2(const Tensor& input);

/// Per-channel max over all spatial positions: [C,H,W] -> [C].
PoolResult global_maxpool(const Tensor& input);

/// Routes each upstream gradient to the recorded argmax position.
Tensor maxpool_backward(const Tensor& grad_out, std::span<const std::size_t> argmax, const Shape& input_shape);

/// weight [m,n] * input [n] + bias [m].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);

void linear_backward_accumulate(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                                Tensor& grad_weight, Tensor& grad_bias, Tensor* grad_input);

inline constexpr double kDefaultLeakySlope = 0.01;

Tensor leaky_relu(const Tensor& input, double slope);

/// Derivative at exactly 0 is taken as 1.
Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out, double slope);

struct DropoutResult {
    Tensor output;
    std::vector<double> mask;  // 0 for dropped elements, 1/(1-rate) for survivors
};

/// Inverted dropout. In inference mode the input is returned unchanged and
/// the mask is all ones.
DropoutResult dropout(const Tensor& input, double rate, Rng& rng, bool training);

Tensor dropout_backward(const Tensor& grad_out, std::span<const double> mask);

Tensor softmax(const Tensor& logits);

struct CrossEntropyResult {
    double loss;
    Tensor probs;
    Tensor grad_logits;
};

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int true_class);

/// Momentum SGD: v <- momentum*v - lr*grad; value <- value + v. Gradients
/// are zeroed afterwards.
void sgd_step(std::span<GradPair> params, std::span<Tensor> velocity, double lr, double momentum);

}  // namespace spcnn::ops
