#include "spcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "spcnn/errors.hpp"

namespace spcnn::ops {

namespace {

constexpr std::size_t kTaps = kKernelSize * kKernelSize;
constexpr std::size_t kTile = 128;

struct ConvGeometry {
    std::size_t in_channels, in_h, in_w;
    std::size_t out_channels, out_h, out_w;
    std::ptrdiff_t pad;

    std::size_t patch_len() const { return in_channels * kTaps; }
    std::size_t out_plane() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, Padding padding) {
    require_rank(input, 3, "conv2d input");
    require_rank(kernels, 4, "conv2d kernels");
    if (kernels.dim(2) != kKernelSize || kernels.dim(3) != kKernelSize) {
        throw DimensionError("conv2d kernels must be 3x3, got " + shape_string(kernels.shape()));
    }
    if (kernels.dim(1) != input.dim(0)) {
        throw DimensionError("conv2d channel mismatch: input " + shape_string(input.shape()) + ", kernels " +
                             shape_string(kernels.shape()));
    }
    ConvGeometry g{};
    g.in_channels = input.dim(0);
    g.in_h = input.dim(1);
    g.in_w = input.dim(2);
    g.out_channels = kernels.dim(0);
    if (padding == Padding::Same) {
        g.pad = 1;
        g.out_h = g.in_h;
        g.out_w = g.in_w;
    } else {
        if (g.in_h < kKernelSize || g.in_w < kKernelSize) {
            throw DimensionError("conv2d valid padding needs spatial dims >= 3, got " + shape_string(input.shape()));
        }
        g.pad = 0;
        g.out_h = g.in_h - 2;
        g.out_w = g.in_w - 2;
    }
    return g;
}

// Row k = c*9 + dy*3 + dx of the column matrix holds the input pixels that tap
// (c, dy, dx) sees at every output position; out-of-range pixels are zero.
void im2col(const Tensor& input, const ConvGeometry& g, std::vector<double>& cols) {
    const std::size_t n = g.out_plane();
    cols.assign(g.patch_len() * n, 0.0);
    const double* in = input.raw();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = in + c * g.in_h * g.in_w;
        for (std::size_t dy = 0; dy < kKernelSize; ++dy) {
            for (std::size_t dx = 0; dx < kKernelSize; ++dx) {
                double* row = cols.data() + (c * kTaps + dy * kKernelSize + dx) * n;
                for (std::size_t y = 0; y < g.out_h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - g.pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    const double* src = plane + static_cast<std::size_t>(sy) * g.in_w;
                    double* dst = row + y * g.out_w;
                    for (std::size_t x = 0; x < g.out_w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - g.pad;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(g.in_w)) dst[x] = src[sx];
                    }
                }
            }
        }
    }
}

void col2im_add(const std::vector<double>& cols, const ConvGeometry& g, Tensor& grad_input) {
    const std::size_t n = g.out_plane();
    double* out = grad_input.raw();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = out + c * g.in_h * g.in_w;
        for (std::size_t dy = 0; dy < kKernelSize; ++dy) {
            for (std::size_t dx = 0; dx < kKernelSize; ++dx) {
                const double* row = cols.data() + (c * kTaps + dy * kKernelSize + dx) * n;
                for (std::size_t y = 0; y < g.out_h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - g.pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    double* dst = plane + static_cast<std::size_t>(sy) * g.in_w;
                    const double* src = row + y * g.out_w;
                    for (std::size_t x = 0; x < g.out_w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - g.pad;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(g.in_w)) dst[sx] += src[x];
                    }
                }
            }
        }
    }
}

// out[o][i] += sum_k w[o][k] * cols[k][i] for o in [0, rows), tiled so the
// output block stays in L1.
void gemm_accumulate(const double* w, std::size_t rows, std::size_t inner, const double* cols, std::size_t n,
                     double* out) {
    std::size_t o = 0;
    for (; o + 4 <= rows; o += 4) {
        const double* w0 = w + o * inner;
        const double* w1 = w0 + inner;
        const double* w2 = w1 + inner;
        const double* w3 = w2 + inner;
        double* o0 = out + o * n;
        double* o1 = o0 + n;
        double* o2 = o1 + n;
        double* o3 = o2 + n;
        for (std::size_t i0 = 0; i0 < n; i0 += kTile) {
            const std::size_t i1 = std::min(n, i0 + kTile);
            for (std::size_t k = 0; k < inner; ++k) {
                const double a0 = w0[k], a1 = w1[k], a2 = w2[k], a3 = w3[k];
                const double* c = cols + k * n;
                for (std::size_t i = i0; i < i1; ++i) {
                    const double v = c[i];
                    o0[i] += a0 * v;
                    o1[i] += a1 * v;
                    o2[i] += a2 * v;
                    o3[i] += a3 * v;
                }
            }
        }
    }
    for (; o < rows; ++o) {
        const double* wr = w + o * inner;
        double* orow = out + o * n;
        for (std::size_t k = 0; k < inner; ++k) {
            const double a = wr[k];
            const double* c = cols + k * n;
            for (std::size_t i = 0; i < n; ++i) orow[i] += a * c[i];
        }
    }
}

// Dot product with eight independent partial sums so the loop vectorizes
// without reassociating; the summation order is fixed.
constexpr std::size_t kLanes = 8;

double dot(const double* a, const double* b, std::size_t n) {
    double acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    }
    double s = 0.0;
    for (; i < n; ++i) s += a[i] * b[i];
    for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
    return s;
}

void transpose(const std::vector<double>& src, std::size_t rows, std::size_t cols, std::vector<double>& dst) {
    dst.resize(rows * cols);
    constexpr std::size_t kBlock = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
        for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
            const std::size_t r1 = std::min(rows, r0 + kBlock), c1 = std::min(cols, c0 + kBlock);
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
}

// gc[k][i] = sum_o w[o][k] * g[o][i]
void gemm_tn(const double* w, std::size_t rows, std::size_t inner, const double* g, std::size_t n,
             std::vector<double>& gc) {
    gc.assign(inner * n, 0.0);
    std::size_t k = 0;
    for (; k + 4 <= inner; k += 4) {
        double* r0 = gc.data() + k * n;
        double* r1 = r0 + n;
        double* r2 = r1 + n;
        double* r3 = r2 + n;
        for (std::size_t i0 = 0; i0 < n; i0 += kTile) {
            const std::size_t i1 = std::min(n, i0 + kTile);
            for (std::size_t o = 0; o < rows; ++o) {
                const double* wr = w + o * inner + k;
                const double a0 = wr[0], a1 = wr[1], a2 = wr[2], a3 = wr[3];
                const double* grow = g + o * n;
                for (std::size_t i = i0; i < i1; ++i) {
                    const double v = grow[i];
                    r0[i] += a0 * v;
                    r1[i] += a1 * v;
                    r2[i] += a2 * v;
                    r3[i] += a3 * v;
                }
            }
        }
    }
    for (; k < inner; ++k) {
        double* r = gc.data() + k * n;
        for (std::size_t o = 0; o < rows; ++o) {
            const double a = w[o * inner + k];
            const double* grow = g + o * n;
            for (std::size_t i = 0; i < n; ++i) r[i] += a * grow[i];
        }
    }
}

thread_local std::vector<double> t_cols;
thread_local std::vector<double> t_cols_t;
thread_local std::vector<double> t_grad_cols;

void check_slope(double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw ParameterError("leaky_relu slope must lie in (0, 1), got " + std::to_string(slope));
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, Padding padding) {
    const ConvGeometry g = conv_geometry(input, kernels, padding);
    require_shape(bias, {g.out_channels}, "conv2d bias");
    const std::size_t n = g.out_plane();
    Tensor out({g.out_channels, g.out_h, g.out_w});
    double* o = out.raw();
    for (std::size_t c = 0; c < g.out_channels; ++c) std::fill(o + c * n, o + (c + 1) * n, bias[c]);
    im2col(input, g, t_cols);
    gemm_accumulate(kernels.raw(), g.out_channels, g.patch_len(), t_cols.data(), n, o);
    return out;
}

void conv2d_backward_accumulate(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                                Padding padding, Tensor& grad_kernels, Tensor& grad_bias, Tensor* grad_input) {
    const ConvGeometry g = conv_geometry(input, kernels, padding);
    require_shape(grad_out, {g.out_channels, g.out_h, g.out_w}, "conv2d grad_out");
    require_shape(grad_kernels, kernels.shape(), "conv2d grad_kernels");
    require_shape(grad_bias, {g.out_channels}, "conv2d grad_bias");
    const std::size_t n = g.out_plane();
    const double* go = grad_out.raw();
    for (std::size_t c = 0; c < g.out_channels; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += go[c * n + i];
        grad_bias[c] += s;
    }
    // grad_kernels[o][k] += sum_i grad_out[o][i] * cols[k][i], computed as an
    // accumulate-GEMM against the transposed column matrix.
    im2col(input, g, t_cols);
    transpose(t_cols, g.patch_len(), n, t_cols_t);
    gemm_accumulate(go, g.out_channels, n, t_cols_t.data(), g.patch_len(), grad_kernels.raw());
    if (grad_input != nullptr) {
        require_shape(*grad_input, input.shape(), "conv2d grad_input");
        gemm_tn(kernels.raw(), g.out_channels, g.patch_len(), go, n, t_grad_cols);
        col2im_add(t_grad_cols, g, *grad_input);
    }
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out, Padding padding) {
    const ConvGeometry g = conv_geometry(input, kernels, padding);
    ConvGrads grads{Tensor(input.shape()), Tensor(kernels.shape()), Tensor({g.out_channels})};
    conv2d_backward_accumulate(input, kernels, grad_out, padding, grads.grad_kernels, grads.grad_bias,
                               &grads.grad_input);
    return grads;
}

PoolResult maxpool2x2(const Tensor& input) {
    require_rank(input, 3, "maxpool2x2 input");
    const std::size_t channels = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h < 2 || w < 2) throw DimensionError("maxpool2x2 needs H, W >= 2, got " + shape_string(input.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult r{Tensor({channels, oh, ow}), std::vector<std::size_t>(channels * oh * ow)};
    const double* in = input.raw();
    std::size_t out_idx = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x, ++out_idx) {
                std::size_t best = (c * h + 2 * y) * w + 2 * x;
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t idx : cand) {
                    if (in[idx] > in[best]) best = idx;
                }
                r.output[out_idx] = in[best];
                r.argmax[out_idx] = best;
            }
        }
    }
    return r;
}

PoolResult global_maxpool(const Tensor& input) {
    require_rank(input, 3, "global_maxpool input");
    const std::size_t channels = input.dim(0), plane = input.dim(1) * input.dim(2);
    PoolResult r{Tensor({channels}), std::vector<std::size_t>(channels)};
    const double* in = input.raw();
    for (std::size_t c = 0; c < channels; ++c) {
        std::size_t best = c * plane;
        for (std::size_t i = c * plane + 1; i < (c + 1) * plane; ++i) {
            if (in[i] > in[best]) best = i;
        }
        r.output[c] = in[best];
        r.argmax[c] = best;
    }
    return r;
}

Tensor maxpool_backward(const Tensor& grad_out, std::span<const std::size_t> argmax, const Shape& input_shape) {
    if (grad_out.size() != argmax.size()) {
        throw DimensionError("maxpool backward: grad_out " + shape_string(grad_out.shape()) +
                             " does not match argmax length " + std::to_string(argmax.size()));
    }
    Tensor grad_in(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= grad_in.size()) throw IndexError("maxpool backward: argmax index out of range");
        grad_in[argmax[i]] += grad_out[i];
    }
    return grad_in;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 1, "linear input");
    require_rank(weight, 2, "linear weight");
    const std::size_t m = weight.dim(0), n = weight.dim(1);
    if (input.dim(0) != n) {
        throw DimensionError("linear: input " + shape_string(input.shape()) + " vs weight " +
                             shape_string(weight.shape()));
    }
    require_shape(bias, {m}, "linear bias");
    Tensor out({m});
    const double* x = input.raw();
    for (std::size_t r = 0; r < m; ++r) {
        out[r] = dot(weight.raw() + r * n, x, n) + bias[r];
    }
    return out;
}

void linear_backward_accumulate(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                                Tensor& grad_weight, Tensor& grad_bias, Tensor* grad_input) {
    require_rank(weight, 2, "linear weight");
    const std::size_t m = weight.dim(0), n = weight.dim(1);
    require_shape(input, {n}, "linear input");
    require_shape(grad_out, {m}, "linear grad_out");
    require_shape(grad_weight, weight.shape(), "linear grad_weight");
    require_shape(grad_bias, {m}, "linear grad_bias");
    const double* x = input.raw();
    for (std::size_t r = 0; r < m; ++r) {
        const double g = grad_out[r];
        grad_bias[r] += g;
        double* gw = grad_weight.raw() + r * n;
        for (std::size_t c = 0; c < n; ++c) gw[c] += g * x[c];
    }
    if (grad_input != nullptr) {
        require_shape(*grad_input, {n}, "linear grad_input");
        double* gi = grad_input->raw();
        for (std::size_t r = 0; r < m; ++r) {
            const double g = grad_out[r];
            const double* wr = weight.raw() + r * n;
            for (std::size_t c = 0; c < n; ++c) gi[c] += g * wr[c];
        }
    }
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
    require_rank(weight, 2, "linear weight");
    LinearGrads grads{Tensor({weight.dim(1)}), Tensor(weight.shape()), Tensor({weight.dim(0)})};
    linear_backward_accumulate(input, weight, grad_out, grads.grad_weight, grads.grad_bias, &grads.grad_input);
    return grads;
}

Tensor leaky_relu(const Tensor& input, double slope) {
    check_slope(slope);
    Tensor out = input;
    for (double& v : out.data()) {
        if (v < 0.0) v *= slope;
    }
    return out;
}

Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out, double slope) {
    check_slope(slope);
    require_shape(grad_out, input.shape(), "leaky_relu grad_out");
    Tensor grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (input[i] < 0.0) grad[i] *= slope;
    }
    return grad;
}

DropoutResult dropout(const Tensor& input, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return {input, std::vector<double>(input.size(), 1.0)};
    const double scale = 1.0 / (1.0 - rate);
    DropoutResult r{input, std::vector<double>(input.size())};
    for (std::size_t i = 0; i < input.size(); ++i) {
        r.mask[i] = rng.bernoulli(rate) ? 0.0 : scale;
        r.output[i] *= r.mask[i];
    }
    return r;
}

Tensor dropout_backward(const Tensor& grad_out, std::span<const double> mask) {
    if (mask.size() != grad_out.size()) throw DimensionError("dropout backward: mask length mismatch");
    Tensor grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
    return grad;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 1, "softmax logits");
    const double peak = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor probs = logits;
    double total = 0.0;
    for (double& v : probs.data()) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : probs.data()) v /= total;
    return probs;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int true_class) {
    require_rank(logits, 1, "softmax_cross_entropy logits");
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= logits.size()) {
        throw IndexError("true class " + std::to_string(true_class) + " out of range for " +
                         std::to_string(logits.size()) + " logits");
    }
    const double peak = *std::max_element(logits.data().begin(), logits.data().end());
    double total = 0.0;
    for (double v : logits.data()) total += std::exp(v - peak);
    const double log_norm = peak + std::log(total);

    CrossEntropyResult r{log_norm - logits[static_cast<std::size_t>(true_class)], softmax(logits), Tensor()};
    r.grad_logits = r.probs;
    r.grad_logits[static_cast<std::size_t>(true_class)] -= 1.0;
    return r;
}

void sgd_step(std::span<GradPair> params, std::span<Tensor> velocity, double lr, double momentum) {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (params.size() != velocity.size()) throw DimensionError("sgd_step: velocity count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = params[p].value;
        Tensor& grad = params[p].grad;
        Tensor& v = velocity[p];
        require_shape(v, value.shape(), "sgd_step velocity");
        for (std::size_t i = 0; i < value.size(); ++i) {
            v[i] = momentum * v[i] - lr * grad[i];
            value[i] += v[i];
        }
        grad.fill(0.0);
    }
}

}  // namespace spcnn::ops
