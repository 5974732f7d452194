#include "spcnn/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"

namespace spcnn {

namespace {

constexpr std::array<std::size_t, 4> kBaselineConv = {45, 80, 125, 180};
constexpr std::array<std::size_t, 3> kBaselineFc = {1080, 360, 3};
constexpr std::size_t kExtraFcWidth = 180;

std::size_t scaled_count(std::size_t n, double factor) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * factor - 1e-9));
}

}  // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::Half: return "half";
        case Variant::Plus50: return "plus50";
        case Variant::ExtraFc: return "extra_fc";
        case Variant::DropFirstConv: return "drop_first_conv";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (auto v : {Variant::Baseline, Variant::Half, Variant::Plus50, Variant::ExtraFc, Variant::DropFirstConv}) {
        if (variant_name(v) == name) return v;
    }
    throw ParameterError("unknown architecture variant '" + std::string(name) + "'");
}

void Architecture::validate() const {
    if (conv_kernel_counts.empty()) throw ParameterError("architecture needs at least one conv layer");
    if (fc_sizes.empty()) throw ParameterError("architecture needs at least one fc layer");
    for (auto c : conv_kernel_counts) {
        if (c == 0) throw ParameterError("conv kernel count must be >= 1");
    }
    for (auto f : fc_sizes) {
        if (f == 0) throw ParameterError("fc size must be >= 1");
    }
    if (fc_sizes.back() != static_cast<std::size_t>(kNumClasses)) {
        throw ParameterError("last fc layer must have " + std::to_string(kNumClasses) + " outputs");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ParameterError("leaky slope must lie in (0, 1)");
    if (in_channels == 0) throw ParameterError("input channels must be >= 1");
    std::size_t h = in_height, w = in_width;
    for (std::size_t l = 0; l + 1 < conv_kernel_counts.size(); ++l) {
        if (h < 2 || w < 2) throw ParameterError("input too small for the pooling chain");
        h /= 2;
        w /= 2;
    }
    if (h < 1 || w < 1) throw ParameterError("input too small for the pooling chain");
}

Architecture make_architecture(Variant variant) {
    Architecture a;
    a.variant = variant;
    a.conv_kernel_counts.assign(kBaselineConv.begin(), kBaselineConv.end());
    a.fc_sizes.assign(kBaselineFc.begin(), kBaselineFc.end());
    switch (variant) {
        case Variant::Baseline: break;
        case Variant::Half: {
            Architecture s = scale_architecture(a, 0.5);
            s.variant = variant;
            return s;
        }
        case Variant::Plus50: {
            Architecture s = scale_architecture(a, 1.5);
            s.variant = variant;
            return s;
        }
        case Variant::ExtraFc: a.fc_sizes.insert(a.fc_sizes.end() - 1, kExtraFcWidth); break;
        case Variant::DropFirstConv: a.conv_kernel_counts.erase(a.conv_kernel_counts.begin()); break;
    }
    return a;
}

Architecture scale_architecture(const Architecture& arch, double factor) {
    if (!(factor > 0.0)) throw ParameterError("architecture scale factor must be positive");
    Architecture s = arch;
    for (auto& c : s.conv_kernel_counts) c = std::max<std::size_t>(1, scaled_count(c, factor));
    for (std::size_t j = 0; j + 1 < s.fc_sizes.size(); ++j) {
        s.fc_sizes[j] = std::max<std::size_t>(1, scaled_count(s.fc_sizes[j], factor));
    }
    return s;
}

std::vector<Shape> activation_shapes(const Architecture& arch) {
    arch.validate();
    std::vector<Shape> shapes{arch.input_shape()};
    std::size_t h = arch.in_height, w = arch.in_width;
    const std::size_t n_conv = arch.conv_kernel_counts.size();
    for (std::size_t l = 0; l < n_conv; ++l) {
        const std::size_t c = arch.conv_kernel_counts[l];
        shapes.push_back({c, h, w});  // conv + activation
        if (l + 1 < n_conv) {
            h /= 2;
            w /= 2;
            shapes.push_back({c, h, w});  // pooled
        } else {
            shapes.push_back({c});  // global max pool
        }
    }
    for (auto f : arch.fc_sizes) shapes.push_back({f});
    return shapes;
}

std::vector<Shape> parameter_shapes(const Architecture& arch) {
    arch.validate();
    std::vector<Shape> shapes;
    std::size_t in = arch.in_channels;
    for (auto c : arch.conv_kernel_counts) {
        shapes.push_back({c, in, ops::kKernelSize, ops::kKernelSize});
        shapes.push_back({c});
        in = c;
    }
    for (auto f : arch.fc_sizes) {
        shapes.push_back({f, in});
        shapes.push_back({f});
        in = f;
    }
    return shapes;
}

std::size_t parameter_count(const Architecture& arch) {
    std::size_t n = 0;
    for (const auto& s : parameter_shapes(arch)) n += shape_size(s);
    return n;
}

bool CnnModel::same_parameters(const CnnModel& other) const {
    if (!(arch == other.arch) || params.size() != other.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!(params[i].value == other.params[i].value)) return false;
    }
    return true;
}

CnnModel build_model(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    CnnModel model;
    model.arch = arch;
    model.rng_seed = seed;
    Rng rng(derive_seed(seed, 0x1417));
    for (const auto& shape : parameter_shapes(arch)) {
        Tensor t(shape);
        if (shape.size() > 1) {
            const std::size_t fan_in = shape_size(shape) / shape[0];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
        }
        model.params.emplace_back(std::move(t));
    }
    return model;
}

namespace {

struct Trace {
    std::vector<Tensor> conv_in;
    std::vector<Tensor> conv_pre;  // pre-activation conv outputs
    std::vector<Tensor> conv_act;
    std::vector<std::vector<std::size_t>> pool_argmax;
    std::vector<Tensor> fc_in;
    std::vector<Tensor> fc_pre;
    std::vector<std::vector<double>> dropout_mask;
    Tensor logits;
};

Tensor run_forward(const CnnModel& model, const Tensor& patch, Rng* dropout_rng, Trace* trace) {
    require_shape(patch, model.arch.input_shape(), "patch");
    const double slope = model.arch.leaky_slope;
    const std::size_t n_conv = model.conv_layers();
    const std::size_t n_fc = model.fc_layers();
    if (trace) {
        trace->conv_in.resize(n_conv);
        trace->conv_pre.resize(n_conv);
        trace->conv_act.resize(n_conv);
        trace->pool_argmax.resize(n_conv);
        trace->fc_in.resize(n_fc);
        trace->fc_pre.resize(n_fc);
        trace->dropout_mask.resize(n_fc);
    }

    Tensor x = patch;
    for (std::size_t l = 0; l < n_conv; ++l) {
        Tensor pre = ops::conv2d_forward(x, model.conv_kernels(l), model.conv_bias(l), ops::Padding::Same);
        Tensor act = ops::leaky_relu(pre, slope);
        ops::PoolResult pooled = (l + 1 < n_conv) ? ops::maxpool2x2(act) : ops::global_maxpool(act);
        if (trace) {
            trace->conv_in[l] = std::move(x);
            trace->conv_pre[l] = std::move(pre);
            trace->conv_act[l] = std::move(act);
            trace->pool_argmax[l] = std::move(pooled.argmax);
        }
        x = std::move(pooled.output);
    }
    Rng inference_rng(0);
    for (std::size_t j = 0; j < n_fc; ++j) {
        Tensor pre = ops::linear(x, model.fc_weight(j), model.fc_bias(j));
        if (trace) trace->fc_in[j] = std::move(x);
        if (j + 1 == n_fc) {
            x = std::move(pre);
            break;
        }
        Tensor act = ops::leaky_relu(pre, slope);
        ops::DropoutResult dropped = ops::dropout(act, model.arch.dropout_rate,
                                                  dropout_rng ? *dropout_rng : inference_rng, dropout_rng != nullptr);
        if (trace) {
            trace->fc_pre[j] = std::move(pre);
            trace->dropout_mask[j] = std::move(dropped.mask);
        }
        x = std::move(dropped.output);
    }
    return x;
}

}  // namespace

Tensor forward_logits(const CnnModel& model, const Tensor& patch) { return run_forward(model, patch, nullptr, nullptr); }

Tensor forward_proba(const CnnModel& model, const Tensor& patch) { return ops::softmax(forward_logits(model, patch)); }

int predict_label(const CnnModel& model, const Tensor& patch) {
    const Tensor logits = forward_logits(model, patch);
    return static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
}

double accumulate_gradients(CnnModel& model, const Tensor& patch, int label, Rng* dropout_rng) {
    Trace trace;
    const Tensor logits = run_forward(model, patch, dropout_rng, &trace);
    const ops::CrossEntropyResult ce = ops::softmax_cross_entropy(logits, label);

    const double slope = model.arch.leaky_slope;
    const std::size_t n_conv = model.conv_layers();
    const std::size_t n_fc = model.fc_layers();

    Tensor grad = ce.grad_logits;
    for (std::size_t j = n_fc; j-- > 0;) {
        if (j + 1 < n_fc) {
            grad = ops::dropout_backward(grad, trace.dropout_mask[j]);
            grad = ops::leaky_relu_backward(trace.fc_pre[j], grad, slope);
        }
        const std::size_t p = 2 * (n_conv + j);
        Tensor grad_in(trace.fc_in[j].shape());
        ops::linear_backward_accumulate(trace.fc_in[j], model.params[p].value, grad, model.params[p].grad,
                                        model.params[p + 1].grad, &grad_in);
        grad = std::move(grad_in);
    }
    for (std::size_t l = n_conv; l-- > 0;) {
        grad = ops::maxpool_backward(grad, trace.pool_argmax[l], trace.conv_act[l].shape());
        grad = ops::leaky_relu_backward(trace.conv_pre[l], grad, slope);
        const std::size_t p = 2 * l;
        if (l == 0) {
            ops::conv2d_backward_accumulate(trace.conv_in[l], model.params[p].value, grad, ops::Padding::Same,
                                            model.params[p].grad, model.params[p + 1].grad, nullptr);
        } else {
            Tensor grad_in(trace.conv_in[l].shape());
            ops::conv2d_backward_accumulate(trace.conv_in[l], model.params[p].value, grad, ops::Padding::Same,
                                            model.params[p].grad, model.params[p + 1].grad, &grad_in);
            grad = std::move(grad_in);
        }
    }
    return ce.loss;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
}

double accuracy(const CnnModel& model, std::span<const LabeledPatch> data) {
    if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    for (const auto& p : data) correct += predict_label(model, p.pixels) == p.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainReport train(CnnModel& model, std::span<const LabeledPatch> data, const TrainConfig& cfg,
                  std::span<const LabeledPatch> verify) {
    cfg.validate();
    std::array<std::size_t, kNumClasses> per_class{};
    for (const auto& p : data) {
        if (p.label < 0 || p.label >= kNumClasses) {
            throw DataError("training label " + std::to_string(p.label) + " out of range");
        }
        require_shape(p.pixels, model.arch.input_shape(), "training patch");
        ++per_class[static_cast<std::size_t>(p.label)];
    }
    for (int c = 0; c < kNumClasses; ++c) {
        if (per_class[static_cast<std::size_t>(c)] == 0) {
            throw DataError("training data has no patches of class " + std::to_string(c));
        }
    }

    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    Rng dropout_rng(derive_seed(cfg.seed, 2));
    std::vector<Tensor> velocity;
    for (auto& p : model.params) {
        p.grad.fill(0.0);
        velocity.emplace_back(p.value.shape());
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t i = start; i < stop; ++i) {
                const LabeledPatch& p = data[order[i]];
                loss_sum += accumulate_gradients(model, p.pixels, p.label, &dropout_rng);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& p : model.params) {
                for (double& g : p.grad.data()) g *= inv;
            }
            ops::sgd_step(model.params, velocity, cfg.learning_rate, cfg.momentum);
            ++model.trained_iterations;
        }
        const double mean_loss = loss_sum / static_cast<double>(order.size());
        if (!std::isfinite(mean_loss)) throw DataError("training diverged (non-finite loss)");
        report.epoch_loss.push_back(mean_loss);
    }
    report.verify_accuracy = accuracy(model, verify);
    return report;
}

std::string encode_checkpoint(const CnnModel& model) {
    detail::ByteWriter w;
    w.bytes("SPCK");
    w.u32(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(model.arch.variant));
    w.u32(static_cast<std::uint32_t>(model.arch.conv_kernel_counts.size()));
    for (auto c : model.arch.conv_kernel_counts) w.u32(static_cast<std::uint32_t>(c));
    w.u32(static_cast<std::uint32_t>(model.arch.fc_sizes.size()));
    for (auto f : model.arch.fc_sizes) w.u32(static_cast<std::uint32_t>(f));
    w.u32(static_cast<std::uint32_t>(model.arch.in_channels));
    w.u32(static_cast<std::uint32_t>(model.arch.in_height));
    w.u32(static_cast<std::uint32_t>(model.arch.in_width));
    w.f64(model.arch.dropout_rate);
    w.f64(model.arch.leaky_slope);
    w.u64(model.rng_seed);
    w.u64(model.trained_iterations);
    for (const auto& p : model.params) {
        w.u32(static_cast<std::uint32_t>(p.value.size()));
        for (double v : p.value.data()) w.f64(v);
    }
    return w.buffer();
}

CnnModel decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.bytes(4, "magic") != "SPCK") throw FormatError("bad checkpoint magic", 0);
    const std::uint64_t version_at = r.offset();
    if (r.u32("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);

    Architecture arch;
    const std::uint64_t variant_at = r.offset();
    const std::uint8_t tag = r.u8("variant tag");
    if (tag > static_cast<std::uint8_t>(Variant::DropFirstConv)) throw FormatError("unknown variant tag", variant_at);
    arch.variant = static_cast<Variant>(tag);
    const auto read_counts = [&](const char* what) {
        const std::uint64_t at = r.offset();
        const std::uint32_t n = r.u32(what);
        if (n > 64) throw FormatError(std::string("implausible layer count for ") + what, at);
        std::vector<std::size_t> counts(n);
        for (auto& c : counts) c = r.u32(what);
        return counts;
    };
    arch.conv_kernel_counts = read_counts("conv kernel counts");
    arch.fc_sizes = read_counts("fc sizes");
    arch.in_channels = r.u32("input channels");
    arch.in_height = r.u32("input height");
    arch.in_width = r.u32("input width");
    arch.dropout_rate = r.f64("dropout rate");
    arch.leaky_slope = r.f64("leaky slope");
    const std::uint64_t arch_end = r.offset();
    try {
        arch.validate();
    } catch (const ParameterError& e) {
        throw FormatError(std::string("invalid architecture: ") + e.what(), arch_end);
    }

    CnnModel model;
    model.arch = arch;
    model.rng_seed = r.u64("rng seed");
    model.trained_iterations = r.u64("trained iterations");
    for (const auto& shape : parameter_shapes(arch)) {
        const std::uint64_t at = r.offset();
        const std::uint32_t len = r.u32("parameter length");
        if (len != shape_size(shape)) {
            throw FormatError("parameter length " + std::to_string(len) + " does not match shape " +
                                  shape_string(shape),
                              at);
        }
        r.need(std::uint64_t{len} * 8, "parameter values");
        std::vector<double> values(len);
        for (auto& v : values) v = r.f64("parameter value");
        model.params.emplace_back(Tensor(shape, std::move(values)));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
    return model;
}

void save_checkpoint(const CnnModel& model, const std::string& path) {
    detail::write_file(path, encode_checkpoint(model));
}

CnnModel load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace spcnn
