#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spcnn/ops.hpp"
#include "spcnn/patch.hpp"
#include "spcnn/tensor.hpp"

namespace spcnn {

enum class Variant : std::uint8_t {
    Baseline = 0,
    Half = 1,           // conv counts and hidden fc sizes halved (ceil)
    Plus50 = 2,         // conv counts and hidden fc sizes x1.5 (ceil)
    ExtraFc = 3,        // extra 180-neuron fc layer before the output layer
    DropFirstConv = 4,  // first conv layer removed
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Layer stack: [conv3x3 same -> LeakyReLU -> maxpool2x2] for every conv but
/// the last, then conv3x3 -> LeakyReLU -> global max pool, then
/// [fc -> LeakyReLU -> dropout] for every fc but the last, then fc -> softmax.
struct Architecture {
    std::vector<std::size_t> conv_kernel_counts;
    std::vector<std::size_t> fc_sizes;
    double dropout_rate = 0.5;
    double leaky_slope = ops::kDefaultLeakySlope;
    std::size_t in_channels = kPatchChannels;
    std::size_t in_height = kPatchSize;
    std::size_t in_width = kPatchSize;
    Variant variant = Variant::Baseline;

    Shape input_shape() const { return {in_channels, in_height, in_width}; }

    /// Throws ParameterError for anything that cannot be built.
    void validate() const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

Architecture make_architecture(Variant variant);

/// Multiplies every conv count and hidden fc size by `factor` (ceil), keeping
/// the 3-way output layer. Used for reduced-size experiments.
Architecture scale_architecture(const Architecture& arch, double factor);

/// Shapes of the activations produced by each stage, starting with the input.
std::vector<Shape> activation_shapes(const Architecture& arch);

/// Parameter tensor shapes in declaration order (per conv: kernels, bias;
/// per fc: weight, bias).
std::vector<Shape> parameter_shapes(const Architecture& arch);

std::size_t parameter_count(const Architecture& arch);

struct CnnModel {
    Architecture arch;
    std::vector<GradPair> params;
    std::uint64_t rng_seed = 0;
    std::uint64_t trained_iterations = 0;

    std::size_t conv_layers() const { return arch.conv_kernel_counts.size(); }
    std::size_t fc_layers() const { return arch.fc_sizes.size(); }
    const Tensor& conv_kernels(std::size_t l) const { return params[2 * l].value; }
    const Tensor& conv_bias(std::size_t l) const { return params[2 * l + 1].value; }
    const Tensor& fc_weight(std::size_t j) const { return params[2 * (conv_layers() + j)].value; }
    const Tensor& fc_bias(std::size_t j) const { return params[2 * (conv_layers() + j) + 1].value; }

    /// Bitwise equality of architecture and all parameter values.
    bool same_parameters(const CnnModel& other) const;
};

/// Fan-in uniform init (bound sqrt(6 / fan_in)), zero biases.
CnnModel build_model(const Architecture& arch, std::uint64_t seed);

Tensor forward_logits(const CnnModel& model, const Tensor& patch);
Tensor forward_proba(const CnnModel& model, const Tensor& patch);
int predict_label(const CnnModel& model, const Tensor& patch);

/// One training-mode forward/backward pass. Adds d(loss)/d(param) into the
/// model's gradient buffers and returns the loss. Dropout draws from
/// `dropout_rng`; pass null to run dropout in inference mode.
double accumulate_gradients(CnnModel& model, const Tensor& patch, int label, Rng* dropout_rng);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double verify_accuracy = 0.0;  // NaN when no verify set was given
};

/// Mini-batch momentum SGD over shuffled data; gradients are averaged over
/// the batch. Every class must be represented.
TrainReport train(CnnModel& model, std::span<const LabeledPatch> data, const TrainConfig& cfg,
                  std::span<const LabeledPatch> verify = {});

double accuracy(const CnnModel& model, std::span<const LabeledPatch> data);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const CnnModel& model);
CnnModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(const CnnModel& model, const std::string& path);
CnnModel load_checkpoint(const std::string& path);

}  // namespace spcnn
