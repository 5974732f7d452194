#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spcnn/patch.hpp"

namespace spcnn {

/// Texture parameters for one synthetic class.
struct ClassTexture {
    double base_intensity = 0.5;
    double blob_density = 1.0;  // expected blobs per patch
    double blob_radius_min = 2.0;
    double blob_radius_max = 4.0;
    double blob_contrast = -0.3;  // intensity added inside a blob
    double noise_sigma = 0.03;    // per-pixel noise; also scales the patch-level brightness offset
};

/// Class 0 renders dark circular lumens with a bright wall (airway-like),
/// class 1 a dark mottled field of round holes (emphysema-like) and class 2 a
/// finely speckled medium-intensity background (tissue-like).
struct SyntheticSpec {
    std::array<ClassTexture, kNumClasses> classes = default_textures();
    std::size_t labeled_per_class = 600;
    std::size_t pool_size = 3000;
    std::array<double, kNumClasses> pool_proportions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    std::size_t benchmark_per_class = 200;
    /// Probability that a patch also contains a region of another class's
    /// texture (the patch keeps the label of its dominant texture).
    double boundary_fraction = 0.2;
    /// Patch-level brightness offset sd, as a multiple of the class noise sigma.
    double brightness_jitter = 2.0;
    std::uint64_t seed = 0;

    static std::array<ClassTexture, kNumClasses> default_textures();

    /// Sets every class's noise sigma.
    void set_noise_sigma(double sigma);
    void validate() const;
};

/// True labels of the unlabeled pool, indexed by patch_id. Kept in a separate
/// type so code that consumes an UnlabeledPool cannot see them.
struct PoolTruth {
    std::vector<int> labels;

    int label_of(std::int64_t patch_id) const;
};

struct SyntheticData {
    LabeledSet labeled;
    UnlabeledPool pool;
    PoolTruth pool_truth;
    LabeledSet benchmark;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// One synthetic patch of the given class; pixel values are multiples of
/// 1/1024 in [0,1], so they survive f32 storage exactly.
Tensor render_patch(const SyntheticSpec& spec, int label, std::uint64_t seed);

struct SplitSpec {
    std::size_t train_per_class = 400;
    std::size_t verify_per_class = 200;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Split {
    LabeledSet train;
    LabeledSet verify;
};

/// Per-class shuffle, then the first train_per_class go to train and the next
/// verify_per_class to verify.
Split split(std::span<const LabeledPatch> data, const SplitSpec& spec);

std::array<std::size_t, kNumClasses> class_counts(std::span<const LabeledPatch> data);

inline constexpr std::uint32_t kPatchFileVersion = 1;

struct PatchFile {
    std::size_t height = kPatchSize;
    std::size_t width = kPatchSize;
    std::size_t channels = kPatchChannels;
    std::vector<Tensor> pixels;
    std::optional<std::vector<int>> labels;
};

std::string encode_patches(const PatchFile& file);
PatchFile decode_patches(std::string_view bytes);

void save_labeled(const std::string& path, std::span<const LabeledPatch> patches);
void save_unlabeled(const std::string& path, const UnlabeledPool& pool);
PatchFile load_patches(const std::string& path);

/// Loaded manual patches get id = record index.
LabeledSet load_labeled(const std::string& path, Origin origin = Origin::Manual);
/// patch_id = record index; labels in the file, if any, are dropped.
UnlabeledPool load_unlabeled(const std::string& path);

}  // namespace spcnn
