#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spcnn/tensor.hpp"

namespace spcnn {

inline constexpr int kNumClasses = 3;
inline constexpr std::size_t kPatchChannels = 1;
inline constexpr std::size_t kPatchSize = 36;

enum class Origin : std::uint8_t { Manual, Virtual };

/// A [1,36,36] patch with pixels in [0,1] and a class id in {0,1,2}.
/// `id` is the index within the labeled collection for manual patches and
/// the source pool patch_id for virtual ones.
struct LabeledPatch {
    Tensor pixels;
    int label = 0;
    Origin origin = Origin::Manual;
    std::int64_t id = 0;
};

struct UnlabeledPatch {
    Tensor pixels;
    std::int64_t patch_id = 0;
};

using LabeledSet = std::vector<LabeledPatch>;
using UnlabeledPool = std::vector<UnlabeledPatch>;

}  // namespace spcnn
