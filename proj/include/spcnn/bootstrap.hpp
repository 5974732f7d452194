#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spcnn/network.hpp"
#include "spcnn/patch.hpp"

namespace spcnn {

struct BootstrapConfig {
    std::size_t n_networks = 10;
    double subsample_fraction = 0.9;
    std::uint64_t base_seed = 0;
    TrainConfig train;
    std::size_t n_workers = 1;

    void validate() const;
};

/// Number of patches kept from a class of `count`: round-half-up of
/// fraction * count.
std::size_t subsample_count(std::size_t count, double fraction);

/// Class-stratified sampling without replacement. The result is shuffled.
LabeledSet subsample(std::span<const LabeledPatch> train_set, double fraction, std::uint64_t seed);

/// Network i is initialised and trained with seed base_seed + i on
/// subsample(seed = base_seed + i). Trainings are spread over n_workers
/// threads; the result does not depend on the worker count.
std::vector<CnnModel> train_ensemble(std::span<const LabeledPatch> train_set, const Architecture& arch,
                                     const BootstrapConfig& cfg);

/// B x C class probabilities of one pool patch, row i from network i.
struct PredictionMatrix {
    std::int64_t patch_id = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> probs;

    double at(std::size_t r, std::size_t c) const { return probs[r * cols + c]; }
    std::vector<double> column(std::size_t c) const;
    double column_mean(std::size_t c) const;

    friend bool operator==(const PredictionMatrix&, const PredictionMatrix&) = default;
};

/// One matrix per pool patch, in pool order.
std::vector<PredictionMatrix> predict_pool(std::span<const CnnModel> ensemble, const UnlabeledPool& pool,
                                           std::size_t n_workers = 1);

void write_predictions_csv(const std::string& path, std::span<const PredictionMatrix> matrices);
std::vector<PredictionMatrix> read_predictions_csv(const std::string& path);

/// Runs `count` independent jobs on up to `workers` threads. Jobs are claimed
/// in index order; the first exception (lowest index) is rethrown.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job);

}  // namespace spcnn
