#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spcnn/bootstrap.hpp"
#include "spcnn/dataset.hpp"
#include "spcnn/network.hpp"
#include "spcnn/selection.hpp"

namespace spcnn {

enum class DataSource { Synthetic, Files };

/// Everything a pipeline run depends on. Stage seeds are not configured
/// individually; they are derived from `seed` (see the *_seed helpers).
struct PipelineConfig {
    std::uint64_t seed = 1;

    DataSource source = DataSource::Synthetic;
    std::string labeled_path;    // labeled patch file, split into train/verify
    std::string pool_path;       // unlabeled pool; labels in the file are used only as hidden truth
    std::string benchmark_path;  // labeled benchmark file

    SyntheticSpec synthetic;
    SplitSpec split;

    Variant variant = Variant::Baseline;
    double width_scale = 1.0;
    double dropout_rate = 0.5;
    double leaky_slope = 0.01;

    TrainConfig baseline_train;
    TrainConfig bootstrap_train;
    TrainConfig retrain_train;

    std::size_t n_networks = 10;
    double subsample_fraction = 0.9;
    std::size_t n_workers = 1;

    double alpha = 0.1;
    std::vector<double> alpha_schedule;  // per-round alphas; the last entry repeats
    FamilyStrategy family = FamilyStrategy::TwoFamilies;

    std::size_t rounds = 1;
    std::string output_dir = "spcnn_out";

    void validate() const;

    Architecture architecture() const;
    /// Alpha used in round r (1-based).
    double alpha_for_round(std::size_t round) const;

    std::uint64_t synthetic_seed() const;
    std::uint64_t split_seed() const;
    std::uint64_t baseline_seed() const;
    std::uint64_t bootstrap_seed(std::size_t round) const;
    std::uint64_t retrain_seed(std::size_t round) const;

    BootstrapConfig bootstrap_config(std::size_t round) const;
};

/// Parses flat `key = value` lines. `#` starts a comment. Keys without a
/// role qualifier (`train.epochs`) apply first, qualified keys
/// (`train.retrain.epochs`, `synthetic.class1.noise_sigma`) override them.
/// Unknown keys, duplicate keys and bad values raise ConfigError.
PipelineConfig parse_config(std::string_view text, const std::string& source = "<config>");
PipelineConfig load_config(const std::string& path);

/// Applies one `key=value` setting on top of an existing config.
void apply_setting(PipelineConfig& cfg, std::string_view key, std::string_view value);

/// Every setting as parseable key=value text, in a fixed order.
std::string format_config(const PipelineConfig& cfg);

}  // namespace spcnn
