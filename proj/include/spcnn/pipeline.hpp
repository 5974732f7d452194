#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spcnn/bootstrap.hpp"
#include "spcnn/config.hpp"
#include "spcnn/dataset.hpp"
#include "spcnn/network.hpp"
#include "spcnn/selection.hpp"

namespace spcnn {

struct PreparedData {
    LabeledSet train;
    LabeledSet verify;
    LabeledSet benchmark;
    UnlabeledPool pool;
    std::optional<PoolTruth> pool_truth;  // synthetic data, or a pool file that carries labels
};

/// Generates or loads the data and splits the labeled set.
PreparedData prepare_data(const PipelineConfig& cfg);

struct EvalReport {
    std::size_t round = 0;  // 0 is the baseline
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
    std::array<double, kNumClasses> precision{};  // NaN when nothing was predicted as the class
    std::array<double, kNumClasses> recall{};     // NaN when the class is absent
    double accuracy = 0.0;
    std::size_t n_benchmark = 0;
    std::size_t n_virtual_used = 0;
    std::size_t n_train_total = 0;

    std::string to_json() const;
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Selection counts for one round; `precision` is null in the output when NaN.
std::string selection_json(const SelectionReport& report, double precision);

EvalReport evaluate(const CnnModel& model, std::span<const LabeledPatch> benchmark);

/// Fraction of pool patches whose predicted label matches the hidden truth.
double pool_accuracy(const CnnModel& model, const UnlabeledPool& pool, const PoolTruth& truth);

/// Precision of the virtual labels against the hidden truth; NaN when empty.
double virtual_label_precision(std::span<const LabeledPatch> virtual_samples, const PoolTruth& truth);

/// The training set and the still-unlabeled pool entering a round.
struct TrainingState {
    LabeledSet train;
    UnlabeledPool pool;

    std::size_t n_virtual() const;
};

TrainingState initial_state(const PreparedData& data);

/// Moves the selected rows' pool patches into the training set as virtual
/// samples. Every selected id must be present in the pool.
TrainingState apply_selection(const TrainingState& state, std::span<const SelectionRow> rows);
std::vector<SelectionRow> selection_rows(const SelectionReport& report);

CnnModel train_baseline_model(const PipelineConfig& cfg, const PreparedData& data);
std::vector<CnnModel> train_round_ensemble(const PipelineConfig& cfg, std::size_t round, const LabeledSet& train);
SelectionReport select_round(const PipelineConfig& cfg, std::span<const PredictionMatrix> predictions,
                             const UnlabeledPool& pool, double alpha);
/// Fresh initialisation, trained on the mixed set.
CnnModel retrain_round_model(const PipelineConfig& cfg, std::size_t round, const LabeledSet& train,
                             const LabeledSet& verify);

struct BaselineResult {
    CnnModel model;
    EvalReport report;
    double pool_accuracy = 0.0;  // NaN without pool truth
};

struct RoundResult {
    std::size_t round = 0;
    double alpha = 0.0;
    SelectionReport selection;
    CnnModel model;
    EvalReport report;
    double selection_precision = 0.0;  // NaN without pool truth or selections
};

/// An empty `out_dir` skips all artifact writes.
BaselineResult run_baseline(const PipelineConfig& cfg, const PreparedData& data,
                            const std::filesystem::path& out_dir = {});

/// Bootstrap, select, retrain and evaluate. `state` is advanced in place.
RoundResult run_round(const PipelineConfig& cfg, std::size_t round, const PreparedData& data, TrainingState& state,
                      const std::filesystem::path& out_dir = {});

struct PipelineResult {
    BaselineResult baseline;
    std::vector<RoundResult> rounds;
    std::size_t initial_pool_size = 0;
    std::size_t final_pool_size = 0;

    /// Baseline first, then one report per round.
    std::vector<EvalReport> reports() const;
};

/// Baseline plus cfg.rounds rounds; writes summary.csv and per-stage
/// artifacts under `out_dir` unless it is empty.
PipelineResult run_pipeline(const PipelineConfig& cfg, const PreparedData& data,
                            const std::filesystem::path& out_dir = {});
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir = {});

std::string summary_csv(const PipelineResult& result);

/// Rebuilds the state entering `round` from the selection CSVs that earlier
/// rounds wrote under `out_dir`.
TrainingState state_for_round(const PreparedData& data, const std::filesystem::path& out_dir, std::size_t round);

std::filesystem::path round_dir(const std::filesystem::path& out_dir, std::size_t round);

struct BenchTiming {
    std::size_t workers = 0;
    double seconds = 0.0;
};

/// Trains the round-1 ensemble once per worker count. Throws
/// DeterminismError if any run's checkpoints differ from the first run's.
std::vector<BenchTiming> benchmark_parallel(const PipelineConfig& cfg, const LabeledSet& train,
                                            std::span<const std::size_t> worker_counts);

}  // namespace spcnn
