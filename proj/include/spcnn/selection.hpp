#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spcnn/bootstrap.hpp"
#include "spcnn/patch.hpp"

namespace spcnn {

/// How the per-patch p-values are grouped for FDR control.
enum class FamilyStrategy {
    TwoFamilies,  // one BH family per runner-up comparison, AND per patch
    Pooled,       // a single family of all 2N p-values
    MaxP,         // per-patch max of the two p-values, one family of N
};

std::string_view family_strategy_name(FamilyStrategy s);
FamilyStrategy parse_family_strategy(std::string_view name);

struct PatchVerdict {
    std::int64_t patch_id = 0;
    int candidate_label = -1;  // -1 when the top column mean is tied
    std::array<double, kNumClasses> means{};
    std::array<int, 2> runner_ups{-1, -1};  // by decreasing mean, ties to the lower class id
    double p_first = 1.0;                   // candidate vs runner_ups[0]
    double p_second = 1.0;                  // candidate vs runner_ups[1]
    bool pass_first = false;
    bool pass_second = false;
    bool selected = false;

    bool tied() const { return candidate_label < 0; }
};

struct SelectionReport {
    double alpha = 0.0;
    FamilyStrategy strategy = FamilyStrategy::TwoFamilies;
    std::vector<PatchVerdict> verdicts;
    std::size_t n_selected = 0;
    std::size_t n_tied = 0;
    LabeledSet virtual_samples;  // origin Virtual, id = pool patch_id
};

/// Tests, for every pool patch, whether its candidate (highest mean) class
/// has a significantly higher bootstrap probability than each of the other
/// two classes, with FDR control across the pool. Tied patches are excluded
/// from testing and never selected.
SelectionReport select_virtual_samples(std::span<const PredictionMatrix> matrices, const UnlabeledPool& pool,
                                       double alpha, FamilyStrategy strategy = FamilyStrategy::TwoFamilies);

void write_selection_csv(const std::string& path, const SelectionReport& report);

/// The columns of a selection CSV needed to rebuild the virtual samples.
struct SelectionRow {
    std::int64_t patch_id = 0;
    int candidate_label = -1;
    bool selected = false;
};

std::vector<SelectionRow> read_selection_csv(const std::string& path);

}  // namespace spcnn
