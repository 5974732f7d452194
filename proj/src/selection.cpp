#include "spcnn/selection.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/stats.hpp"

namespace spcnn {

std::string_view family_strategy_name(FamilyStrategy s) {
    switch (s) {
        case FamilyStrategy::TwoFamilies: return "two_families";
        case FamilyStrategy::Pooled: return "pooled";
        case FamilyStrategy::MaxP: return "max_p";
    }
    return "unknown";
}

FamilyStrategy parse_family_strategy(std::string_view name) {
    for (auto s : {FamilyStrategy::TwoFamilies, FamilyStrategy::Pooled, FamilyStrategy::MaxP}) {
        if (family_strategy_name(s) == name) return s;
    }
    throw ParameterError("unknown FDR family strategy '" + std::string(name) + "'");
}

namespace {

PatchVerdict test_patch(const PredictionMatrix& m) {
    if (m.cols != static_cast<std::size_t>(kNumClasses)) {
        throw DataError("prediction matrix of patch " + std::to_string(m.patch_id) + " has " +
                        std::to_string(m.cols) + " columns");
    }
    PatchVerdict v;
    v.patch_id = m.patch_id;
    for (std::size_t c = 0; c < kNumClasses; ++c) v.means[c] = m.column_mean(c);

    std::array<int, kNumClasses> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return v.means[static_cast<std::size_t>(i)] > v.means[static_cast<std::size_t>(j)];
    });
    if (v.means[static_cast<std::size_t>(order[0])] == v.means[static_cast<std::size_t>(order[1])]) return v;

    v.candidate_label = order[0];
    v.runner_ups = {order[1], order[2]};
    const auto top = m.column(static_cast<std::size_t>(order[0]));
    v.p_first = welch_t_one_sided(top, m.column(static_cast<std::size_t>(order[1]))).p_value;
    v.p_second = welch_t_one_sided(top, m.column(static_cast<std::size_t>(order[2]))).p_value;
    return v;
}

}  // namespace

SelectionReport select_virtual_samples(std::span<const PredictionMatrix> matrices, const UnlabeledPool& pool,
                                       double alpha, FamilyStrategy strategy) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
    if (matrices.size() != pool.size()) {
        throw DataError("selection: " + std::to_string(matrices.size()) + " prediction matrices for a pool of " +
                        std::to_string(pool.size()));
    }
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (matrices[i].patch_id != pool[i].patch_id) {
            throw DataError("selection: prediction matrix " + std::to_string(i) + " has patch_id " +
                            std::to_string(matrices[i].patch_id) + ", pool has " + std::to_string(pool[i].patch_id));
        }
    }

    SelectionReport report;
    report.alpha = alpha;
    report.strategy = strategy;
    report.verdicts.reserve(matrices.size());
    for (const auto& m : matrices) report.verdicts.push_back(test_patch(m));

    std::vector<std::size_t> tested;
    std::vector<double> first, second;
    for (std::size_t i = 0; i < report.verdicts.size(); ++i) {
        const auto& v = report.verdicts[i];
        if (v.tied()) {
            ++report.n_tied;
            continue;
        }
        tested.push_back(i);
        first.push_back(v.p_first);
        second.push_back(v.p_second);
    }

    const std::size_t n = tested.size();
    switch (strategy) {
        case FamilyStrategy::TwoFamilies: {
            const auto r1 = bh_fdr(first, alpha);
            const auto r2 = bh_fdr(second, alpha);
            for (std::size_t k = 0; k < n; ++k) {
                report.verdicts[tested[k]].pass_first = r1[k];
                report.verdicts[tested[k]].pass_second = r2[k];
            }
            break;
        }
        case FamilyStrategy::Pooled: {
            std::vector<double> all = first;
            all.insert(all.end(), second.begin(), second.end());
            const auto r = bh_fdr(all, alpha);
            for (std::size_t k = 0; k < n; ++k) {
                report.verdicts[tested[k]].pass_first = r[k];
                report.verdicts[tested[k]].pass_second = r[n + k];
            }
            break;
        }
        case FamilyStrategy::MaxP: {
            std::vector<double> worst(n);
            for (std::size_t k = 0; k < n; ++k) worst[k] = std::max(first[k], second[k]);
            const auto r = bh_fdr(worst, alpha);
            for (std::size_t k = 0; k < n; ++k) {
                report.verdicts[tested[k]].pass_first = r[k];
                report.verdicts[tested[k]].pass_second = r[k];
            }
            break;
        }
    }

    for (std::size_t i = 0; i < report.verdicts.size(); ++i) {
        auto& v = report.verdicts[i];
        v.selected = v.pass_first && v.pass_second;
        if (!v.selected) continue;
        ++report.n_selected;
        report.virtual_samples.push_back({pool[i].pixels, v.candidate_label, Origin::Virtual, pool[i].patch_id});
    }
    return report;
}

void write_selection_csv(const std::string& path, const SelectionReport& report) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "patch_id,candidate_label,mean_p0,mean_p1,mean_p2,p_first,p_second,pass_first,pass_second,selected\n";
    for (const auto& v : report.verdicts) {
        out << v.patch_id << ',' << v.candidate_label;
        for (double m : v.means) out << ',' << detail::format_double(m);
        out << ',' << detail::format_double(v.p_first) << ',' << detail::format_double(v.p_second) << ','
            << int{v.pass_first} << ',' << int{v.pass_second} << ',' << int{v.selected} << '\n';
    }
    if (!out) throw DataError("write failed for " + path);
}

std::vector<SelectionRow> read_selection_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("patch_id,candidate_label,", 0) != 0) {
        throw DataError(path + ": missing or unexpected selection header");
    }
    std::vector<SelectionRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 10) throw DataError(path + " line " + std::to_string(line_no) + ": expected 10 fields");
        SelectionRow row;
        row.patch_id = detail::parse_number<std::int64_t>(f[0], path, line_no);
        row.candidate_label = detail::parse_number<int>(f[1], path, line_no);
        row.selected = detail::parse_number<int>(f[9], path, line_no) != 0;
        if (row.selected && (row.candidate_label < 0 || row.candidate_label >= kNumClasses)) {
            throw DataError(path + " line " + std::to_string(line_no) + ": selected row without a valid label");
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace spcnn
