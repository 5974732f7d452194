#include "spcnn/bootstrap.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/rng.hpp"

namespace spcnn {

void BootstrapConfig::validate() const {
    if (n_networks < 2) throw ParameterError("bootstrap needs n_networks >= 2");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
        throw ParameterError("subsample_fraction must lie in (0, 1]");
    }
    if (n_workers < 1) throw ParameterError("n_workers must be >= 1");
    train.validate();
}

std::size_t subsample_count(std::size_t count, double fraction) {
    // fraction * count can land one ulp below an exact half (0.7 * 45), so
    // halves are detected with a small relative slack.
    const double x = fraction * static_cast<double>(count);
    return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9 * std::max(1.0, x)));
}

LabeledSet subsample(std::span<const LabeledPatch> train_set, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("subsample fraction must lie in (0, 1]");
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        const int label = train_set[i].label;
        if (label < 0 || label >= kNumClasses) throw DataError("label out of range: " + std::to_string(label));
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    Rng rng(derive_seed(seed, 0x5ab5));
    LabeledSet out;
    for (int c = 0; c < kNumClasses; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        const std::size_t keep = subsample_count(idx.size(), fraction);
        if (keep == 0) {
            throw DataError("subsample of class " + std::to_string(c) + " is empty (" + std::to_string(idx.size()) +
                            " patches)");
        }
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < keep; ++k) out.push_back(train_set[idx[k]]);
    }
    rng.shuffle(std::span<LabeledPatch>(out));
    return out;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
    std::vector<std::exception_ptr> errors(count);
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                job(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < std::min(workers, count); ++w) {
            threads.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        job(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::vector<CnnModel> train_ensemble(std::span<const LabeledPatch> train_set, const Architecture& arch,
                                     const BootstrapConfig& cfg) {
    cfg.validate();
    arch.validate();
    std::vector<CnnModel> models(cfg.n_networks);
    parallel_for(cfg.n_networks, cfg.n_workers, [&](std::size_t i) {
        const std::uint64_t seed = cfg.base_seed + i;
        try {
            const LabeledSet sample = subsample(train_set, cfg.subsample_fraction, seed);
            CnnModel model = build_model(arch, seed);
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            train(model, sample, tc);
            models[i] = std::move(model);
        } catch (const Error&) {
            rethrow_with_context("bootstrap network " + std::to_string(i) + ": ");
        }
    });
    return models;
}

std::vector<double> PredictionMatrix::column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
    return out;
}

double PredictionMatrix::column_mean(std::size_t c) const {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += at(r, c);
    return s / static_cast<double>(rows);
}

std::vector<PredictionMatrix> predict_pool(std::span<const CnnModel> ensemble, const UnlabeledPool& pool,
                                           std::size_t n_workers) {
    if (ensemble.empty()) throw ParameterError("predict_pool needs a nonempty ensemble");
    const std::size_t b = ensemble.size();
    constexpr std::size_t c = kNumClasses;
    std::vector<PredictionMatrix> out(pool.size());
    for (std::size_t p = 0; p < pool.size(); ++p) {
        out[p] = PredictionMatrix{pool[p].patch_id, b, c, std::vector<double>(b * c)};
    }
    parallel_for(b, n_workers, [&](std::size_t net) {
        for (std::size_t p = 0; p < pool.size(); ++p) {
            Tensor probs;
            try {
                probs = forward_proba(ensemble[net], pool[p].pixels);
            } catch (const DimensionError& e) {
                throw DimensionError("pool patch " + std::to_string(pool[p].patch_id) + ": " + e.what());
            }
            for (std::size_t k = 0; k < c; ++k) out[p].probs[net * c + k] = probs[k];
        }
    });
    return out;
}

namespace {

constexpr const char* kPredictionHeader = "patch_id,network_index,p_class0,p_class1,p_class2";

}  // namespace

void write_predictions_csv(const std::string& path, std::span<const PredictionMatrix> matrices) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << kPredictionHeader << '\n';
    for (const auto& m : matrices) {
        for (std::size_t r = 0; r < m.rows; ++r) {
            out << m.patch_id << ',' << r;
            for (std::size_t c = 0; c < m.cols; ++c) out << ',' << detail::format_double(m.at(r, c));
            out << '\n';
        }
    }
    if (!out) throw DataError("write failed for " + path);
}

std::vector<PredictionMatrix> read_predictions_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kPredictionHeader) {
        throw DataError(path + ": missing or unexpected predictions header");
    }
    std::vector<PredictionMatrix> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 2 + kNumClasses) {
            throw DataError("predictions csv line " + std::to_string(line_no) + ": expected 5 fields");
        }
        const auto id = detail::parse_number<std::int64_t>(f[0], path, line_no);
        const auto net = detail::parse_number<std::size_t>(f[1], path, line_no);
        if (net == 0) {
            out.push_back(PredictionMatrix{id, 0, kNumClasses, {}});
        } else if (out.empty() || out.back().patch_id != id || out.back().rows != net) {
            throw DataError("predictions csv line " + std::to_string(line_no) +
                            ": rows of a patch must be contiguous with network_index 0, 1, ...");
        }
        auto& m = out.back();
        for (std::size_t c = 0; c < kNumClasses; ++c) m.probs.push_back(detail::parse_number<double>(f[2 + c], path, line_no));
        ++m.rows;
    }
    for (const auto& m : out) {
        if (m.rows != out.front().rows) throw DataError(path + ": patches have differing numbers of networks");
    }
    return out;
}

}  // namespace spcnn
