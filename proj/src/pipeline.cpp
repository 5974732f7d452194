#include "spcnn/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"

namespace spcnn {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string two_digits(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%02zu", i);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    detail::write_file(path.string(), text);
}

nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void write_eval(const fs::path& path, const EvalReport& report, const nlohmann::json& extra) {
    auto j = nlohmann::json::parse(report.to_json());
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_text(path, j.dump(2) + "\n");
}

}  // namespace

PreparedData prepare_data(const PipelineConfig& cfg) {
    try {
        PreparedData out;
        LabeledSet labeled;
        if (cfg.source == DataSource::Synthetic) {
            SyntheticSpec spec = cfg.synthetic;
            spec.seed = cfg.synthetic_seed();
            SyntheticData data = generate_synthetic(spec);
            labeled = std::move(data.labeled);
            out.pool = std::move(data.pool);
            out.pool_truth = std::move(data.pool_truth);
            out.benchmark = std::move(data.benchmark);
        } else {
            labeled = load_labeled(cfg.labeled_path);
            PatchFile pool_file = load_patches(cfg.pool_path);
            if (pool_file.labels) out.pool_truth = PoolTruth{*pool_file.labels};
            for (std::size_t i = 0; i < pool_file.pixels.size(); ++i) {
                out.pool.push_back({std::move(pool_file.pixels[i]), static_cast<std::int64_t>(i)});
            }
            out.benchmark = load_labeled(cfg.benchmark_path);
        }
        SplitSpec split_spec = cfg.split;
        split_spec.seed = cfg.split_seed();
        Split s = split(labeled, split_spec);
        out.train = std::move(s.train);
        out.verify = std::move(s.verify);
        if (out.pool.empty()) throw DataError("unlabeled pool is empty");
        if (out.benchmark.empty()) throw DataError("benchmark set is empty");
        return out;
    } catch (const Error&) {
        rethrow_with_context("data: ");
    }
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["round"] = round;
    j["accuracy"] = json_number(accuracy);
    j["n_benchmark"] = n_benchmark;
    j["n_virtual_used"] = n_virtual_used;
    j["n_train_total"] = n_train_total;
    j["confusion"] = confusion;
    j["precision"] = nlohmann::json::array();
    j["recall"] = nlohmann::json::array();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        j["precision"].push_back(json_number(precision[c]));
        j["recall"].push_back(json_number(recall[c]));
    }
    return j.dump(2);
}

std::string selection_json(const SelectionReport& report, double precision) {
    nlohmann::json j;
    j["alpha"] = report.alpha;
    j["family"] = family_strategy_name(report.strategy);
    j["n_tested"] = report.verdicts.size();
    j["n_tied"] = report.n_tied;
    j["n_selected"] = report.n_selected;
    j["selection_precision"] = json_number(precision);
    return j.dump(2);
}

EvalReport evaluate(const CnnModel& model, std::span<const LabeledPatch> benchmark) {
    if (benchmark.empty()) throw DataError("evaluate: empty benchmark set");
    EvalReport r;
    for (const auto& p : benchmark) {
        if (p.label < 0 || p.label >= kNumClasses) throw DataError("evaluate: label out of range");
        const int pred = predict_label(model, p.pixels);
        ++r.confusion[static_cast<std::size_t>(p.label)][static_cast<std::size_t>(pred)];
    }
    r.n_benchmark = benchmark.size();
    std::size_t correct = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::size_t row = 0, col = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            row += r.confusion[c][k];
            col += r.confusion[k][c];
        }
        correct += r.confusion[c][c];
        r.recall[c] = row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row) : kNaN;
        r.precision[c] = col ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(col) : kNaN;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_benchmark);
    return r;
}

double pool_accuracy(const CnnModel& model, const UnlabeledPool& pool, const PoolTruth& truth) {
    if (pool.empty()) return kNaN;
    std::size_t correct = 0;
    for (const auto& p : pool) correct += predict_label(model, p.pixels) == truth.label_of(p.patch_id);
    return static_cast<double>(correct) / static_cast<double>(pool.size());
}

double virtual_label_precision(std::span<const LabeledPatch> virtual_samples, const PoolTruth& truth) {
    if (virtual_samples.empty()) return kNaN;
    std::size_t correct = 0;
    for (const auto& v : virtual_samples) correct += v.label == truth.label_of(v.id);
    return static_cast<double>(correct) / static_cast<double>(virtual_samples.size());
}

std::size_t TrainingState::n_virtual() const {
    return static_cast<std::size_t>(
        std::count_if(train.begin(), train.end(), [](const LabeledPatch& p) { return p.origin == Origin::Virtual; }));
}

TrainingState initial_state(const PreparedData& data) { return {data.train, data.pool}; }

std::vector<SelectionRow> selection_rows(const SelectionReport& report) {
    std::vector<SelectionRow> rows;
    rows.reserve(report.verdicts.size());
    for (const auto& v : report.verdicts) rows.push_back({v.patch_id, v.candidate_label, v.selected});
    return rows;
}

TrainingState apply_selection(const TrainingState& state, std::span<const SelectionRow> rows) {
    std::unordered_map<std::int64_t, int> chosen;
    for (const auto& r : rows) {
        if (!r.selected) continue;
        if (!chosen.emplace(r.patch_id, r.candidate_label).second) {
            throw DataError("patch " + std::to_string(r.patch_id) + " selected twice");
        }
    }
    TrainingState next;
    next.train = state.train;
    std::size_t found = 0;
    for (const auto& p : state.pool) {
        const auto it = chosen.find(p.patch_id);
        if (it == chosen.end()) {
            next.pool.push_back(p);
            continue;
        }
        next.train.push_back({p.pixels, it->second, Origin::Virtual, p.patch_id});
        ++found;
    }
    if (found != chosen.size()) {
        throw DataError(std::to_string(chosen.size() - found) + " selected patch ids are not in the remaining pool");
    }
    return next;
}

CnnModel train_baseline_model(const PipelineConfig& cfg, const PreparedData& data) {
    CnnModel model = build_model(cfg.architecture(), cfg.baseline_seed());
    TrainConfig tc = cfg.baseline_train;
    tc.seed = cfg.baseline_seed();
    train(model, data.train, tc, data.verify);
    return model;
}

std::vector<CnnModel> train_round_ensemble(const PipelineConfig& cfg, std::size_t round, const LabeledSet& train) {
    return train_ensemble(train, cfg.architecture(), cfg.bootstrap_config(round));
}

SelectionReport select_round(const PipelineConfig& cfg, std::span<const PredictionMatrix> predictions,
                             const UnlabeledPool& pool, double alpha) {
    return select_virtual_samples(predictions, pool, alpha, cfg.family);
}

CnnModel retrain_round_model(const PipelineConfig& cfg, std::size_t round, const LabeledSet& train,
                             const LabeledSet& verify) {
    CnnModel model = build_model(cfg.architecture(), cfg.retrain_seed(round));
    TrainConfig tc = cfg.retrain_train;
    tc.seed = cfg.retrain_seed(round);
    spcnn::train(model, train, tc, verify);
    return model;
}

BaselineResult run_baseline(const PipelineConfig& cfg, const PreparedData& data, const fs::path& out_dir) {
    try {
        BaselineResult r;
        r.model = train_baseline_model(cfg, data);
        r.report = evaluate(r.model, data.benchmark);
        r.report.round = 0;
        r.report.n_train_total = data.train.size();
        r.pool_accuracy = data.pool_truth ? pool_accuracy(r.model, data.pool, *data.pool_truth) : kNaN;
        if (!out_dir.empty()) {
            const fs::path dir = out_dir / "baseline";
            fs::create_directories(dir);
            save_checkpoint(r.model, (dir / "model.ckpt").string());
            write_eval(dir / "eval.json", r.report, {{"pool_accuracy", json_number(r.pool_accuracy)}});
        }
        return r;
    } catch (const Error&) {
        rethrow_with_context("baseline: ");
    }
}

RoundResult run_round(const PipelineConfig& cfg, std::size_t round, const PreparedData& data, TrainingState& state,
                      const fs::path& out_dir) {
    const std::string where = "round " + std::to_string(round) + " / ";
    if (state.pool.empty()) throw DataError(where + "unlabeled pool is empty");
    const fs::path dir = out_dir.empty() ? fs::path{} : round_dir(out_dir, round);
    RoundResult r;
    r.round = round;
    r.alpha = cfg.alpha_for_round(round);

    std::vector<PredictionMatrix> predictions;
    try {
        const auto ensemble = train_round_ensemble(cfg, round, state.train);
        predictions = predict_pool(ensemble, state.pool, cfg.n_workers);
        if (!dir.empty()) {
            fs::create_directories(dir / "ensemble");
            for (std::size_t i = 0; i < ensemble.size(); ++i) {
                save_checkpoint(ensemble[i], (dir / "ensemble" / ("net_" + two_digits(i) + ".ckpt")).string());
            }
            write_predictions_csv((dir / "predictions.csv").string(), predictions);
        }
    } catch (const Error&) {
        rethrow_with_context(where + "bootstrap: ");
    }

    try {
        r.selection = select_round(cfg, predictions, state.pool, r.alpha);
        r.selection_precision =
            data.pool_truth ? virtual_label_precision(r.selection.virtual_samples, *data.pool_truth) : kNaN;
        if (!dir.empty()) {
            write_selection_csv((dir / "selection.csv").string(), r.selection);
            save_labeled((dir / "virtual.spcn").string(), r.selection.virtual_samples);
            write_text(dir / "selection.json", selection_json(r.selection, r.selection_precision) + "\n");
        }
        state = apply_selection(state, selection_rows(r.selection));
    } catch (const Error&) {
        rethrow_with_context(where + "select: ");
    }

    try {
        r.model = retrain_round_model(cfg, round, state.train, data.verify);
        r.report = evaluate(r.model, data.benchmark);
        r.report.round = round;
        r.report.n_virtual_used = state.n_virtual();
        r.report.n_train_total = state.train.size();
        if (!dir.empty()) {
            save_checkpoint(r.model, (dir / "model.ckpt").string());
            write_text(dir / "eval.json", r.report.to_json() + "\n");
        }
    } catch (const Error&) {
        rethrow_with_context(where + "retrain: ");
    }
    return r;
}

std::vector<EvalReport> PipelineResult::reports() const {
    std::vector<EvalReport> out{baseline.report};
    for (const auto& r : rounds) out.push_back(r.report);
    return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const PreparedData& data, const fs::path& out_dir) {
    cfg.validate();
    PipelineResult result;
    result.initial_pool_size = data.pool.size();
    if (!out_dir.empty()) write_text(out_dir / "config.txt", format_config(cfg));
    result.baseline = run_baseline(cfg, data, out_dir);
    TrainingState state = initial_state(data);
    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        result.rounds.push_back(run_round(cfg, round, data, state, out_dir));
        if (!out_dir.empty()) write_text(out_dir / "summary.csv", summary_csv(result));
        if (state.pool.empty()) break;
    }
    result.final_pool_size = state.pool.size();
    if (!out_dir.empty()) write_text(out_dir / "summary.csv", summary_csv(result));
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    return run_pipeline(cfg, prepare_data(cfg), out_dir);
}

std::string summary_csv(const PipelineResult& result) {
    std::ostringstream out;
    out << "round,alpha,n_virtual_selected,n_train_total,benchmark_accuracy\n";
    out << "0,NA,0," << result.baseline.report.n_train_total << ','
        << detail::format_shortest(result.baseline.report.accuracy) << '\n';
    for (const auto& r : result.rounds) {
        out << r.round << ',' << detail::format_shortest(r.alpha) << ',' << r.selection.n_selected << ','
            << r.report.n_train_total << ',' << detail::format_shortest(r.report.accuracy) << '\n';
    }
    return out.str();
}

fs::path round_dir(const fs::path& out_dir, std::size_t round) { return out_dir / ("round_" + std::to_string(round)); }

TrainingState state_for_round(const PreparedData& data, const fs::path& out_dir, std::size_t round) {
    if (round < 1) throw ParameterError("rounds are numbered from 1");
    TrainingState state = initial_state(data);
    for (std::size_t k = 1; k < round; ++k) {
        const fs::path csv = round_dir(out_dir, k) / "selection.csv";
        try {
            state = apply_selection(state, read_selection_csv(csv.string()));
        } catch (const Error&) {
            rethrow_with_context("round " + std::to_string(k) + " selection: ");
        }
    }
    return state;
}

std::vector<BenchTiming> benchmark_parallel(const PipelineConfig& cfg, const LabeledSet& train,
                                            std::span<const std::size_t> worker_counts) {
    if (worker_counts.empty()) throw ParameterError("benchmark needs at least one worker count");
    std::vector<BenchTiming> timings;
    std::vector<std::string> reference;
    for (const std::size_t workers : worker_counts) {
        if (workers < 1) throw ParameterError("worker counts must be at least 1");
        BootstrapConfig bc = cfg.bootstrap_config(1);
        bc.n_workers = workers;
        const auto start = std::chrono::steady_clock::now();
        const auto ensemble = train_ensemble(train, cfg.architecture(), bc);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::vector<std::string> encoded;
        for (const auto& m : ensemble) encoded.push_back(encode_checkpoint(m));
        if (reference.empty()) {
            reference = std::move(encoded);
        } else if (encoded != reference) {
            throw DeterminismError("ensemble trained with " + std::to_string(workers) +
                                   " workers differs from the run with " + std::to_string(worker_counts[0]));
        }
        timings.push_back({workers, seconds});
    }
    return timings;
}

}  // namespace spcnn
