#include "spcnn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <thread>

#include "binary_io.hpp"
#include "spcnn/config.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/pipeline.hpp"

namespace spcnn {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> settings;
    std::size_t round = 1;
    std::optional<double> alpha;
    std::optional<std::size_t> rounds;
    std::vector<std::size_t> workers{1, 2, 4};
    std::string model_path;
};

PipelineConfig build_config(const Options& o) {
    PipelineConfig cfg = o.config_path.empty() ? PipelineConfig{} : load_config(o.config_path);
    for (const auto& s : o.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
    if (o.rounds) cfg.rounds = *o.rounds;
    cfg.validate();
    return cfg;
}

void print_eval(std::ostream& out, const std::string& label, const EvalReport& r) {
    out << label << ": accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " on " << r.n_benchmark
        << " benchmark patches (" << r.n_train_total << " training patches, " << r.n_virtual_used << " virtual)\n";
    out.unsetf(std::ios::floatfield);
}

int gen_data(const PipelineConfig& cfg, std::ostream& out) {
    if (cfg.source != DataSource::Synthetic) throw ConfigError("gen-data needs data.source=synthetic");
    SyntheticSpec spec = cfg.synthetic;
    spec.seed = cfg.synthetic_seed();
    const SyntheticData data = generate_synthetic(spec);
    const fs::path dir = fs::path(cfg.output_dir) / "data";
    fs::create_directories(dir);
    save_labeled((dir / "labeled.spcn").string(), data.labeled);
    save_labeled((dir / "benchmark.spcn").string(), data.benchmark);
    PatchFile pool;
    for (const auto& p : data.pool) pool.pixels.push_back(p.pixels);
    pool.labels = data.pool_truth.labels;
    detail::write_file((dir / "pool.spcn").string(), encode_patches(pool));
    out << "wrote " << data.labeled.size() << " labeled, " << data.pool.size() << " pool and "
        << data.benchmark.size() << " benchmark patches to " << dir.string() << '\n'
        << "pool.spcn carries the hidden pool labels; they are only used to score selections\n";
    return kExitOk;
}

int train_baseline_cmd(const PipelineConfig& cfg, std::ostream& out) {
    const PreparedData data = prepare_data(cfg);
    const BaselineResult r = run_baseline(cfg, data, cfg.output_dir);
    print_eval(out, "baseline", r.report);
    return kExitOk;
}

int bootstrap_cmd(const PipelineConfig& cfg, std::size_t round, std::ostream& out) {
    const PreparedData data = prepare_data(cfg);
    const TrainingState state = state_for_round(data, cfg.output_dir, round);
    const fs::path dir = round_dir(cfg.output_dir, round);
    try {
        const auto ensemble = train_round_ensemble(cfg, round, state.train);
        const auto predictions = predict_pool(ensemble, state.pool, cfg.n_workers);
        fs::create_directories(dir / "ensemble");
        for (std::size_t i = 0; i < ensemble.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "net_%02zu.ckpt", i);
            save_checkpoint(ensemble[i], (dir / "ensemble" / name).string());
        }
        write_predictions_csv((dir / "predictions.csv").string(), predictions);
    } catch (const Error&) {
        rethrow_with_context("round " + std::to_string(round) + " / bootstrap: ");
    }
    out << "round " << round << ": trained " << cfg.n_networks << " networks on " << state.train.size()
        << " patches, predicted " << state.pool.size() << " pool patches\n";
    return kExitOk;
}

int select_cmd(const PipelineConfig& cfg, std::size_t round, std::optional<double> alpha_override,
               std::ostream& out) {
    const PreparedData data = prepare_data(cfg);
    const TrainingState state = state_for_round(data, cfg.output_dir, round);
    const fs::path dir = round_dir(cfg.output_dir, round);
    const double alpha = alpha_override.value_or(cfg.alpha_for_round(round));
    SelectionReport report;
    try {
        const auto predictions = read_predictions_csv((dir / "predictions.csv").string());
        report = select_round(cfg, predictions, state.pool, alpha);
        write_selection_csv((dir / "selection.csv").string(), report);
        save_labeled((dir / "virtual.spcn").string(), report.virtual_samples);
        const double precision = data.pool_truth ? virtual_label_precision(report.virtual_samples, *data.pool_truth)
                                                 : std::numeric_limits<double>::quiet_NaN();
        detail::write_file((dir / "selection.json").string(), selection_json(report, precision) + "\n");
    } catch (const Error&) {
        rethrow_with_context("round " + std::to_string(round) + " / select: ");
    }
    out << "round " << round << ": selected " << report.n_selected << " of " << state.pool.size()
        << " pool patches at alpha " << alpha << " (" << report.n_tied << " tied)\n";
    if (data.pool_truth && report.n_selected > 0) {
        out << "virtual label precision " << virtual_label_precision(report.virtual_samples, *data.pool_truth)
            << '\n';
    }
    return kExitOk;
}

int retrain_cmd(const PipelineConfig& cfg, std::size_t round, std::ostream& out) {
    const PreparedData data = prepare_data(cfg);
    const TrainingState state = state_for_round(data, cfg.output_dir, round + 1);
    const fs::path dir = round_dir(cfg.output_dir, round);
    EvalReport report;
    try {
        const CnnModel model = retrain_round_model(cfg, round, state.train, data.verify);
        report = evaluate(model, data.benchmark);
        report.round = round;
        report.n_virtual_used = state.n_virtual();
        report.n_train_total = state.train.size();
        save_checkpoint(model, (dir / "model.ckpt").string());
        detail::write_file((dir / "eval.json").string(), report.to_json() + "\n");
    } catch (const Error&) {
        rethrow_with_context("round " + std::to_string(round) + " / retrain: ");
    }
    print_eval(out, "round " + std::to_string(round), report);
    return kExitOk;
}

int evaluate_cmd(const PipelineConfig& cfg, const std::string& model_path, std::ostream& out) {
    std::string path = model_path;
    if (path.empty()) {
        path = (fs::path(cfg.output_dir) / "baseline" / "model.ckpt").string();
        for (std::size_t r = 1;; ++r) {
            const fs::path candidate = round_dir(cfg.output_dir, r) / "model.ckpt";
            if (!fs::exists(candidate)) break;
            path = candidate.string();
        }
    }
    const CnnModel model = load_checkpoint(path);
    const PreparedData data = prepare_data(cfg);
    const EvalReport report = evaluate(model, data.benchmark);
    out << path << '\n' << report.to_json() << '\n';
    return kExitOk;
}

int pipeline_cmd(const PipelineConfig& cfg, std::ostream& out) {
    const PipelineResult result = run_pipeline(cfg, cfg.output_dir);
    print_eval(out, "baseline", result.baseline.report);
    for (const auto& r : result.rounds) {
        out << "round " << r.round << ": selected " << r.selection.n_selected << " at alpha " << r.alpha << '\n';
        print_eval(out, "round " + std::to_string(r.round), r.report);
    }
    out << "summary: " << (fs::path(cfg.output_dir) / "summary.csv").string() << '\n';
    return kExitOk;
}

int bench_cmd(const PipelineConfig& cfg, const std::vector<std::size_t>& workers, std::ostream& out) {
    const PreparedData data = prepare_data(cfg);
    const auto timings = benchmark_parallel(cfg, data.train, workers);
    out << "workers,seconds,speedup\n";
    for (const auto& t : timings) {
        out << t.workers << ',' << detail::format_shortest(t.seconds) << ','
            << detail::format_shortest(timings.front().seconds / t.seconds) << '\n';
    }
    out << "hardware threads: " << std::thread::hardware_concurrency() << '\n';
    return kExitOk;
}

int exit_code_for(const std::exception_ptr& e, std::ostream& err) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        err << "config error: " << x.what() << '\n';
        return kExitConfig;
    } catch (const ParameterError& x) {
        err << "config error: " << x.what() << '\n';
        return kExitConfig;
    } catch (const FormatError& x) {
        err << "format error: " << x.what() << '\n';
        return kExitData;
    } catch (const DataError& x) {
        err << "data error: " << x.what() << '\n';
        return kExitData;
    } catch (const IndexError& x) {
        err << "data error: " << x.what() << '\n';
        return kExitData;
    } catch (const DimensionError& x) {
        err << "data error: " << x.what() << '\n';
        return kExitData;
    } catch (const StatisticsError& x) {
        err << "numeric error: " << x.what() << '\n';
        return kExitNumeric;
    } catch (const DeterminismError& x) {
        err << "determinism failure: " << x.what() << '\n';
        return kExitNumeric;
    } catch (const fs::filesystem_error& x) {
        err << "data error: " << x.what() << '\n';
        return kExitData;
    } catch (const std::exception& x) {
        err << "error: " << x.what() << '\n';
        return 1;
    }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Self-paced CNN training with bootstrap-selected virtual samples"};
    app.fallthrough();
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--out", o.out_dir, "output directory (overrides output.dir)");
    app.add_option("--seed", o.seed, "global seed (overrides seed)");
    app.add_option("--set", o.settings, "extra key=value setting, applied after the config file");

    auto* gen = app.add_subcommand("gen-data", "write the synthetic data set as patch files");
    auto* base = app.add_subcommand("train-baseline", "train and evaluate the CNN on manual samples only");
    auto* boot = app.add_subcommand("bootstrap", "train the bootstrap ensemble and predict the pool");
    auto* sel = app.add_subcommand("select", "select virtual samples from the ensemble predictions");
    auto* re = app.add_subcommand("retrain", "retrain a fresh CNN on manual plus virtual samples");
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the benchmark set");
    auto* pipe = app.add_subcommand("pipeline", "baseline followed by one or more rounds");
    auto* bench = app.add_subcommand("bench", "time ensemble training for several worker counts");
    for (auto* sub : {boot, sel, re}) {
        sub->add_option("--round", o.round, "round number, from 1")->check(CLI::PositiveNumber);
    }
    sel->add_option("--alpha", o.alpha, "FDR level (overrides the configured alpha)");
    ev->add_option("--model", o.model_path, "checkpoint (default: the latest model under --out)");
    pipe->add_option("--rounds", o.rounds, "number of rounds (overrides pipeline.rounds)");
    bench->add_option("--workers", o.workers, "worker counts, comma separated")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
    }

    try {
        const PipelineConfig cfg = build_config(o);
        if (*gen) return gen_data(cfg, out);
        if (*base) return train_baseline_cmd(cfg, out);
        if (*boot) return bootstrap_cmd(cfg, o.round, out);
        if (*sel) return select_cmd(cfg, o.round, o.alpha, out);
        if (*re) return retrain_cmd(cfg, o.round, out);
        if (*ev) return evaluate_cmd(cfg, o.model_path, out);
        if (*pipe) return pipeline_cmd(cfg, out);
        if (*bench) return bench_cmd(cfg, o.workers, out);
    } catch (...) {
        return exit_code_for(std::current_exception(), err);
    }
    return kExitOk;
}

}  // namespace spcnn
