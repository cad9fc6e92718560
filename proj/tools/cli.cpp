#include "cli.hpp"

#include "plot.hpp"
#include "verify.hpp"

#include "eos/config.hpp"
#include "eos/data.hpp"
#include "eos/error.hpp"
#include "eos/experiment.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

namespace eos::cli {

namespace fs = std::filesystem;
namespace ex = experiment;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* app, ConfigArgs& args) {
    app->add_option("-c,--config", args.config_path, "key=value config file");
    app->add_option("--set", args.overrides, "override a config key (key=value), repeatable");
}

KeyValueConfig load_config(const ConfigArgs& args) {
    KeyValueConfig kv;
    if (!args.config_path.empty()) kv = KeyValueConfig::from_file(args.config_path);
    for (const auto& o : args.overrides) kv.apply_override(o);
    return kv;
}

// Convenience flags write through to config keys so they share validation.
template <typename T>
void put_flag(KeyValueConfig& kv, const std::string& key, const std::optional<T>& value) {
    if (!value) return;
    std::ostringstream ss;
    if constexpr (std::is_floating_point_v<T>) ss << ex::format_double(*value);
    else ss << *value;
    kv.set(key, ss.str());
}

ex::AnalysisOptions analysis_options(const KeyValueConfig& kv, const ExecOptions& exec) {
    ex::AnalysisOptions opts;
    opts.spectrum_tol = kv.get_double("analysis.tol", opts.spectrum_tol);
    opts.max_power_iters = kv.get_size("analysis.max_iters", opts.max_power_iters);
    opts.exec = exec;
    return opts;
}

ex::PeakAggregation aggregation(const KeyValueConfig& kv) {
    try {
        return ex::parse_aggregation(kv.get_string("analysis.aggregation", "mean_per_size"));
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

void print_fit(const ex::PowerLawFit& fit, std::ostream& out) {
    out << "c1 = " << ex::format_double(fit.c1) << "\n";
    out << "c2 = " << ex::format_double(fit.c2) << "\n";
    out << "R2 = " << ex::format_double(fit.r_squared) << "\n";
}

// ---- verbs --------------------------------------------------------------

int cmd_gen_dice(const KeyValueConfig& kv, std::ostream& out) {
    const ex::ExperimentConfig cfg = ex::experiment_config_from(kv);
    const fs::path output = kv.get_string("gen.output", "dice.eosd");
    kv.reject_unused();
    cfg.dataset.dice.validate();
    const LabeledDataset ds =
        data::generate_dice_dataset(cfg.dataset.dice_per_class, cfg.dataset.dice, cfg.dataset.dice_seed, cfg.exec);
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    data::write_dataset(ds, output);
    out << "wrote " << ds.size() << " images (" << data::kDiceClasses << " classes, " << ds.dim() << " inputs) to "
        << output.string() << "\n";
    return kExitOk;
}

int cmd_train(const KeyValueConfig& kv, std::ostream& out, std::ostream& err) {
    const ex::ExperimentConfig cfg = ex::experiment_config_from(kv);
    kv.reject_unused();
    cfg.validate();
    const auto outcomes = ex::run_experiment_grid(cfg, [&](const std::string& msg) { err << msg << "\n"; });
    int code = kExitOk;
    for (const auto& o : outcomes) {
        out << o.key.name() << " " << o.status;
        if (o.skipped) out << " (skipped)";
        else out << " steps=" << o.steps << " final_loss=" << ex::format_double(o.final_loss);
        out << "\n";
        if (o.status == "diverged") {
            err << o.key.name() << ": " << o.diagnostic << "\n";
            code = kExitDivergence;
        }
    }
    out << "output: " << cfg.output_dir.string() << "\n";
    return code;
}

int cmd_analyze(const KeyValueConfig& kv, const std::string& run_dir, const std::string& grid_dir, std::ostream& out,
                std::ostream& err) {
    const ex::ExperimentConfig cfg = ex::experiment_config_from(kv);
    const ex::AnalysisOptions opts = analysis_options(kv, cfg.exec);
    const ex::PeakAggregation mode = aggregation(kv);
    kv.reject_unused();
    auto log = [&](const std::string& msg) { err << msg << "\n"; };
    if (!run_dir.empty()) {
        const auto records = ex::analyze_snapshots(run_dir, opts, log);
        ex::emit_metrics_csv(records, fs::path(run_dir) / "metrics.csv");
        const auto trimmed = ex::trim_transient(records);
        out << records.size() << " snapshots analyzed; metrics in " << (fs::path(run_dir) / "metrics.csv").string()
            << "\n";
        out << "peak P1_dJ after transient: "
            << (trimmed.insufficient ? std::string("insufficient data") : ex::format_double(ex::peak_p_delta_j1(trimmed.records)))
            << "\n";
        return kExitOk;
    }
    const ex::GridAnalysis g = ex::analyze_grid(grid_dir, opts, mode, log);
    out << "runs analyzed: " << g.runs.size() << "\n";
    for (const auto& p : g.points) out << "D=" << ex::format_double(p.d) << " peak=" << ex::format_double(p.peak) << "\n";
    out << "spearman = " << ex::format_double(g.spearman) << "\n";
    if (g.fit) {
        print_fit(*g.fit, out);
        ex::write_power_law_report(*g.fit, fs::path(grid_dir) / "powerlaw.txt",
                                   std::string("aggregation ") + ex::to_string(mode));
    } else {
        out << "power law not fitted (needs 3 distinct sizes with positive peaks)\n";
    }
    return kExitOk;
}

std::vector<ex::PowerLawPoint> read_points_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<ex::PowerLawPoint> pts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ex::PowerLawPoint p;
        if (!(ls >> p.d >> p.peak)) throw FormatError(path.string() + ": expected 'D peak' per line");
        pts.push_back(p);
    }
    return pts;
}

int cmd_fit_powerlaw(const KeyValueConfig& kv, const std::string& grid_dir, const std::string& points_file,
                     const std::string& report, std::ostream& out) {
    (void)ex::experiment_config_from(kv);
    const ex::PeakAggregation mode = aggregation(kv);
    kv.reject_unused();
    std::vector<ex::PowerLawPoint> per_run;
    fs::path report_path = report;
    if (!points_file.empty()) {
        per_run = read_points_file(points_file);
        if (report_path.empty()) report_path = fs::path(points_file).string() + ".fit.txt";
    } else {
        for (const auto& e : ex::read_manifest(fs::path(grid_dir) / "manifest.txt")) {
            if (e.status != "completed") continue;
            const fs::path csv = fs::path(grid_dir) / "runs" / e.key.name() / "metrics.csv";
            if (!fs::exists(csv)) throw DataError(csv.string() + " missing; run analyze first");
            const auto records = ex::parse_metrics_csv(csv);
            const double pk = ex::peak_p_delta_j1(ex::trim_transient(records).records);
            if (!std::isnan(pk)) per_run.push_back({double(e.key.size), pk});
        }
        if (report_path.empty()) report_path = fs::path(grid_dir) / "powerlaw.txt";
    }
    const auto points = ex::aggregate_peaks(per_run, mode);
    const ex::PowerLawFit fit = ex::fit_power_law(points);
    print_fit(fit, out);
    ex::write_power_law_report(fit, report_path, std::string("aggregation ") + ex::to_string(mode));
    out << "report: " << report_path.string() << "\n";
    return kExitOk;
}

double series_size(const fs::path& csv, std::size_t index) {
    const fs::path info = csv.parent_path() / "run.txt";
    if (fs::exists(info)) {
        const KeyValueConfig kv = KeyValueConfig::from_file(info);
        return double(kv.get_size("size", index));
    }
    return double(index);
}

const std::vector<std::string> kDefaultPlotColumns{"lambda1_full", "lambda1_G",   "lambda1_H",     "rho_K",
                                                   "e_K_sq",       "pi_chi_1",    "p_chi_delta_1", "pi_J_1",
                                                   "p_delta_J_1",  "e_deltaL_sq"};

int cmd_plot(const KeyValueConfig& kv, const std::vector<std::string>& csvs, std::vector<std::string> columns,
             const std::string& x_column, bool log_y, const std::string& out_dir, std::ostream& out) {
    (void)ex::experiment_config_from(kv);
    kv.reject_unused();
    if (columns.empty()) columns = kDefaultPlotColumns;
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < csvs.size(); ++i)
        series.push_back({ex::read_metrics_table(csvs[i]), series_size(csvs[i], i), csvs[i]});
    fs::create_directories(out_dir);
    for (const auto& col : columns) {
        PlotSpec spec{x_column, col, log_y, col};
        const std::string svg = render_svg(series, spec);
        const fs::path path = fs::path(out_dir) / (col + ".svg");
        std::ofstream(path, std::ios::trunc) << svg;
        out << "wrote " << path.string() << "\n";
    }
    return kExitOk;
}

int cmd_verify(const KeyValueConfig& kv, std::uint64_t seed, const std::string& fault, std::ostream& out) {
    (void)ex::experiment_config_from(kv);
    VerifyOptions opts;
    opts.seed = kv.get_u64("verify.seed", seed);
    try {
        opts.criterion = criterion::parse_tag(kv.get_string("criterion", criterion::to_string(opts.criterion)));
        opts.fault = parse_fault(kv.get_string("verify.fault", fault));
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    opts.samples = kv.get_size("verify.samples", opts.samples);
    kv.reject_unused();
    const auto checks = run_verify_suite(opts);
    print_verify_table(checks, out);
    const bool ok = std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
    out << (ok ? "all checks passed" : "verification FAILED") << "\n";
    return ok ? kExitOk : kExitVerification;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gradient-flow training and Hessian sharpness decomposition for MLPs", "eos"};
    app.require_subcommand(1);

    ConfigArgs gen_args, train_args, analyze_args, fit_args, plot_args, verify_args;

    CLI::App* gen = app.add_subcommand("gen-dice", "generate the synthetic dice dataset");
    add_config_flags(gen, gen_args);
    std::optional<std::size_t> n_per_class;
    std::optional<std::uint64_t> dice_seed;
    std::optional<std::string> gen_output;
    gen->add_option("--n-per-class", n_per_class, "images per class (dataset.dice_per_class)");
    gen->add_option("--seed", dice_seed, "generator seed (dataset.dice_seed)");
    gen->add_option("-o,--output", gen_output, "output dataset file (gen.output)");

    CLI::App* train = app.add_subcommand("train", "train the configured grid of runs");
    add_config_flags(train, train_args);
    std::optional<std::string> criterion_name, train_output;
    std::optional<std::size_t> max_steps, workers;
    std::optional<double> eta;
    train->add_option("--criterion", criterion_name, "cross-entropy or mse (criterion)");
    train->add_option("--max-steps", max_steps, "step cap per run (solver.max_steps)");
    train->add_option("--eta", eta, "learning-rate cap (solver.eta)");
    train->add_option("-o,--output", train_output, "output directory (output.dir)");
    train->add_option("--workers", workers, "parallel runs (experiment.workers)");

    CLI::App* analyze = app.add_subcommand("analyze", "decompose the sharpness at every snapshot");
    add_config_flags(analyze, analyze_args);
    std::string run_dir, grid_dir;
    auto* run_opt = analyze->add_option("--run", run_dir, "single run directory");
    auto* grid_opt = analyze->add_option("--grid", grid_dir, "grid output directory");
    run_opt->excludes(grid_opt);
    std::optional<std::string> analyze_agg;
    analyze->add_option("--aggregation", analyze_agg, "mean_per_size, max_per_size or pooled (analysis.aggregation)");

    CLI::App* fit = app.add_subcommand("fit-powerlaw", "fit peak alignment against dataset size");
    add_config_flags(fit, fit_args);
    std::string fit_grid, fit_points, fit_report;
    auto* fg = fit->add_option("--grid", fit_grid, "analyzed grid directory");
    auto* fp = fit->add_option("--points", fit_points, "text file of 'D peak' lines");
    fg->excludes(fp);
    fit->add_option("-o,--output", fit_report, "report path");
    std::optional<std::string> fit_agg;
    fit->add_option("--aggregation", fit_agg, "mean_per_size, max_per_size or pooled (analysis.aggregation)");

    CLI::App* plot = app.add_subcommand("plot", "render metrics CSV files as SVG line charts");
    add_config_flags(plot, plot_args);
    std::vector<std::string> csvs, columns;
    std::string x_column = "step", plot_out = "plots";
    bool log_y = false;
    plot->add_option("--csv", csvs, "metrics CSV, repeatable")->required();
    plot->add_option("--column", columns, "metric to plot, repeatable (default: the main figure set)");
    plot->add_option("--x", x_column, "x-axis column (step or flow_time)");
    plot->add_flag("--log-y", log_y, "logarithmic y axis");
    plot->add_option("-o,--output-dir", plot_out, "directory for SVG files");

    CLI::App* verify = app.add_subcommand("verify", "run the identity and oracle suite on a fresh tiny model");
    add_config_flags(verify, verify_args);
    std::uint64_t verify_seed = 1;
    std::string fault = "none";
    verify->add_option("--seed", verify_seed, "model and data seed (verify.seed)");
    verify->add_option("--fault,--inject-fault", fault, "none, g-operator or delta-norm (verify.fault)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitConfig;
    }

    try {
        if (*gen) {
            KeyValueConfig kv = load_config(gen_args);
            put_flag(kv, "dataset.dice_per_class", n_per_class);
            put_flag(kv, "dataset.dice_seed", dice_seed);
            put_flag(kv, "gen.output", gen_output);
            return cmd_gen_dice(kv, out);
        }
        if (*train) {
            KeyValueConfig kv = load_config(train_args);
            put_flag(kv, "criterion", criterion_name);
            put_flag(kv, "solver.max_steps", max_steps);
            put_flag(kv, "solver.eta", eta);
            put_flag(kv, "output.dir", train_output);
            put_flag(kv, "experiment.workers", workers);
            return cmd_train(kv, out, err);
        }
        if (*analyze) {
            if (run_dir.empty() && grid_dir.empty()) throw ConfigError("analyze needs --run or --grid");
            KeyValueConfig kv = load_config(analyze_args);
            put_flag(kv, "analysis.aggregation", analyze_agg);
            return cmd_analyze(kv, run_dir, grid_dir, out, err);
        }
        if (*fit) {
            if (fit_grid.empty() && fit_points.empty()) throw ConfigError("fit-powerlaw needs --grid or --points");
            KeyValueConfig kv = load_config(fit_args);
            put_flag(kv, "analysis.aggregation", fit_agg);
            return cmd_fit_powerlaw(kv, fit_grid, fit_points, fit_report, out);
        }
        if (*plot) return cmd_plot(load_config(plot_args), csvs, columns, x_column, log_y, plot_out, out);
        if (*verify) return cmd_verify(load_config(verify_args), verify_seed, fault, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ArgumentError& e) {
        err << "argument error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "diverged at step " << e.step() << ": " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}

}  // namespace eos::cli
