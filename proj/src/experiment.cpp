#include "eos/experiment.hpp"

#include "binio.hpp"
#include "eos/error.hpp"
#include "eos/spectral.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

namespace eos::experiment {

using linalg::Vec;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string join_u64(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string range_text(const data::Range& r) { return format_double(r.lo) + "," + format_double(r.hi); }

data::Range parse_range(const KeyValueConfig& kv, const std::string& key, data::Range fallback) {
    if (!kv.has(key)) {
        kv.mark_used(key);
        return fallback;
    }
    const auto v = kv.get_double_list(key, {});
    if (v.size() != 2) throw ConfigError("config key '" + key + "': expected lo,hi");
    return {v[0], v[1]};
}

void log_line(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- configuration ------------------------------------------------------

void DatasetSpec::validate() const {
    static const std::set<std::string> sources{"dice", "cifar10", "csv", "file"};
    if (!sources.count(source)) throw ConfigError("dataset.source must be one of dice, cifar10, csv, file");
    if (source != "dice" && paths.empty()) throw ConfigError("dataset.paths is required for source " + source);
    if ((source == "csv" || source == "file") && paths.size() != 1)
        throw ConfigError("dataset.paths takes exactly one file for source " + source);
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("dataset.test_fraction must lie in [0, 1)");
    if (source == "dice") {
        if (dice_per_class < 1) throw ConfigError("dataset.dice_per_class must be >= 1");
        dice.validate();
    }
}

LabeledDataset load_training_pool(const DatasetSpec& spec, const ExecOptions& exec) {
    spec.validate();
    LabeledDataset full;
    if (spec.source == "dice") {
        full = data::generate_dice_dataset(spec.dice_per_class, spec.dice, spec.dice_seed, exec);
    } else if (spec.source == "cifar10") {
        full = data::load_cifar10_binary(spec.paths);
    } else if (spec.source == "csv") {
        full = data::load_vector_csv(spec.paths.front(), spec.num_classes);
    } else {
        full = data::read_dataset(spec.paths.front());
    }
    if (spec.test_fraction == 0.0) return full;
    auto split = data::train_test_split(full, spec.test_fraction, spec.split_seed);
    return std::move(split.first);
}

void ExperimentConfig::validate() const {
    dataset.validate();
    if (sizes.empty()) throw ConfigError("experiment.sizes must not be empty");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] < 1) throw ConfigError("experiment.sizes entries must be >= 1");
        if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("experiment.sizes must be strictly increasing");
    }
    if (init_seeds.empty()) throw ConfigError("experiment.init_seeds must not be empty");
    if (subset_seeds.empty()) throw ConfigError("experiment.subset_seeds must not be empty");
    if (depth < 2) throw ConfigError("model.depth must be >= 2");
    if (width < 1) throw ConfigError("model.width must be >= 1");
    if (!(gain > 0.0)) throw ConfigError("model.gain must be positive");
    if (grid_workers < 1) throw ConfigError("experiment.workers must be >= 1");
    solver.validate();
}

double ExperimentConfig::resolved_threshold() const {
    return loss_threshold < 0.0 ? criterion::default_loss_threshold(criterion) : loss_threshold;
}

std::vector<std::size_t> ExperimentConfig::widths(std::size_t input_dim, std::size_t num_classes) const {
    std::vector<std::size_t> w{input_dim};
    for (std::size_t i = 1; i < depth; ++i) w.push_back(width);
    w.push_back(num_classes);
    return w;
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
    ExperimentConfig c;
    DatasetSpec& d = c.dataset;
    d.source = kv.get_string("dataset.source", d.source);
    for (const auto& p : kv.get_list("dataset.paths", {})) d.paths.emplace_back(p);
    d.dice_per_class = kv.get_size("dataset.dice_per_class", d.dice_per_class);
    d.dice_seed = kv.get_u64("dataset.dice_seed", d.dice_seed);
    d.test_fraction = kv.get_double("dataset.test_fraction", d.test_fraction);
    d.split_seed = kv.get_u64("dataset.split_seed", d.split_seed);
    d.num_classes = kv.get_size("dataset.num_classes", d.num_classes);

    d.dice.radius_px_per_size = kv.get_double("dice.radius_px_per_size", d.dice.radius_px_per_size);
    d.dice.stroke_px_per_weight = kv.get_double("dice.stroke_px_per_weight", d.dice.stroke_px_per_weight);
    d.dice.supersample = kv.get_size("dice.supersample", d.dice.supersample);
    for (int cls = 1; cls <= 6; ++cls) {
        data::ClassRanges& r = d.dice.classes[cls - 1];
        const std::string pre = "dice.class" + std::to_string(cls) + ".";
        r.x_coord = parse_range(kv, pre + "x_coord", r.x_coord);
        r.y_coord = parse_range(kv, pre + "y_coord", r.y_coord);
        r.p_size = parse_range(kv, pre + "p_size", r.p_size);
        r.l_weight = parse_range(kv, pre + "l_weight", r.l_weight);
        r.x_shift = parse_range(kv, pre + "x_shift", r.x_shift);
        r.y_shift = parse_range(kv, pre + "y_shift", r.y_shift);
        const auto e = kv.get_size_list(pre + "e_type", {std::size_t(r.e_type_lo), std::size_t(r.e_type_hi)});
        if (e.size() != 2) throw ConfigError("config key '" + pre + "e_type': expected lo,hi");
        r.e_type_lo = int(e[0]);
        r.e_type_hi = int(e[1]);
    }

    try {
        c.criterion = criterion::parse_tag(kv.get_string("criterion", criterion::to_string(c.criterion)));
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    c.sizes = kv.get_size_list("experiment.sizes", c.sizes);
    c.init_seeds = kv.get_u64_list("experiment.init_seeds", c.init_seeds);
    c.subset_seeds = kv.get_u64_list("experiment.subset_seeds", c.subset_seeds);
    c.grid_workers = kv.get_size("experiment.workers", c.grid_workers);
    c.depth = kv.get_size("model.depth", c.depth);
    c.width = kv.get_size("model.width", c.width);
    c.gain = kv.get_double("model.gain", c.gain);

    solver::SolverConfig& s = c.solver;
    s.k = kv.get_size("solver.k", s.k);
    s.eta = kv.get_double("solver.eta", s.eta);
    c.loss_threshold = kv.get_double("solver.loss_threshold", c.loss_threshold);
    s.max_steps = kv.get_size("solver.max_steps", s.max_steps);
    s.snapshot_interval = kv.get_size("solver.snapshot_interval", s.snapshot_interval);
    s.baseline_step = kv.get_size("solver.baseline_step", s.baseline_step);
    s.spectrum_tol = kv.get_double("solver.spectrum_tol", s.spectrum_tol);
    s.max_power_iters = kv.get_size("solver.max_power_iters", s.max_power_iters);
    s.seed = kv.get_u64("solver.seed", s.seed);

    c.output_dir = kv.get_string("output.dir", c.output_dir.string());
    c.exec.threads = kv.get_size("exec.threads", c.exec.threads);
    c.exec.deterministic = kv.get_bool("exec.deterministic", c.exec.deterministic);
    return c;
}

KeyValueConfig to_key_values(const ExperimentConfig& c) {
    KeyValueConfig kv;
    const DatasetSpec& d = c.dataset;
    kv.set("dataset.source", d.source);
    std::string paths;
    for (std::size_t i = 0; i < d.paths.size(); ++i) paths += (i ? "," : "") + d.paths[i].string();
    kv.set("dataset.paths", paths);
    kv.set("dataset.dice_per_class", std::to_string(d.dice_per_class));
    kv.set("dataset.dice_seed", std::to_string(d.dice_seed));
    kv.set("dataset.test_fraction", format_double(d.test_fraction));
    kv.set("dataset.split_seed", std::to_string(d.split_seed));
    kv.set("dataset.num_classes", std::to_string(d.num_classes));
    kv.set("dice.radius_px_per_size", format_double(d.dice.radius_px_per_size));
    kv.set("dice.stroke_px_per_weight", format_double(d.dice.stroke_px_per_weight));
    kv.set("dice.supersample", std::to_string(d.dice.supersample));
    for (int cls = 1; cls <= 6; ++cls) {
        const data::ClassRanges& r = d.dice.classes[cls - 1];
        const std::string pre = "dice.class" + std::to_string(cls) + ".";
        kv.set(pre + "x_coord", range_text(r.x_coord));
        kv.set(pre + "y_coord", range_text(r.y_coord));
        kv.set(pre + "p_size", range_text(r.p_size));
        kv.set(pre + "l_weight", range_text(r.l_weight));
        kv.set(pre + "x_shift", range_text(r.x_shift));
        kv.set(pre + "y_shift", range_text(r.y_shift));
        kv.set(pre + "e_type", std::to_string(r.e_type_lo) + "," + std::to_string(r.e_type_hi));
    }
    kv.set("criterion", criterion::to_string(c.criterion));
    kv.set("experiment.sizes", join_sizes(c.sizes));
    kv.set("experiment.init_seeds", join_u64(c.init_seeds));
    kv.set("experiment.subset_seeds", join_u64(c.subset_seeds));
    kv.set("experiment.workers", std::to_string(c.grid_workers));
    kv.set("model.depth", std::to_string(c.depth));
    kv.set("model.width", std::to_string(c.width));
    kv.set("model.gain", format_double(c.gain));
    kv.set("solver.k", std::to_string(c.solver.k));
    kv.set("solver.eta", format_double(c.solver.eta));
    kv.set("solver.loss_threshold", format_double(c.loss_threshold));
    kv.set("solver.max_steps", std::to_string(c.solver.max_steps));
    kv.set("solver.snapshot_interval", std::to_string(c.solver.snapshot_interval));
    kv.set("solver.baseline_step", std::to_string(c.solver.baseline_step));
    kv.set("solver.spectrum_tol", format_double(c.solver.spectrum_tol));
    kv.set("solver.max_power_iters", std::to_string(c.solver.max_power_iters));
    kv.set("solver.seed", std::to_string(c.solver.seed));
    kv.set("output.dir", c.output_dir.string());
    kv.set("exec.threads", std::to_string(c.exec.threads));
    kv.set("exec.deterministic", c.exec.deterministic ? "true" : "false");
    return kv;
}

void write_config(const ExperimentConfig& config, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_key_values(config).to_text();
}

// ---- snapshots ----------------------------------------------------------

namespace {
constexpr std::uint32_t kSnapshotVersion = 1;
}

model::MlpModel Snapshot::to_model() const {
    model::MlpModel m(widths, model::kEluGain);
    m.set_params(params);
    return m;
}

void write_snapshot(const Snapshot& snap, const fs::path& path) {
    if (snap.widths.size() < 2) throw ShapeError("write_snapshot: need at least two widths");
    if (snap.params.size() != model::ParamLayout(snap.widths).count())
        throw ShapeError("write_snapshot: parameter count does not match architecture");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write("EOSL", 4);
    binio::put<std::uint32_t>(out, kSnapshotVersion);
    binio::put<std::uint64_t>(out, snap.step);
    binio::put<double>(out, snap.t);
    binio::put<std::uint32_t>(out, std::uint32_t(snap.widths.size() - 1));
    for (std::size_t w : snap.widths) binio::put<std::uint32_t>(out, std::uint32_t(w));
    for (double v : snap.params) binio::put(out, v);
    if (!out) throw DataError("write failed for " + path.string());
}

Snapshot read_snapshot(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::string what = path.string();
    binio::expect_magic(in, "EOSL", what);
    const auto version = binio::get<std::uint32_t>(in, what);
    if (version != kSnapshotVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    Snapshot s;
    s.step = binio::get<std::uint64_t>(in, what);
    s.t = binio::get<double>(in, what);
    const auto depth = binio::get<std::uint32_t>(in, what);
    if (depth < 1 || depth > 1024) throw FormatError(what + ": implausible depth " + std::to_string(depth));
    for (std::uint32_t i = 0; i <= depth; ++i) {
        const auto w = binio::get<std::uint32_t>(in, what);
        if (w == 0) throw FormatError(what + ": zero layer width");
        s.widths.push_back(w);
    }
    const std::size_t count = model::ParamLayout(s.widths).count();
    const std::uintmax_t expected = 4 + 4 + 8 + 8 + 4 + 4 * (std::uintmax_t(depth) + 1) + 8 * std::uintmax_t(count);
    if (fs::file_size(path) != expected)
        throw FormatError(what + ": size " + std::to_string(fs::file_size(path)) + " does not match header (" +
                          std::to_string(expected) + " bytes)");
    s.params.resize(count);
    for (double& v : s.params) v = binio::get<double>(in, what);
    return s;
}

fs::path snapshot_path(const fs::path& run_dir, std::size_t step) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%08zu.eosl", step);
    return run_dir / "snapshots" / name;
}

// ---- grid ---------------------------------------------------------------

std::string RunKey::name() const {
    return "n" + std::to_string(size) + "_init" + std::to_string(init_seed) + "_subset" + std::to_string(subset_seed);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::vector<ManifestEntry> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string hash;
        if (!(ls >> e.key.size >> e.key.init_seed >> e.key.subset_seed >> e.status >> hash))
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest line");
        e.hash = std::stoull(hash, nullptr, 16);
        out.push_back(e);
    }
    return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
    std::vector<ManifestEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << "# size init_seed subset_seed status hash\n";
        for (const auto& e : sorted) {
            char hash[20];
            std::snprintf(hash, sizeof hash, "%016" PRIx64, e.hash);
            out << e.key.size << ' ' << e.key.init_seed << ' ' << e.key.subset_seed << ' ' << e.status << ' ' << hash
                << '\n';
        }
    }
    fs::rename(tmp, path);
}

std::uint64_t hash_directory(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](unsigned char byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (const auto& f : files) {
        for (char ch : fs::relative(f, dir).generic_string()) feed(static_cast<unsigned char>(ch));
        feed(0);
        std::ifstream in(f, std::ios::binary);
        char buf[1 << 14];
        while (in.read(buf, sizeof buf) || in.gcount() > 0) {
            for (std::streamsize i = 0; i < in.gcount(); ++i) feed(static_cast<unsigned char>(buf[i]));
        }
    }
    return h;
}

RunOutcome run_single(const ExperimentConfig& config, const LabeledDataset& train, const RunKey& key,
                      const fs::path& run_dir, const LogFn& log) {
    fs::remove_all(run_dir);
    fs::create_directories(run_dir / "snapshots");

    const LabeledDataset sub = data::subset(train, key.size, key.subset_seed);
    data::write_dataset(sub, run_dir / "data.eosd");
    const criterion::CriterionKind kind{config.criterion, sub.num_classes};
    const model::MlpModel initial =
        model::init_xavier_gain(config.widths(sub.dim(), sub.num_classes), config.gain, key.init_seed);

    solver::SolverConfig sc = config.solver;
    sc.loss_threshold = config.resolved_threshold();

    std::ofstream train_log(run_dir / "train_log.csv", std::ios::trunc);
    train_log << "step,flow_time,dt,loss,lambda_top,lambda_next,power_iters,spectrum_converged\n";
    auto observer = [&](const solver::StepInfo& s) {
        train_log << s.step << ',' << format_double(s.t) << ',' << format_double(s.dt) << ',' << format_double(s.loss)
                  << ',' << format_double(s.lambda_top) << ',' << format_double(s.lambda_next) << ',' << s.power_iters
                  << ',' << (s.spectrum_converged ? 1 : 0) << '\n';
    };
    auto sink = [&](std::size_t step, double t, std::span<const double> theta) {
        write_snapshot(Snapshot{step, t, initial.widths(), model::ParamVector(theta.begin(), theta.end())},
                       snapshot_path(run_dir, step));
    };

    RunOutcome outcome;
    outcome.key = key;
    outcome.dir = run_dir;
    KeyValueConfig info;
    info.set("size", std::to_string(key.size));
    info.set("init_seed", std::to_string(key.init_seed));
    info.set("subset_seed", std::to_string(key.subset_seed));
    info.set("criterion", criterion::to_string(config.criterion));
    info.set("num_classes", std::to_string(sub.num_classes));
    info.set("widths", join_sizes(initial.widths()));
    info.set("gain", format_double(config.gain));
    info.set("eta", format_double(sc.eta));
    info.set("loss_threshold", format_double(sc.loss_threshold));
    try {
        const solver::RunSummary summary = solver::run_training(initial, sub, kind, sc, sink, config.exec, observer);
        outcome.status = "completed";
        outcome.steps = summary.steps;
        outcome.final_loss = summary.final_loss;
        info.set("steps", std::to_string(summary.steps));
        info.set("flow_time", format_double(summary.t));
        info.set("final_loss", format_double(summary.final_loss));
        info.set("reached_threshold", summary.reached_threshold ? "true" : "false");
    } catch (const DivergenceError& e) {
        outcome.status = "diverged";
        outcome.steps = e.step();
        outcome.final_loss = kNaN;
        outcome.diagnostic = e.what();
        info.set("divergence_step", std::to_string(e.step()));
        info.set("diagnostic", e.what());
        log_line(log, key.name() + ": diverged at step " + std::to_string(e.step()));
    }
    info.set("status", outcome.status);
    train_log.close();
    std::ofstream(run_dir / "run.txt", std::ios::trunc) << info.to_text();
    return outcome;
}

std::vector<RunOutcome> run_experiment_grid(const ExperimentConfig& config, const LogFn& log) {
    config.validate();
    const fs::path out = config.output_dir;
    fs::create_directories(out / "runs");
    write_config(config, out / "config.txt");

    std::vector<RunKey> keys;
    for (std::size_t size : config.sizes)
        for (std::uint64_t is : config.init_seeds)
            for (std::uint64_t ss : config.subset_seeds) keys.push_back({size, is, ss});

    const fs::path manifest_path = out / "manifest.txt";
    std::vector<ManifestEntry> manifest = read_manifest(manifest_path);
    std::map<RunKey, ManifestEntry> done;
    for (const auto& e : manifest) done[e.key] = e;

    std::vector<RunOutcome> outcomes(keys.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const fs::path dir = out / "runs" / keys[i].name();
        const auto it = done.find(keys[i]);
        if (it != done.end() && fs::exists(dir / "run.txt")) {
            outcomes[i] = RunOutcome{keys[i], dir, it->second.status, true, 0, kNaN, {}};
            log_line(log, keys[i].name() + ": already in manifest, skipped");
        } else {
            pending.push_back(i);
        }
    }
    if (pending.empty()) return outcomes;

    const LabeledDataset train = load_training_pool(config.dataset, config.exec);
    for (std::size_t size : config.sizes) {
        if (size > train.size())
            throw ConfigError("subset size " + std::to_string(size) + " exceeds training pool of " +
                              std::to_string(train.size()));
    }

    ExperimentConfig run_config = config;
    if (config.grid_workers > 1) run_config.exec.threads = 1;
    std::mutex mu;
    parallel_for(pending.size(), config.grid_workers, [&](std::size_t j) {
        const RunKey& key = keys[pending[j]];
        const fs::path dir = out / "runs" / key.name();
        {
            std::lock_guard lock(mu);
            log_line(log, key.name() + ": training");
        }
        RunOutcome outcome = run_single(run_config, train, key, dir, log);
        const std::uint64_t hash = hash_directory(dir);
        std::lock_guard lock(mu);
        done[key] = ManifestEntry{key, outcome.status, hash};
        std::vector<ManifestEntry> entries;
        for (const auto& [k, e] : done) entries.push_back(e);
        write_manifest(entries, manifest_path);
        log_line(log, key.name() + ": " + outcome.status + " after " + std::to_string(outcome.steps) + " steps");
        outcomes[pending[j]] = std::move(outcome);
    });
    return outcomes;
}

// ---- analysis -----------------------------------------------------------

DecompositionRecord analyze_point(const model::MlpModel& model, const LabeledDataset& data,
                                  const criterion::CriterionKind& kind, std::size_t step, double t,
                                  const AnalysisOptions& opts) {
    auto eval = std::make_shared<const model::LossEvaluation>(model, data, kind, opts.exec);
    auto top = [&](const spectral::LinearOperator& op) {
        spectral::SpectrumEstimate s =
            spectral::sanitize_spectrum(spectral::power_iterate(op, 1, nullptr, opts.spectrum_tol, opts.max_power_iters));
        return s.eigenvalues.front();
    };
    DecompositionRecord r;
    r.step = step;
    r.t = t;
    r.loss = eval->loss();
    r.lambda1_full = top(spectral::hessian_operator(eval));
    r.lambda1_G = top(spectral::g_operator(eval));
    r.lambda1_H = top(spectral::h_operator(eval));

    const decomposition::LayerExpectations e = decomposition::expectations(model, data, kind, opts.exec);
    r.e_K_norm_sq = e.k_norm_sq;
    r.e_Ki_norm_sq = e.k_block_norm_sq;
    r.rho_K = std::isnan(r.lambda1_G) ? kNaN : decomposition::overlap_ratio(r.lambda1_G, e.k_norm_sq);
    r.chain = decomposition::factor_chain(e);
    return r;
}

std::vector<DecompositionRecord> analyze_snapshots(const fs::path& run_dir, const AnalysisOptions& opts,
                                                   const LogFn& log) {
    const KeyValueConfig info = KeyValueConfig::from_file(run_dir / "run.txt");
    const LabeledDataset data = data::read_dataset(run_dir / "data.eosd");
    criterion::CriterionKind kind;
    try {
        kind = {criterion::parse_tag(info.get_string("criterion", "")), data.num_classes};
    } catch (const ArgumentError& e) {
        throw DataError(run_dir.string() + "/run.txt: " + e.what());
    }

    std::vector<fs::path> files;
    if (fs::exists(run_dir / "snapshots")) {
        for (const auto& entry : fs::directory_iterator(run_dir / "snapshots"))
            if (entry.is_regular_file() && entry.path().extension() == ".eosl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    const std::size_t outer = std::min(resolve_thread_count(opts.exec), std::max<std::size_t>(files.size(), 1));
    AnalysisOptions inner = opts;
    if (outer > 1) inner.exec.threads = 1;

    std::vector<std::optional<DecompositionRecord>> slots(files.size());
    std::mutex mu;
    parallel_for(files.size(), outer, [&](std::size_t i) {
        Snapshot snap;
        try {
            snap = read_snapshot(files[i]);
            if (snap.widths.front() != data.dim() || snap.widths.back() != data.num_classes)
                throw FormatError(files[i].string() + ": architecture does not match the run's dataset");
        } catch (const Error& e) {
            std::lock_guard lock(mu);
            log_line(log, std::string("skipping snapshot: ") + e.what());
            return;
        }
        slots[i] = analyze_point(snap.to_model(), data, kind, snap.step, snap.t, inner);
    });

    std::vector<DecompositionRecord> out;
    for (auto& s : slots)
        if (s) out.push_back(std::move(*s));
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    return out;
}

TrimmedSeries trim_transient(std::span<const DecompositionRecord> records, std::size_t first_step) {
    TrimmedSeries out;
    for (const auto& r : records)
        if (r.step >= first_step) out.records.push_back(r);
    out.insufficient = out.records.empty();
    return out;
}

double peak(std::span<const DecompositionRecord> records, const std::function<double(const DecompositionRecord&)>& field) {
    double best = kNaN;
    for (const auto& r : records) {
        const double v = field(r);
        if (std::isnan(v)) continue;
        if (std::isnan(best) || v > best) best = v;
    }
    return best;
}

double peak_p_delta_j1(std::span<const DecompositionRecord> records) {
    return peak(records, [](const DecompositionRecord& r) {
        return r.chain.p_delta_J.empty() ? kNaN : r.chain.p_delta_J.front();
    });
}

// ---- power law ----------------------------------------------------------

PowerLawFit fit_power_law(std::span<const PowerLawPoint> points) {
    std::set<double> distinct;
    for (const auto& p : points) {
        if (!(p.peak > 0.0) || !std::isfinite(p.peak))
            throw DataError("fit_power_law: peak " + format_double(p.peak) + " at D=" + format_double(p.d) +
                            " is not positive");
        if (!(p.d > 0.0) || !std::isfinite(p.d)) throw DataError("fit_power_law: dataset size must be positive");
        distinct.insert(p.d);
    }
    if (distinct.size() < 3) throw DataError("fit_power_law: need at least 3 distinct dataset sizes");

    const double n = double(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += std::log(p.d);
        my += std::log(p.peak);
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : points) {
        const double dx = std::log(p.d) - mx, dy = std::log(p.peak) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    PowerLawFit fit;
    fit.c2 = sxy / sxx;
    fit.c1 = std::exp(my - fit.c2 * mx);
    double ss_res = 0.0;
    for (const auto& p : points) {
        const double e = std::log(p.peak) - (std::log(fit.c1) + fit.c2 * std::log(p.d));
        ss_res += e * e;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    fit.points.assign(points.begin(), points.end());
    return fit;
}

PeakAggregation parse_aggregation(const std::string& name) {
    if (name == "mean" || name == "mean_per_size") return PeakAggregation::mean_per_size;
    if (name == "max" || name == "max_per_size") return PeakAggregation::max_per_size;
    if (name == "pooled") return PeakAggregation::pooled;
    throw ArgumentError("unknown peak aggregation '" + name + "' (expected mean_per_size, max_per_size or pooled)");
}

const char* to_string(PeakAggregation mode) noexcept {
    switch (mode) {
        case PeakAggregation::mean_per_size: return "mean_per_size";
        case PeakAggregation::max_per_size: return "max_per_size";
        case PeakAggregation::pooled: return "pooled";
    }
    return "?";
}

std::vector<PowerLawPoint> aggregate_peaks(std::span<const PowerLawPoint> per_run, PeakAggregation mode) {
    std::vector<PowerLawPoint> out;
    if (mode == PeakAggregation::pooled) {
        for (const auto& p : per_run)
            if (!std::isnan(p.peak)) out.push_back(p);
        std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.d < b.d; });
        return out;
    }
    std::map<double, std::vector<double>> groups;
    for (const auto& p : per_run)
        if (!std::isnan(p.peak)) groups[p.d].push_back(p.peak);
    for (const auto& [d, peaks] : groups) {
        const double v = mode == PeakAggregation::mean_per_size
                             ? std::accumulate(peaks.begin(), peaks.end(), 0.0) / double(peaks.size())
                             : *std::max_element(peaks.begin(), peaks.end());
        out.push_back({d, v});
    }
    return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
    if (a.size() < 2) return kNaN;
    const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
    const double n = double(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return kNaN;
    return sab / std::sqrt(saa * sbb);
}

void write_power_law_report(const PowerLawFit& fit, const fs::path& path, const std::string& title) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    if (!title.empty()) out << "# " << title << "\n";
    out << "model peak = c1 * D^c2\n";
    out << "c1 = " << format_double(fit.c1) << "\n";
    out << "c2 = " << format_double(fit.c2) << "\n";
    out << "R2 = " << format_double(fit.r_squared) << "\n";
    out << "\nD peak\n";
    for (const auto& p : fit.points) out << format_double(p.d) << ' ' << format_double(p.peak) << "\n";
}

GridAnalysis analyze_grid(const fs::path& output_dir, const AnalysisOptions& opts, PeakAggregation mode,
                          const LogFn& log) {
    const std::vector<ManifestEntry> manifest = read_manifest(output_dir / "manifest.txt");
    if (manifest.empty()) throw DataError(output_dir.string() + ": no completed runs in manifest");
    GridAnalysis out;
    std::vector<PowerLawPoint> per_run;
    for (const auto& entry : manifest) {
        if (entry.status != "completed") {
            log_line(log, entry.key.name() + ": status " + entry.status + ", not analyzed");
            continue;
        }
        const fs::path dir = output_dir / "runs" / entry.key.name();
        const std::vector<DecompositionRecord> records = analyze_snapshots(dir, opts, log);
        emit_metrics_csv(records, dir / "metrics.csv");
        const TrimmedSeries trimmed = trim_transient(records);
        RunPeak rp{entry.key, dir, peak_p_delta_j1(trimmed.records), records.size(), trimmed.insufficient};
        if (!std::isnan(rp.peak)) per_run.push_back({double(entry.key.size), rp.peak});
        log_line(log, entry.key.name() + ": " + std::to_string(records.size()) + " snapshots, peak P1_dJ " +
                          format_double(rp.peak));
        out.runs.push_back(rp);
    }
    out.points = aggregate_peaks(per_run, mode);
    std::vector<double> ds, ps;
    for (const auto& p : out.points) {
        ds.push_back(p.d);
        ps.push_back(p.peak);
    }
    out.spearman = spearman(ds, ps);
    std::set<double> distinct(ds.begin(), ds.end());
    const bool positive = std::all_of(ps.begin(), ps.end(), [](double v) { return v > 0.0; });
    if (distinct.size() >= 3 && positive) out.fit = fit_power_law(out.points);
    return out;
}

// ---- metrics CSV --------------------------------------------------------

std::vector<std::string> metrics_columns(std::size_t depth) {
    if (depth < 2) throw ArgumentError("metrics_columns: depth must be >= 2");
    std::vector<std::string> cols{"step", "flow_time", "loss", "lambda1_full", "lambda1_G", "lambda1_H", "rho_K", "e_K_sq"};
    for (std::size_t i = 1; i <= depth; ++i) cols.push_back("e_K" + std::to_string(i) + "_sq");
    for (const char* c : {"pi_chi_1", "p_chi_delta_1", "pi_J_1", "p_delta_J_1", "e_deltaL_sq"}) cols.emplace_back(c);
    for (const char* base : {"chi_sq_", "jac_norm_sq_", "align_chi_", "align_dJ_"})
        for (std::size_t i = 1; i < depth; ++i) cols.push_back(base + std::to_string(i));
    return cols;
}

void emit_metrics_csv(std::span<const DecompositionRecord> records, const fs::path& path, std::size_t depth) {
    if (!records.empty()) depth = records.front().depth();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    if (depth >= 2) {
        const auto cols = metrics_columns(depth);
        for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    } else {
        out << "step,flow_time,loss,lambda1_full,lambda1_G,lambda1_H,rho_K,e_K_sq";
    }
    out << '\n';
    for (const auto& r : records) {
        if (r.depth() != depth || r.chain.chi_sq.size() != depth - 1)
            throw ShapeError("emit_metrics_csv: records have inconsistent depth");
        out << r.step;
        auto put = [&out](double v) { out << ',' << format_double(v); };
        put(r.t);
        put(r.loss);
        put(r.lambda1_full);
        put(r.lambda1_G);
        put(r.lambda1_H);
        put(r.rho_K);
        put(r.e_K_norm_sq);
        for (double v : r.e_Ki_norm_sq) put(v);
        put(r.chain.pi_chi[0]);
        put(r.chain.p_chi_delta[0]);
        put(r.chain.pi_J[0]);
        put(r.chain.p_delta_J[0]);
        put(r.chain.e_deltaL_norm_sq);
        for (const Vec* v : {&r.chain.chi_sq, &r.chain.jac_norm_sq, &r.chain.align_chi, &r.chain.align_dJ})
            for (double x : *v) put(x);
        out << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

std::optional<std::size_t> MetricsTable::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return std::nullopt;
    return std::size_t(it - columns.begin());
}

MetricsTable read_metrics_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    MetricsTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
    t.columns = split_list(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_list(line);
        if (fields.size() != t.columns.size())
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(t.columns.size()) + " fields, found " + std::to_string(fields.size()));
        std::vector<double> row;
        for (const auto& f : fields) {
            char* end = nullptr;
            const double v = std::strtod(f.c_str(), &end);
            if (f.empty() || end != f.c_str() + f.size())
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + f + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::vector<DecompositionRecord> parse_metrics_csv(const fs::path& path) {
    const MetricsTable t = read_metrics_table(path);
    std::size_t depth = 0;
    while (t.column("e_K" + std::to_string(depth + 1) + "_sq")) ++depth;
    if (depth == 0) {
        if (t.rows.empty()) return {};
        throw FormatError(path.string() + ": no per-layer columns");
    }
    if (t.columns != metrics_columns(depth)) throw FormatError(path.string() + ": unexpected column layout");
    std::vector<DecompositionRecord> out;
    for (const auto& row : t.rows) {
        DecompositionRecord r;
        std::size_t c = 0;
        r.step = static_cast<std::size_t>(row[c++]);
        r.t = row[c++];
        r.loss = row[c++];
        r.lambda1_full = row[c++];
        r.lambda1_G = row[c++];
        r.lambda1_H = row[c++];
        r.rho_K = row[c++];
        r.e_K_norm_sq = row[c++];
        r.e_Ki_norm_sq.assign(row.begin() + std::ptrdiff_t(c), row.begin() + std::ptrdiff_t(c + depth));
        c += depth + 4;  // start-layer-1 products are rebuilt from the ratios
        r.chain.e_deltaL_norm_sq = row[c++];
        for (Vec* v : {&r.chain.chi_sq, &r.chain.jac_norm_sq, &r.chain.align_chi, &r.chain.align_dJ}) {
            v->assign(row.begin() + std::ptrdiff_t(c), row.begin() + std::ptrdiff_t(c + depth - 1));
            c += depth - 1;
        }
        decomposition::fill_products(r.chain);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace eos::experiment
