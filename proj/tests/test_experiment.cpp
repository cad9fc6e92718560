#include "test_util.hpp"

#include "eos/error.hpp"
#include "eos/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace eos;
using namespace eos::testing;
namespace ex = eos::experiment;
namespace fs = std::filesystem;
namespace dc = eos::decomposition;

namespace {

ex::ExperimentConfig tiny_config(const fs::path& out) {
    ex::ExperimentConfig c;
    c.dataset.dice_per_class = 6;
    c.sizes = {6, 12};
    c.init_seeds = {1, 2};
    c.subset_seeds = {3};
    c.depth = 3;
    c.width = 8;
    c.solver.max_steps = 25;
    c.solver.snapshot_interval = 10;
    c.output_dir = out;
    c.exec = {1, true};
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

dc::DecompositionRecord fake_record(std::size_t step, double p1, std::size_t depth = 3) {
    dc::DecompositionRecord r;
    r.step = step;
    r.t = 0.5 * double(step);
    r.loss = 1.0 / (1.0 + double(step));
    r.lambda1_full = 3.0 + 1e-13 * double(step);
    r.lambda1_G = 2.5;
    r.lambda1_H = std::nan("");
    r.rho_K = 0.4;
    r.e_K_norm_sq = 6.0;
    r.e_Ki_norm_sq = Vec(depth, 2.0 / 3.0);
    r.chain.chi_sq = Vec(depth - 1, 0.9);
    r.chain.jac_norm_sq = Vec(depth - 1, 1.7);
    r.chain.align_chi = Vec(depth - 1, 0.95);
    r.chain.align_dJ = Vec(depth - 1, std::sqrt(p1));
    r.chain.e_deltaL_norm_sq = 0.1 + 1.0 / 3.0;
    dc::fill_products(r.chain);
    return r;
}

}  // namespace

TEST(Snapshot, RoundTripAndCorruption) {
    const auto dir = scratch_dir("snap");
    const model::MlpModel m = perturbed_model({5, 4, 3}, 1);
    ex::Snapshot s{42, 1.25, m.widths(), m.params()};
    const fs::path p = ex::snapshot_path(dir, 42);
    EXPECT_EQ(p.filename(), "step_00000042.eosl");
    fs::create_directories(p.parent_path());
    ex::write_snapshot(s, p);
    const ex::Snapshot r = ex::read_snapshot(p);
    EXPECT_EQ(r, s);
    EXPECT_EQ(r.to_model().params(), m.params());
    EXPECT_EQ(slurp(p).substr(0, 4), "EOSL");
    EXPECT_EQ(fs::file_size(p), 4 + 4 + 8 + 8 + 4 + 4 * 3 + 8 * m.param_count());
    fs::resize_file(p, fs::file_size(p) - 1);
    EXPECT_THROW(ex::read_snapshot(p), FormatError);
}

TEST(Manifest, RoundTripSortedAndHash) {
    const auto dir = scratch_dir("manifest");
    std::vector<ex::ManifestEntry> e{{{192, 2, 1}, "completed", 0xabcdef}, {{96, 1, 1}, "diverged", 7}};
    ex::write_manifest(e, dir / "manifest.txt");
    const auto r = ex::read_manifest(dir / "manifest.txt");
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].key.size, 96u);
    EXPECT_EQ(r[1].hash, 0xabcdefu);
    EXPECT_EQ(r[0].status, "diverged");
    EXPECT_TRUE(ex::read_manifest(dir / "missing.txt").empty());
    EXPECT_EQ((ex::RunKey{96, 1, 2}.name()), "n96_init1_subset2");

    fs::create_directories(dir / "h/sub");
    std::ofstream(dir / "h/a.txt") << "abc";
    std::ofstream(dir / "h/sub/b.txt") << "def";
    const auto h1 = ex::hash_directory(dir / "h");
    EXPECT_EQ(h1, ex::hash_directory(dir / "h"));
    std::ofstream(dir / "h/sub/b.txt") << "deg";
    EXPECT_NE(h1, ex::hash_directory(dir / "h"));
}

TEST(Grid, MinimalGridIsOneRun) {
    const auto dir = scratch_dir("grid_min");
    auto c = tiny_config(dir / "out");
    c.sizes = {6};
    c.init_seeds = {1};
    const auto out = ex::run_experiment_grid(c);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].status, "completed");
    EXPECT_TRUE(fs::exists(out[0].dir / "run.txt"));
    EXPECT_TRUE(fs::exists(out[0].dir / "train_log.csv"));
    EXPECT_TRUE(fs::exists(ex::snapshot_path(out[0].dir, 0)));
    EXPECT_TRUE(fs::exists(ex::snapshot_path(out[0].dir, 10)));
    EXPECT_EQ(ex::read_manifest(dir / "out/manifest.txt").size(), 1u);
}

TEST(Grid, CountIsProductOfAxes) {
    const auto dir = scratch_dir("grid_count");
    auto c = tiny_config(dir / "out");
    c.solver.max_steps = 2;
    c.init_seeds = {1, 2};
    c.subset_seeds = {1, 2};
    c.sizes = {3, 6, 9};
    EXPECT_EQ(ex::run_experiment_grid(c).size(), 12u);
}

TEST(Grid, ResumeIsByteIdentical) {
    const auto dir = scratch_dir("grid_resume");
    const auto full_cfg = tiny_config(dir / "straight");
    ex::run_experiment_grid(full_cfg);

    auto partial = tiny_config(dir / "resumed");
    partial.sizes = {6};
    partial.init_seeds = {1};
    ex::run_experiment_grid(partial);
    // A run directory without a manifest entry models a killed run.
    fs::create_directories(dir / "resumed/runs/n12_init2_subset3");
    std::ofstream(dir / "resumed/runs/n12_init2_subset3/junk") << "partial";
    const auto resumed = ex::run_experiment_grid(tiny_config(dir / "resumed"));
    std::size_t skipped = 0;
    for (const auto& o : resumed) skipped += o.skipped;
    EXPECT_EQ(skipped, 1u);

    for (const auto& e : ex::read_manifest(dir / "straight/manifest.txt")) {
        const auto name = e.key.name();
        EXPECT_EQ(ex::hash_directory(dir / "straight/runs" / name), ex::hash_directory(dir / "resumed/runs" / name))
            << name;
    }
    EXPECT_EQ(slurp(dir / "straight/manifest.txt"), slurp(dir / "resumed/manifest.txt"));
    const auto again = ex::run_experiment_grid(tiny_config(dir / "resumed"));
    for (const auto& o : again) EXPECT_TRUE(o.skipped);
}

TEST(Grid, DivergenceIsRecordedAndGridContinues) {
    const auto dir = scratch_dir("grid_diverge");
    auto c = tiny_config(dir / "out");
    c.init_seeds = {1};
    c.gain = 1e200;
    const auto out = ex::run_experiment_grid(c);
    ASSERT_EQ(out.size(), 2u);
    for (const auto& o : out) {
        EXPECT_EQ(o.status, "diverged");
        EXPECT_NE(o.diagnostic.find("step"), std::string::npos);
    }
    for (const auto& e : ex::read_manifest(dir / "out/manifest.txt")) EXPECT_EQ(e.status, "diverged");
}

TEST(Grid, SizeLargerThanPoolIsRejected) {
    const auto dir = scratch_dir("grid_big");
    auto c = tiny_config(dir / "out");
    c.sizes = {1000};
    EXPECT_THROW(ex::run_experiment_grid(c), ConfigError);
}

TEST(Analysis, SnapshotsSatisfyIdentitiesAndAreDeterministic) {
    const auto dir = scratch_dir("analysis");
    auto c = tiny_config(dir / "out");
    c.sizes = {12};
    c.init_seeds = {1};
    const auto out = ex::run_experiment_grid(c);
    const auto recs = ex::analyze_snapshots(out[0].dir);
    ASSERT_GE(recs.size(), 3u);
    EXPECT_EQ(recs.front().step, 0u);
    for (const auto& r : recs) {
        EXPECT_GE(r.rho_K, 0.0);
        EXPECT_LE(r.rho_K, 1.0 + 1e-9);
        EXPECT_LE(r.lambda1_G, r.e_K_norm_sq * (1 + 1e-9));
        for (std::size_t k = 1; k < r.depth(); ++k) {
            const auto f = dc::factors_at(r.chain, k);
            EXPECT_LE(rel_err(f.product(), r.e_Ki_norm_sq[k - 1]), 1e-9);
        }
    }
    ex::emit_metrics_csv(recs, dir / "a.csv");
    ex::emit_metrics_csv(ex::analyze_snapshots(out[0].dir), dir / "b.csv");
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(Analysis, CorruptSnapshotSkippedWithLog) {
    const auto dir = scratch_dir("analysis_corrupt");
    auto c = tiny_config(dir / "out");
    c.sizes = {6};
    c.init_seeds = {1};
    const auto out = ex::run_experiment_grid(c);
    const fs::path bad = ex::snapshot_path(out[0].dir, 10);
    fs::resize_file(bad, 20);
    std::vector<std::string> logs;
    const auto recs = ex::analyze_snapshots(out[0].dir, {}, [&](const std::string& m) { logs.push_back(m); });
    for (const auto& r : recs) EXPECT_NE(r.step, 10u);
    ASSERT_FALSE(logs.empty());
    bool named = false;
    for (const auto& l : logs) named |= l.find("step_00000010") != std::string::npos;
    EXPECT_TRUE(named);
}

TEST(Trim, ShortSeriesAndRule) {
    std::vector<dc::DecompositionRecord> five;
    for (std::size_t s = 0; s < 5; ++s) five.push_back(fake_record(s, 0.1));
    const auto t5 = ex::trim_transient(five);
    EXPECT_TRUE(t5.insufficient);
    EXPECT_TRUE(t5.records.empty());
    std::vector<dc::DecompositionRecord> long_run;
    for (std::size_t s = 0; s <= 1000; ++s) long_run.push_back(fake_record(s, 0.1));
    const auto t = ex::trim_transient(long_run);
    EXPECT_FALSE(t.insufficient);
    EXPECT_EQ(t.records.size(), 991u);
    EXPECT_EQ(t.records.front().step, 10u);
    EXPECT_EQ(t.records.back().step, 1000u);
}

TEST(Trim, PeakIgnoresNan) {
    std::vector<dc::DecompositionRecord> recs{fake_record(10, 0.2), fake_record(20, 0.5), fake_record(30, 0.3)};
    recs[1].chain.p_delta_J[0] = std::nan("");
    EXPECT_DOUBLE_EQ(ex::peak_p_delta_j1(recs), recs[2].chain.p_delta_J[0]);
    EXPECT_TRUE(std::isnan(ex::peak(recs, [](const dc::DecompositionRecord& r) { return r.lambda1_H; })));
}

TEST(PowerLaw, NoiselessRecovery) {
    std::vector<ex::PowerLawPoint> pts;
    for (double d : {390.0, 781.0, 1562.0, 3125.0, 6250.0}) pts.push_back({d, 0.0004 * std::pow(d, 0.49)});
    const auto fit = ex::fit_power_law(pts);
    EXPECT_NEAR(fit.c1, 0.0004, 1e-10);
    EXPECT_NEAR(fit.c2, 0.49, 1e-10);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
    EXPECT_EQ(fit.points.size(), 5u);
}

TEST(PowerLaw, LognormalNoiseMonteCarlo) {
    // Batches of 100 trials; coverage is pooled so the 95% bound is not a coin flip.
    Rng rng(2024);
    const int batches = 100, trials = 100;
    std::size_t ok = 0;
    double sum = 0.0, sum_sq = 0.0;
    for (int t = 0; t < batches * trials; ++t) {
        std::vector<ex::PowerLawPoint> pts;
        for (double d = 96; d <= 1536; d *= 2) pts.push_back({d, 0.0017 * std::pow(d, 0.23) * std::exp(0.1 * rng.normal())});
        const auto fit = ex::fit_power_law(pts);
        ASSERT_GE(fit.r_squared, 0.0);
        ASSERT_LE(fit.r_squared, 1.0);
        ok += std::abs(fit.c2 - 0.23) <= 0.1;
        sum += fit.c2;
        sum_sq += fit.c2 * fit.c2;
    }
    const double n = batches * trials;
    EXPECT_GE(double(ok) / n, 0.95);
    const double mean = sum / n, sd = std::sqrt(sum_sq / n - mean * mean);
    double sxx = 0.0;
    for (int i = 0; i < 5; ++i) sxx += std::pow((i - 2) * std::log(2.0), 2);
    EXPECT_NEAR(mean, 0.23, 0.005);
    EXPECT_NEAR(sd, 0.1 / std::sqrt(sxx), 0.003);
}

TEST(PowerLaw, Errors) {
    std::vector<ex::PowerLawPoint> two{{1, 1}, {2, 2}, {2, 3}};
    EXPECT_THROW(ex::fit_power_law(two), DataError);
    std::vector<ex::PowerLawPoint> neg{{1, 1}, {2, 0}, {4, 3}};
    EXPECT_THROW(ex::fit_power_law(neg), DataError);
}

TEST(PowerLaw, AggregationModes) {
    std::vector<ex::PowerLawPoint> runs{{96, 0.1}, {96, 0.3}, {192, 0.2}, {192, 0.4}};
    const auto mean = ex::aggregate_peaks(runs, ex::PeakAggregation::mean_per_size);
    ASSERT_EQ(mean.size(), 2u);
    EXPECT_DOUBLE_EQ(mean[0].peak, 0.2);
    EXPECT_DOUBLE_EQ(mean[1].peak, 0.3);
    const auto mx = ex::aggregate_peaks(runs, ex::PeakAggregation::max_per_size);
    EXPECT_DOUBLE_EQ(mx[1].peak, 0.4);
    EXPECT_EQ(ex::aggregate_peaks(runs, ex::PeakAggregation::pooled).size(), 4u);
    EXPECT_EQ(ex::parse_aggregation("pooled"), ex::PeakAggregation::pooled);
    EXPECT_THROW(ex::parse_aggregation("median"), ArgumentError);
}

TEST(PowerLaw, SpearmanWithTies) {
    const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1}, t{1, 1, 2, 3};
    EXPECT_DOUBLE_EQ(ex::spearman(a, b), 1.0);
    EXPECT_DOUBLE_EQ(ex::spearman(a, c), -1.0);
    // Average ranks: t -> (1.5, 1.5, 3, 4).
    const double r = ex::spearman(a, t);
    const double ma = 2.5, mt = 2.5;
    const double rt[] = {1.5, 1.5, 3, 4};
    double num = 0, da = 0, dt = 0;
    for (int i = 0; i < 4; ++i) {
        num += (i + 1 - ma) * (rt[i] - mt);
        da += (i + 1 - ma) * (i + 1 - ma);
        dt += (rt[i] - mt) * (rt[i] - mt);
    }
    EXPECT_NEAR(r, num / std::sqrt(da * dt), 1e-15);
    EXPECT_TRUE(std::isnan(ex::spearman(a, std::vector<double>(4, 1.0))));
}

TEST(PowerLaw, ReportContainsCoefficients) {
    const auto dir = scratch_dir("report");
    std::vector<ex::PowerLawPoint> pts{{100, 1}, {200, 2}, {400, 4}};
    ex::write_power_law_report(ex::fit_power_law(pts), dir / "r.txt", "test");
    const std::string text = slurp(dir / "r.txt");
    EXPECT_NE(text.find("c1"), std::string::npos);
    EXPECT_NE(text.find("c2"), std::string::npos);
    EXPECT_NE(text.find("R2"), std::string::npos);
    EXPECT_NE(text.find("400"), std::string::npos);
}

TEST(MetricsCsv, SchemaAndEmptyFile) {
    const auto cols = ex::metrics_columns(6);
    EXPECT_EQ(cols.size(), 8u + 6u + 5u + 4u * 5u);
    EXPECT_EQ(cols[0], "step");
    EXPECT_EQ(cols[8], "e_K1_sq");
    EXPECT_EQ(cols[13], "e_K6_sq");
    EXPECT_EQ(cols[14], "pi_chi_1");
    EXPECT_EQ(cols[17], "p_delta_J_1");
    EXPECT_EQ(cols[18], "e_deltaL_sq");
    const auto dir = scratch_dir("csv_schema");
    ex::emit_metrics_csv({}, dir / "e.csv", 6);
    const auto table = ex::read_metrics_table(dir / "e.csv");
    EXPECT_EQ(table.columns, cols);
    EXPECT_TRUE(table.rows.empty());
    EXPECT_TRUE(ex::parse_metrics_csv(dir / "e.csv").empty());
}

TEST(MetricsCsv, RoundTripFullPrecision) {
    const auto dir = scratch_dir("csv_rt");
    std::vector<dc::DecompositionRecord> recs{fake_record(0, 0.013), fake_record(10, 0.3141592653589793)};
    recs[1].lambda1_full = -std::numeric_limits<double>::infinity();
    ex::emit_metrics_csv(recs, dir / "m.csv");
    const auto back = ex::parse_metrics_csv(dir / "m.csv");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].step, recs[i].step);
        EXPECT_EQ(back[i].t, recs[i].t);
        EXPECT_EQ(back[i].loss, recs[i].loss);
        EXPECT_EQ(back[i].lambda1_full, recs[i].lambda1_full);
        EXPECT_TRUE(std::isnan(back[i].lambda1_H));
        EXPECT_EQ(back[i].e_Ki_norm_sq, recs[i].e_Ki_norm_sq);
        EXPECT_EQ(back[i].chain.align_dJ, recs[i].chain.align_dJ);
        EXPECT_EQ(back[i].chain.p_delta_J, recs[i].chain.p_delta_J);
        EXPECT_EQ(back[i].chain.pi_chi, recs[i].chain.pi_chi);
        EXPECT_EQ(back[i].chain.e_deltaL_norm_sq, recs[i].chain.e_deltaL_norm_sq);
    }
    EXPECT_EQ(ex::format_double(0.1), "0.10000000000000001");
}

TEST(GridAnalysis, FitsAcrossSizes) {
    const auto dir = scratch_dir("grid_analysis");
    auto c = tiny_config(dir / "out");
    c.sizes = {6, 12, 18};
    c.init_seeds = {1};
    c.solver.max_steps = 30;
    ex::run_experiment_grid(c);
    const auto g = ex::analyze_grid(dir / "out");
    EXPECT_EQ(g.runs.size(), 3u);
    for (const auto& r : g.runs) EXPECT_TRUE(fs::exists(r.dir / "metrics.csv"));
    EXPECT_EQ(g.points.size(), 3u);
    ASSERT_TRUE(g.fit.has_value());
    EXPECT_GE(g.fit->r_squared, 0.0);
}
