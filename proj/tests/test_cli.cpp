#include "test_util.hpp"

#include "cli.hpp"
#include "plot.hpp"
#include "verify.hpp"

#include "eos/data.hpp"
#include "eos/error.hpp"
#include "eos/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace eos;
namespace fs = std::filesystem;
namespace ex = eos::experiment;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "eos");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_tiny_config(const fs::path& p, const fs::path& out) {
    std::ofstream f(p);
    f << "dataset.dice_per_class = 6\nexperiment.sizes = 6,12\nexperiment.init_seeds = 1\n"
         "experiment.subset_seeds = 1\nmodel.depth = 3\nmodel.width = 8\nsolver.max_steps = 25\n"
         "solver.snapshot_interval = 10\noutput.dir = "
      << out.string() << "\n";
}

}  // namespace

TEST(Cli, HelpListsVerbsAndExitsZero) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const char* verb : {"gen-dice", "train", "analyze", "fit-powerlaw", "plot", "verify"})
        EXPECT_NE(r.out.find(verb), std::string::npos) << verb;
    const auto t = run({"train", "--help"});
    EXPECT_EQ(t.code, 0);
    for (const char* flag : {"--config", "--set", "--criterion", "--max-steps", "--eta", "--output", "--workers"})
        EXPECT_NE(t.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({"train", "--bogus"}).code, cli::kExitConfig);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kExitConfig);
    EXPECT_EQ(run({"verify", "--set", "no.such.key=1"}).code, cli::kExitConfig);
    EXPECT_EQ(run({"verify", "--fault", "cosmic-ray"}).code, cli::kExitConfig);
    EXPECT_EQ(run({"train", "--config", "/nonexistent/eos.cfg"}).code, cli::kExitConfig);
    EXPECT_EQ(run({"train", "--criterion", "hinge"}).code, cli::kExitConfig);
    const auto r = run({"verify", "--set", "model.depth=zero"});
    EXPECT_EQ(r.code, cli::kExitConfig);
    EXPECT_NE(r.err.find("model.depth"), std::string::npos);
}

TEST(Cli, VerifyPassesAndInjectedFaultsFail) {
    const auto ok = run({"verify"});
    EXPECT_EQ(ok.code, cli::kExitOk) << ok.out;
    EXPECT_NE(ok.out.find("all checks passed"), std::string::npos);
    const auto g = run({"verify", "--inject-fault", "g-operator"});
    EXPECT_EQ(g.code, cli::kExitVerification);
    EXPECT_NE(g.out.find("FAIL"), std::string::npos);
    EXPECT_EQ(run({"verify", "--fault", "delta-norm"}).code, cli::kExitVerification);
}

TEST(VerifySuite, FaultsTripTheIntendedChecks) {
    cli::VerifyOptions opts;
    auto failing = [&](cli::Fault f) {
        opts.fault = f;
        std::vector<std::string> names;
        for (const auto& c : cli::run_verify_suite(opts))
            if (!c.passed) names.push_back(c.name);
        return names;
    };
    EXPECT_TRUE(failing(cli::Fault::none).empty());
    bool dense_g = false;
    for (const auto& n : failing(cli::Fault::g_operator)) dense_g |= n.find("G operator vs dense") != std::string::npos;
    EXPECT_TRUE(dense_g);
    const auto d = failing(cli::Fault::delta_norm);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_NE(d[0].find("telescoping"), std::string::npos);
}

TEST(Cli, GenDiceIsDeterministic) {
    const auto dir = eos::testing::scratch_dir("cli_gen");
    const auto a = (dir / "a.eosd").string(), b = (dir / "b.eosd").string();
    EXPECT_EQ(run({"gen-dice", "--n-per-class", "5", "--seed", "9", "-o", a}).code, 0);
    EXPECT_EQ(run({"gen-dice", "--n-per-class", "5", "--seed", "9", "-o", b}).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_EQ(fs::file_size(a), 32u + 4u * 30u + 8u * 30u * 1024u);
    EXPECT_EQ(run({"gen-dice", "--n-per-class", "5", "--seed", "10", "-o", b}).code, 0);
    EXPECT_NE(slurp(a), slurp(b));
    const LabeledDataset ds = data::read_dataset(a);
    EXPECT_EQ(ds.size(), 30u);
    EXPECT_EQ(ds.num_classes, 6u);
}

TEST(Cli, MissingDataFileExitsThree) {
    const auto dir = eos::testing::scratch_dir("cli_missing");
    const auto r = run({"train", "--set", "dataset.source=file", "--set",
                        "dataset.paths=" + (dir / "nope.eosd").string(), "-o", (dir / "out").string()});
    EXPECT_EQ(r.code, cli::kExitData);
}

TEST(Cli, DivergenceExitsFour) {
    const auto dir = eos::testing::scratch_dir("cli_diverge");
    write_tiny_config(dir / "c.cfg", dir / "out");
    const auto r = run({"train", "-c", (dir / "c.cfg").string(), "--set", "model.gain=1e200"});
    EXPECT_EQ(r.code, cli::kExitDivergence);
}

TEST(Cli, TrainAnalyzeFitPlotPipeline) {
    const auto dir = eos::testing::scratch_dir("cli_pipeline");
    write_tiny_config(dir / "c.cfg", dir / "out");
    const std::string cfg = (dir / "c.cfg").string(), out = (dir / "out").string();
    const auto t = run({"train", "-c", cfg, "--max-steps", "20"});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto again = run({"train", "-c", cfg, "--max-steps", "20"});
    EXPECT_EQ(again.code, 0);
    const auto a = run({"analyze", "-c", cfg, "--grid", out});
    ASSERT_EQ(a.code, 0) << a.err;
    const fs::path csv = dir / "out/runs/n6_init1_subset1/metrics.csv";
    ASSERT_TRUE(fs::exists(csv));
    EXPECT_EQ(ex::read_metrics_table(csv).columns, ex::metrics_columns(3));

    std::ofstream(dir / "pts.txt") << "100 0.1\n200 0.2\n400 0.4\n";
    const auto f = run({"fit-powerlaw", "--points", (dir / "pts.txt").string(), "-o", (dir / "fit.txt").string()});
    EXPECT_EQ(f.code, 0) << f.err;
    EXPECT_TRUE(fs::exists(dir / "fit.txt"));
    std::ofstream(dir / "bad.txt") << "100 0.1\n200 0\n400 0.4\n";
    EXPECT_EQ(run({"fit-powerlaw", "--points", (dir / "bad.txt").string()}).code, cli::kExitData);

    const auto p = run({"plot", "--csv", csv.string(), "--csv", (dir / "out/runs/n12_init1_subset1/metrics.csv").string(),
                        "-o", (dir / "plots").string()});
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_TRUE(fs::exists(dir / "plots/p_delta_J_1.svg"));
    EXPECT_TRUE(fs::exists(dir / "plots/lambda1_full.svg"));
    const auto bad = run({"plot", "--csv", csv.string(), "--column", "nonsense", "-o", (dir / "plots").string()});
    EXPECT_EQ(bad.code, cli::kExitConfig);
    EXPECT_NE(bad.err.find("p_delta_J_1"), std::string::npos);
}

TEST(Plot, EmptySeriesGivesEmptyAxes) {
    const auto dir = eos::testing::scratch_dir("plot_empty");
    ex::emit_metrics_csv({}, dir / "m.csv", 3);
    const auto r = run({"plot", "--csv", (dir / "m.csv").string(), "--column", "rho_K", "-o", (dir / "p").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    const std::string svg = slurp(dir / "p/rho_K.svg");
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_EQ(svg.find("<polyline"), std::string::npos);
}

TEST(Plot, ColorsByRankAndStableOutput) {
    const std::vector<double> sizes{96, 192, 96, 384};
    EXPECT_EQ(cli::size_color(96, sizes), cli::size_color(96, {96, 192, 384}));
    EXPECT_NE(cli::size_color(96, sizes), cli::size_color(384, sizes));
    EXPECT_NE(cli::size_color(96, sizes), cli::size_color(192, sizes));

    ex::MetricsTable t;
    t.columns = {"step", "rho_K"};
    t.rows = {{0, 0.1}, {10, 0.2}, {20, std::nan("")}, {30, 0.15}};
    std::vector<cli::PlotSeries> series{{t, 96, "a"}, {t, 192, "b"}, {t, 96, "c"}};
    cli::PlotSpec spec{"step", "rho_K", false, ""};
    const std::string a = cli::render_svg(series, spec), b = cli::render_svg(series, spec);
    EXPECT_EQ(a, b);
    std::size_t lines = 0;
    for (std::size_t pos = 0; (pos = a.find("<polyline", pos)) != std::string::npos; ++pos) ++lines;
    EXPECT_EQ(lines, 3u);
    const std::string c96 = cli::size_color(96, {96, 192, 96});
    std::size_t same = 0;
    for (std::size_t pos = 0; (pos = a.find("stroke=\"" + c96 + "\" points", pos)) != std::string::npos; ++pos) ++same;
    EXPECT_EQ(same, 2u);
    spec.y_column = "missing";
    EXPECT_THROW(cli::render_svg(series, spec), ArgumentError);
}
