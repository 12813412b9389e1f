#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "owf/checkpoint.hpp"
#include "owf/outputs.hpp"

using namespace owf;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path work_dir()
{
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "owf_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run(const std::string& args)
{
    static int counter = 0;
    const fs::path out = work_dir() / ("stdout_" + std::to_string(counter));
    const fs::path err = work_dir() / ("stderr_" + std::to_string(counter++));
    const std::string cmd = std::string("\"") + OWF_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

const std::string kSmallModel =
    " --set train.steps=20 train.checkpoint_every=10 train.record_wall_clock=false model.gen_hidden=[8,8]"
    " model.disc_hidden=[8,8] objective.S=16 objective.batch_size=16 metrics.hq_samples=500"
    " train.train_set_size=200";

/// Trains the small ring model once and returns its output directory.
fs::path trained_ring()
{
    static const fs::path dir = [] {
        const fs::path d = work_dir() / "ring_a";
        const RunResult r = run("train --preset ring --seed 1 --out " + d.string() + kSmallModel);
        EXPECT_EQ(r.code, 0) << r.err;
        return d;
    }();
    return dir;
}

double ring_log_density_oracle(double x, double y)
{
    const double sigma = 0.05;
    double terms[8];
    double top = -1e300;
    for (int k = 0; k < 8; ++k) {
        const double a = 2.0 * M_PI * k / 8.0;
        const double dx = x - 2.0 * std::cos(a), dy = y - 2.0 * std::sin(a);
        terms[k] = -(dx * dx + dy * dy) / (2.0 * sigma * sigma) - std::log(2.0 * M_PI * sigma * sigma * 8.0);
        top = std::max(top, terms[k]);
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - top);
    return top + std::log(sum);
}

}  // namespace

TEST(Cli, MissingConfigFileIsAnIoError)
{
    const std::string missing = (work_dir() / "nope" / "config.json").string();
    const RunResult r = run("train --config " + missing + " --out " + (work_dir() / "unused").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(r.err.rfind("owf-error io ", 0), 0u) << r.err;
    EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST(Cli, ConfigErrorsUseExitCodeTwo)
{
    const fs::path cfg = work_dir() / "bad_config.json";
    std::ofstream(cfg) << R"({"train": {"stepz": 3}})";
    const RunResult r = run("train --config " + cfg.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("owf-error config ", 0), 0u) << r.err;
    EXPECT_NE(r.err.find("train.stepz"), std::string::npos);

    const RunResult usage = run("no-such-command");
    EXPECT_EQ(usage.code, 2);
    EXPECT_EQ(usage.err.rfind("owf-error usage ", 0), 0u) << usage.err;
    EXPECT_EQ(std::count(usage.err.begin(), usage.err.end(), '\n'), 1);
}

TEST(Cli, TrainingIsReproducible)
{
    const fs::path a = trained_ring();
    const fs::path b = work_dir() / "ring_b";
    const RunResult r = run("train --preset ring --seed 1 --out " + b.string() + kSmallModel);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("iterations=20 "), std::string::npos) << r.out;
    for (const char* file : {"summary.csv", "trace.csv", "mode_hits.csv"})
        EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
    const json ca = json::parse(slurp(a / "checkpoints" / "final.json"));
    const json cb = json::parse(slurp(b / "checkpoints" / "final.json"));
    EXPECT_EQ(ca.at("discriminator"), cb.at("discriminator"));
    EXPECT_EQ(ca.at("generator"), cb.at("generator"));
    EXPECT_TRUE(fs::exists(a / "checkpoints" / "iter_10.json"));
    EXPECT_TRUE(fs::exists(a / "config.json"));
    EXPECT_EQ(read_csv(a / "trace.csv").rows.size(), 20u);
}

TEST(Cli, ResumeMatchesUninterruptedRun)
{
    const fs::path a = trained_ring();
    const fs::path c = work_dir() / "ring_resumed";
    const RunResult r =
        run("train --resume " + (a / "checkpoints" / "iter_10.json").string() + " --out " + c.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const json full = json::parse(slurp(a / "checkpoints" / "final.json"));
    const json resumed = json::parse(slurp(c / "checkpoints" / "final.json"));
    EXPECT_EQ(full.at("discriminator"), resumed.at("discriminator"));
    EXPECT_EQ(full.at("generator"), resumed.at("generator"));
    EXPECT_EQ(full.at("rng"), resumed.at("rng"));
    EXPECT_EQ(slurp(a / "summary.csv"), slurp(c / "summary.csv"));
}

TEST(Cli, GridSummaryFields)
{
    const fs::path d = work_dir() / "grid";
    const RunResult r = run("train --preset grid --seed 2 --out " + d.string() + kSmallModel);
    ASSERT_EQ(r.code, 0) << r.err;
    const CsvTable s = read_csv(d / "summary.csv");
    ASSERT_EQ(s.rows.size(), 1u);
    EXPECT_EQ(s.rows[0][s.column("preset")], "grid");
    EXPECT_EQ(s.rows[0][s.column("n_samples")], "500");
    const double hq = parse_double(s.rows[0][s.column("hq_fraction")]);
    EXPECT_GE(hq, 0.0);
    EXPECT_LE(hq, 1.0);
    const Index modes = std::stoll(s.rows[0][s.column("modes_captured")]);
    EXPECT_GE(modes, 0);
    EXPECT_LE(modes, 25);
    EXPECT_EQ(read_csv(d / "mode_hits.csv").rows.size(), 25u);
}

TEST(Cli, EvalZetaWritesOneRowPerCount)
{
    const fs::path ckpt = trained_ring() / "checkpoints" / "final.json";
    const std::string args = "eval-zeta --checkpoint " + ckpt.string() +
                             " --proposals generator,normal,ground_truth --counts 10,100 --repetitions 3 --out ";
    const RunResult r1 = run(args + (work_dir() / "zeta1").string());
    const RunResult r2 = run(args + (work_dir() / "zeta2").string());
    ASSERT_EQ(r1.code, 0) << r1.err;
    ASSERT_EQ(r2.code, 0) << r2.err;
    for (const char* tag : {"generator", "normal", "ground_truth"}) {
        const std::string file = std::string("zeta_") + tag + ".csv";
        const CsvTable t = read_csv(work_dir() / "zeta1" / file);
        ASSERT_EQ(t.rows.size(), 2u) << file;
        EXPECT_EQ(t.rows[0][t.column("proposal")], tag);
        EXPECT_EQ(t.rows[1][t.column("sample_count")], "100");
        EXPECT_EQ(t.rows[1][t.column("repetitions")], "3");
        EXPECT_EQ(slurp(work_dir() / "zeta1" / file), slurp(work_dir() / "zeta2" / file));
    }
    const RunResult bad = run("eval-zeta --checkpoint " + ckpt.string() + " --proposals uniform --out " +
                              (work_dir() / "zeta3").string());
    EXPECT_EQ(bad.code, 2);
}

TEST(Cli, CorruptCheckpointIsRejected)
{
    const fs::path bad = work_dir() / "corrupt.json";
    std::string text = slurp(trained_ring() / "checkpoints" / "final.json");
    text.resize(text.size() / 2);
    std::ofstream(bad) << text;
    for (const char* cmd : {"eval-zeta", "overfit-hist", "generate"}) {
        const RunResult r = run(std::string(cmd) + " --checkpoint " + bad.string() + " --out " +
                                (work_dir() / "corrupt_out").string());
        EXPECT_EQ(r.code, 4) << cmd;
        EXPECT_EQ(r.err.rfind("owf-error checkpoint ", 0), 0u) << r.err;
    }
}

TEST(Cli, GroundTruthDensityMap)
{
    const fs::path d = work_dir() / "map_gt";
    const RunResult r2 = run("density-map --ground-truth --preset ring --resolution 2 --file tiny.mat --out " + d.string());
    ASSERT_EQ(r2.code, 0) << r2.err;
    const DensityMap tiny = read_matrix_file(d / "tiny.mat");
    EXPECT_EQ(tiny.values.rows(), 2);
    EXPECT_EQ(tiny.values.cols(), 2);

    const RunResult r = run("density-map --ground-truth --preset ring --bounds -2.5,2.5,-2,3 --resolution 21 --out " +
                            d.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const DensityMap map = read_matrix_file(d / "density_map.mat");
    ASSERT_EQ(map.values.rows(), 21);
    for (Index row = 0; row < 21; ++row)
        for (Index col = 0; col < 21; ++col) {
            const double x = -2.5 + 5.0 * col / 20.0, y = -2.0 + 5.0 * row / 20.0;
            const double expected = ring_log_density_oracle(x, y);
            EXPECT_NEAR(map.values(row, col), expected, 1e-10 * std::max(1.0, std::abs(expected)));
        }
    EXPECT_EQ(run("density-map --out " + d.string()).code, 2);
}

TEST(Cli, DiscriminatorDensityMapMatchesCheckpoint)
{
    const fs::path ckpt = trained_ring() / "checkpoints" / "final.json";
    const fs::path d = work_dir() / "map_disc";
    const RunResult r = run("density-map --checkpoint " + ckpt.string() + " --resolution 5 --out " + d.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const DensityMap map = read_matrix_file(d / "density_map.mat");
    const Checkpoint ck = load_checkpoint(ckpt);
    for (Index row = 0; row < 5; ++row)
        for (Index col = 0; col < 5; ++col) {
            const Vector p = (Vector(2) << map.x_at(col), map.y_at(row)).finished();
            EXPECT_NEAR(map.values(row, col), ck.state.model.disc.forward(p)(0), 1e-12);
        }
}

TEST(Cli, OverfitHistogram)
{
    const fs::path d = work_dir() / "hist";
    const RunResult r = run("overfit-hist --checkpoint " + (trained_ring() / "checkpoints" / "final.json").string() +
                            " --bins 20 --test-size 300 --out " + d.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("overlap=", 0), 0u);
    const CsvTable train = read_csv(d / "hist_train.csv");
    const CsvTable test = read_csv(d / "hist_test.csv");
    EXPECT_EQ(train.rows.size(), 20u);
    EXPECT_EQ(test.rows.size(), 20u);
    const CsvTable s = read_csv(d / "hist_summary.csv");
    EXPECT_EQ(s.rows[0][s.column("train_count")], "200");
    EXPECT_EQ(s.rows[0][s.column("test_count")], "300");
    const double overlap = parse_double(s.rows[0][s.column("overlap")]);
    EXPECT_GE(overlap, 0.0);
    EXPECT_LE(overlap, 1.0 + 1e-12);
}

TEST(Cli, JacobenchSummaryHasOneRowPerCell)
{
    const fs::path d = work_dir() / "jb";
    const RunResult r = run("jacobench --seed 3 --set jacobench.vector_sizes=[2,3] jacobench.layer_counts=[1,2,4]"
                            " jacobench.nets_per_cell=2 jacobench.steps=3 --out " + d.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const CsvTable s = read_csv(d / "jacobench_summary.csv");
    EXPECT_EQ(s.rows.size(), 6u);
    EXPECT_EQ(read_csv(d / "jacobench.csv").rows.size(), 6u * 2u * 3u);
    for (const auto& row : s.rows) EXPECT_EQ(row[s.column("steps")], "6");
}

TEST(Cli, SampleDataAndGenerate)
{
    const fs::path d = work_dir() / "samples";
    const RunResult s = run("sample-data --preset grid --count 37 --out " + d.string());
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_EQ(read_csv(d / "samples.csv").rows.size(), 37u);
    EXPECT_EQ(run("sample-data --count 0 --out " + d.string()).code, 2);

    const RunResult g = run("generate --checkpoint " + (trained_ring() / "checkpoints" / "final.json").string() +
                            " --count 11 --logdet jvp_one_sample --out " + d.string());
    ASSERT_EQ(g.code, 0) << g.err;
    const CsvTable t = read_csv(d / "generated.csv");
    EXPECT_EQ(t.rows.size(), 11u);
    for (const auto& row : t.rows) EXPECT_TRUE(std::isfinite(parse_double(row[t.column("log_pg")])));
}
