// owf: train and evaluate one-way flow models on 2D mixtures, run the log-det
// benchmark, and export every result as CSV or matrix text.
//
// Exit codes: 0 ok, 1 unexpected, 2 usage or config, 3 file I/O, 4 checkpoint,
// 5 training pathology, 6 invalid input. On failure one line
//   owf-error <code-name> <message>
// is written to stderr.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "owf/checkpoint.hpp"
#include "owf/config.hpp"
#include "owf/errors.hpp"
#include "owf/jacobench.hpp"
#include "owf/metrics.hpp"
#include "owf/outputs.hpp"
#include "owf/random.hpp"
#include "owf/synthetic_data.hpp"
#include "owf/trainer.hpp"

namespace fs = std::filesystem;
using namespace owf;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kUsage = 2,
    kIo = 3,
    kCheckpoint = 4,
    kPathology = 5,
    kInvalid = 6,
};

// Evaluation streams, disjoint from the training streams {0}, {1}, {2}.
constexpr std::uint64_t kHqStream = 10;
constexpr std::uint64_t kZetaStream = 11;
constexpr std::uint64_t kTestSetStream = 12;
constexpr std::uint64_t kGenerateStream = 13;
constexpr std::uint64_t kSampleStream = 14;

int report_error(ExitCode code, const char* name, const std::string& message)
{
    std::string flat = message;
    for (char& c : flat)
        if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "owf-error " << name << ' ' << flat << std::endl;
    return code;
}

struct ConfigArgs {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<int> threads;

    void attach(CLI::App* cmd, bool with_config = true)
    {
        if (with_config) {
            cmd->add_option("--config", config_path, "JSON run configuration");
            cmd->add_option("--preset", preset, "ring or grid");
        }
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--set", overrides, "override a config field, e.g. train.steps=500")->take_all();
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--threads", threads, "worker threads (1 = reproducible sequential mode)");
    }

    void apply(json& doc) const
    {
        if (!preset.empty()) doc["preset"] = preset;
        if (seed) doc["seed"] = *seed;
        if (!out.empty()) doc["output_dir"] = out;
        if (threads) doc["threads"] = *threads;
        for (const auto& assignment : overrides) apply_override(doc, assignment);
    }

    RunConfig resolve() const
    {
        json doc = config_path.empty() ? json::object() : read_json_file(config_path);
        apply(doc);
        return config_from_json(doc);
    }

    /// Config stored in a checkpoint, with command-line overrides on top.
    RunConfig resolve_from(const RunConfig& stored) const
    {
        json doc = to_json(stored);
        apply(doc);
        return config_from_json(doc);
    }
};

fs::path prepare_dir(const std::string& dir)
{
    fs::path path(dir);
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec || !fs::is_directory(path)) throw IoError("cannot create output directory '" + dir + "'");
    return path;
}

std::vector<Index> parse_index_list(const std::string& text, const char* flag)
{
    std::vector<Index> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<Index>(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": expected a comma-separated list of integers");
        }
    }
    if (out.empty()) throw ConfigError(std::string(flag) + ": expected a comma-separated list of integers");
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const char* flag)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(parse_double(item));
        } catch (const InvalidInput&) {
            throw ConfigError(std::string(flag) + ": expected a comma-separated list of numbers");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    ConfigArgs cfg;
    std::string resume;
};

int cmd_train(const TrainArgs& args)
{
    std::optional<Checkpoint> resumed;
    if (!args.resume.empty()) resumed = load_checkpoint(args.resume);
    const RunConfig cfg = resumed ? args.cfg.resolve_from(resumed->config) : args.cfg.resolve();
    const fs::path out = prepare_dir(cfg.output_dir);
    const fs::path ckpt_dir = prepare_dir((out / "checkpoints").string());
    write_json_file(out / "config.json", to_json(cfg));

    const TrainConfig train_cfg = cfg.train_config();
    const GmmSpec data = cfg.data.spec();
    TrainState state = resumed ? resumed->state : initial_state(cfg.model, cfg.seed);

    TraceWriter trace(out / "trace.csv");
    TrainHooks hooks;
    hooks.on_iteration = [&trace](const TraceRecord& r) { trace.write(r); };
    hooks.checkpoint = [&](const TrainState& s, const std::string& tag) {
        save_checkpoint(ckpt_dir / (tag + ".json"), cfg, s);
    };
    const TrainResult result = train(train_cfg, data, std::move(state), hooks);

    Rng eval_rng = make_substream(cfg.seed, {kHqStream});
    const HqReport report = evaluate_generator(data, result.state.model.gen, cfg.metrics.hq_samples, eval_rng);
    write_summary(out / "summary.csv", cfg.preset, cfg.seed, result.state.iteration, report);
    write_mode_hits(out / "mode_hits.csv", data, report);
    std::cout << "iterations=" << result.state.iteration << " hq_fraction=" << format_double(report.hq_fraction)
              << " modes_captured=" << report.modes_captured << '/' << data.mode_count() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct CheckpointArgs {
    ConfigArgs cfg;
    std::string checkpoint;
};

struct ZetaArgs {
    CheckpointArgs base;
    std::string proposals = "generator,normal,ground_truth";
    std::string counts;
    std::optional<Index> repetitions;
};

int cmd_eval_zeta(const ZetaArgs& args)
{
    const Checkpoint ck = load_checkpoint(args.base.checkpoint);
    const RunConfig cfg = args.base.cfg.resolve_from(ck.config);
    const std::vector<Index> counts =
        args.counts.empty() ? cfg.metrics.zeta_counts : parse_index_list(args.counts, "--counts");
    const Index reps = args.repetitions.value_or(cfg.metrics.zeta_repetitions);
    if (reps < 1) throw ConfigError("--repetitions: must be >= 1");

    const GmmSpec data = cfg.data.spec();
    std::vector<Proposal> proposals;
    std::stringstream ss(args.proposals);
    std::string tag;
    while (std::getline(ss, tag, ',')) {
        ProposalKind kind;
        try {
            kind = proposal_from_string(tag);
        } catch (const InvalidInput& e) {
            throw ConfigError(std::string("--proposals: ") + e.what());
        }
        switch (kind) {
        case ProposalKind::generator: proposals.push_back(generator_proposal(ck.state.model.gen)); break;
        case ProposalKind::normal: proposals.push_back(normal_proposal(2)); break;
        case ProposalKind::ground_truth: proposals.push_back(gmm_proposal(data)); break;
        }
    }
    if (proposals.empty()) throw ConfigError("--proposals: need at least one proposal");

    const fs::path out = prepare_dir(cfg.output_dir);
    Rng rng = make_substream(cfg.seed, {kZetaStream});
    const auto curves =
        zeta_convergence(ck.state.model.disc, cfg.train.objective.w, proposals, counts, rng, reps);
    for (const auto& curve : curves) write_zeta_curve(out / ("zeta_" + curve.proposal_tag + ".csv"), curve);
    return kOk;
}

struct MapArgs {
    CheckpointArgs base;
    bool ground_truth = false;
    std::string bounds;
    std::optional<Index> resolution;
    std::string file = "density_map.mat";
};

int cmd_density_map(const MapArgs& args)
{
    if (args.ground_truth == !args.base.checkpoint.empty())
        throw ConfigError("density-map: pass exactly one of --checkpoint or --ground-truth");
    std::optional<Checkpoint> ck;
    if (!args.base.checkpoint.empty()) ck = load_checkpoint(args.base.checkpoint);
    const RunConfig cfg = ck ? args.base.cfg.resolve_from(ck->config) : args.base.cfg.resolve();
    const std::vector<double> b = args.bounds.empty() ? cfg.metrics.map_bounds : parse_double_list(args.bounds, "--bounds");
    if (b.size() != 4 || !(b[1] > b[0]) || !(b[3] > b[2]))
        throw ConfigError("--bounds: expected x_min,x_max,y_min,y_max with increasing pairs");
    const Index resolution = args.resolution.value_or(cfg.metrics.map_resolution);
    if (resolution < 2) throw ConfigError("--resolution: must be >= 2");

    const DensityMap map = ck ? density_map(ck->state.model.disc, b[0], b[1], b[2], b[3], resolution)
                              : density_map(cfg.data.spec(), b[0], b[1], b[2], b[3], resolution);
    const fs::path out = prepare_dir(cfg.output_dir);
    write_matrix_file(out / args.file, map);
    return kOk;
}

struct HistArgs {
    CheckpointArgs base;
    std::optional<Index> bins;
    std::optional<Index> test_size;
};

int cmd_overfit_hist(const HistArgs& args)
{
    const Checkpoint ck = load_checkpoint(args.base.checkpoint);
    const RunConfig cfg = args.base.cfg.resolve_from(ck.config);
    const Index bins = args.bins.value_or(cfg.metrics.hist_bins);
    const Index test_size = args.test_size.value_or(cfg.data.test_set_size);
    if (bins < 1) throw ConfigError("--bins: must be >= 1");
    if (test_size < 1) throw ConfigError("--test-size: must be >= 1");

    const GmmSpec data = cfg.data.spec();
    const Matrix train_set = training_set(cfg.train_config(), data);
    if (train_set.cols() == 0)
        throw ConfigError("train.train_set_size: the run drew fresh batches, so there is no fixed training set");
    Rng rng = make_substream(cfg.seed, {kTestSetStream});
    const Matrix test_set = sample(data, test_size, rng);
    const OverfitReport report = overfit_histogram(ck.state.model.disc, train_set, test_set, bins);

    const fs::path out = prepare_dir(cfg.output_dir);
    write_histogram(out / "hist_train.csv", report.train);
    write_histogram(out / "hist_test.csv", report.test);
    write_overfit_summary(out / "hist_summary.csv", report);
    std::cout << "overlap=" << format_double(report.overlap) << '\n';
    return kOk;
}

int cmd_jacobench(const ConfigArgs& args)
{
    const RunConfig cfg = args.resolve();
    const fs::path out = prepare_dir(cfg.output_dir);
    const SuccessReport report = run_jacobench(cfg.jacobench, cfg.seed, cfg.threads);
    write_jacobench(out / "jacobench.csv", out / "jacobench_summary.csv", report);
    for (const auto& cell : report.cells)
        std::cout << "size=" << cell.size << " depth=" << cell.depth
                  << " success_rate=" << format_double(cell.success_rate) << '\n';
    return kOk;
}

struct SampleArgs {
    ConfigArgs cfg;
    Index count = 1000;
};

int cmd_sample_data(const SampleArgs& args)
{
    const RunConfig cfg = args.cfg.resolve();
    if (args.count < 1) throw ConfigError("--count: must be >= 1");
    Rng rng = make_substream(cfg.seed, {kSampleStream});
    const Matrix points = sample(cfg.data.spec(), args.count, rng);
    const fs::path out = prepare_dir(cfg.output_dir);
    write_points(out / "samples.csv", points);
    return kOk;
}

struct GenerateArgs {
    CheckpointArgs base;
    Index count = 1000;
    std::string logdet = "exact";
};

int cmd_generate(const GenerateArgs& args)
{
    const Checkpoint ck = load_checkpoint(args.base.checkpoint);
    const RunConfig cfg = args.base.cfg.resolve_from(ck.config);
    if (args.count < 1) throw ConfigError("--count: must be >= 1");
    if (args.logdet != "exact" && args.logdet != "jvp_one_sample")
        throw ConfigError("--logdet: expected 'exact' or 'jvp_one_sample'");
    Rng rng = make_substream(cfg.seed, {kGenerateStream});
    const GeneratedBatch batch =
        ck.state.model.gen.generate_batch(args.count, logdet_mode_from_string(args.logdet), rng);
    const fs::path out = prepare_dir(cfg.output_dir);
    write_generated(out / "generated.csv", batch);
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"one-way flow energy models on 2D mixtures"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model and write trace, checkpoints and summary");
    train_args.cfg.attach(train_cmd);
    train_cmd->add_option("--resume", train_args.resume, "continue from a checkpoint file");

    ZetaArgs zeta_args;
    auto* zeta_cmd = app.add_subcommand("eval-zeta", "log partition estimates vs. sample count per proposal");
    zeta_cmd->add_option("--checkpoint", zeta_args.base.checkpoint, "checkpoint file")->required();
    zeta_args.base.cfg.attach(zeta_cmd, false);
    zeta_cmd->add_option("--proposals", zeta_args.proposals, "comma list of generator,normal,ground_truth");
    zeta_cmd->add_option("--counts", zeta_args.counts, "comma list of increasing sample counts");
    zeta_cmd->add_option("--repetitions", zeta_args.repetitions, "estimates per sample count");

    MapArgs map_args;
    auto* map_cmd = app.add_subcommand("density-map", "discriminator or ground-truth log density on a lattice");
    map_cmd->add_option("--checkpoint", map_args.base.checkpoint, "checkpoint file");
    map_cmd->add_flag("--ground-truth", map_args.ground_truth, "evaluate the mixture log density instead");
    map_args.base.cfg.attach(map_cmd);
    map_cmd->add_option("--bounds", map_args.bounds, "x_min,x_max,y_min,y_max");
    map_cmd->add_option("--resolution", map_args.resolution, "lattice points per axis");
    map_cmd->add_option("--file", map_args.file, "output file name inside the output directory");

    HistArgs hist_args;
    auto* hist_cmd = app.add_subcommand("overfit-hist", "histograms of D on the training set and a fresh test set");
    hist_cmd->add_option("--checkpoint", hist_args.base.checkpoint, "checkpoint file")->required();
    hist_args.base.cfg.attach(hist_cmd, false);
    hist_cmd->add_option("--bins", hist_args.bins, "histogram bins");
    hist_cmd->add_option("--test-size", hist_args.test_size, "fresh test samples");

    ConfigArgs jb_args;
    auto* jb_cmd = app.add_subcommand("jacobench", "maximize the one-sample log-det estimate on random networks");
    jb_args.attach(jb_cmd);

    SampleArgs sample_args;
    auto* sample_cmd = app.add_subcommand("sample-data", "draw points from the configured mixture");
    sample_args.cfg.attach(sample_cmd);
    sample_cmd->add_option("--count", sample_args.count, "number of points");

    GenerateArgs gen_args;
    auto* gen_cmd = app.add_subcommand("generate", "draw generator samples with their log densities");
    gen_cmd->add_option("--checkpoint", gen_args.base.checkpoint, "checkpoint file")->required();
    gen_args.base.cfg.attach(gen_cmd, false);
    gen_cmd->add_option("--count", gen_args.count, "number of samples");
    gen_cmd->add_option("--logdet", gen_args.logdet, "exact or jvp_one_sample");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(kUsage, "usage", e.what());
    }

    try {
        if (*train_cmd) return cmd_train(train_args);
        if (*zeta_cmd) return cmd_eval_zeta(zeta_args);
        if (*map_cmd) return cmd_density_map(map_args);
        if (*hist_cmd) return cmd_overfit_hist(hist_args);
        if (*jb_cmd) return cmd_jacobench(jb_args);
        if (*sample_cmd) return cmd_sample_data(sample_args);
        if (*gen_cmd) return cmd_generate(gen_args);
    } catch (const ConfigError& e) {
        return report_error(kUsage, "config", e.what());
    } catch (const IoError& e) {
        return report_error(kIo, "io", e.what());
    } catch (const CheckpointError& e) {
        return report_error(kCheckpoint, "checkpoint", e.what());
    } catch (const SingularJacobian& e) {
        return report_error(kPathology, "singular-jacobian", e.what());
    } catch (const TrainingPathology& e) {
        return report_error(kPathology, "training-pathology", e.what());
    } catch (const InvalidInput& e) {
        return report_error(kInvalid, "invalid-input", e.what());
    } catch (const std::exception& e) {
        return report_error(kUnexpected, "unexpected", e.what());
    }
    return report_error(kUsage, "usage", "no subcommand");
}
