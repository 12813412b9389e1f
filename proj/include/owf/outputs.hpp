#pragma once

// File schemas shared by the command-line tool and its consumers.
//
//   trace.csv              iteration,disc_loss,gen_loss,entropy,log_zeta,wall_clock,disc_grad_norm,gen_grad_norm,min_log_abs_det
//   summary.csv            preset,seed,iterations,n_samples,hq_count,hq_fraction,modes_captured
//   mode_hits.csv          mode,x,y,hits
//   zeta_<proposal>.csv    proposal,sample_count,repetitions,mean,stddev
//   density_map.mat        text matrix, see write_matrix_file
//   hist_train.csv / hist_test.csv   bin,lo,hi,count,probability
//   hist_summary.csv       bins,train_count,test_count,overlap
//   jacobench.csv          size,depth,net_id,step,delta
//   jacobench_summary.csv  size,depth,steps,successes,success_rate
//   samples.csv            x,y                                       (mixture samples)
//   generated.csv          u0..u{n-1},x,y,log_pz_pr,log_abs_det,log_pg (generator samples)
//
// Every floating-point cell is the shortest decimal that round-trips.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "owf/csv.hpp"
#include "owf/errors.hpp"
#include "owf/jacobench.hpp"
#include "owf/metrics.hpp"
#include "owf/oneway_flow.hpp"
#include "owf/synthetic_data.hpp"
#include "owf/trainer.hpp"

namespace owf {

inline const std::vector<std::string>& trace_header()
{
    static const std::vector<std::string> header{"iteration",      "disc_loss",     "gen_loss",
                                                 "entropy",        "log_zeta",      "wall_clock",
                                                 "disc_grad_norm", "gen_grad_norm", "min_log_abs_det"};
    return header;
}

/// Streams trace rows as training runs.
class TraceWriter {
public:
    explicit TraceWriter(const std::filesystem::path& path) : csv_(path, trace_header()) {}

    void write(const TraceRecord& r)
    {
        csv_.row(r.iteration, r.disc_loss, r.gen_loss, r.entropy, r.log_zeta, r.wall_clock, r.disc_grad_norm,
                 r.gen_grad_norm, r.min_log_abs_det);
    }

private:
    CsvWriter csv_;
};

inline void write_summary(const std::filesystem::path& path, const std::string& preset, std::uint64_t seed,
                          Index iterations, const HqReport& report)
{
    CsvWriter csv(path, {"preset", "seed", "iterations", "n_samples", "hq_count", "hq_fraction", "modes_captured"});
    csv.row(preset, seed, iterations, report.n_samples, report.hq_count, report.hq_fraction, report.modes_captured);
}

inline void write_mode_hits(const std::filesystem::path& path, const GmmSpec& spec, const HqReport& report)
{
    CsvWriter csv(path, {"mode", "x", "y", "hits"});
    for (Index k = 0; k < spec.mode_count(); ++k)
        csv.row(k, spec.means(0, k), spec.means(1, k), report.mode_hits[static_cast<std::size_t>(k)]);
}

inline void write_zeta_curve(const std::filesystem::path& path, const ZetaCurve& curve)
{
    CsvWriter csv(path, {"proposal", "sample_count", "repetitions", "mean", "stddev"});
    for (const auto& p : curve.points)
        csv.row(curve.proposal_tag, p.sample_count, static_cast<Index>(p.values.size()), p.mean, p.stddev);
}

/// Dense matrix text format:
///   owf-matrix 1
///   rows <R> cols <C>
///   bounds <x_min> <x_max> <y_min> <y_max>
///   R lines of C space-separated values; row r is y_at(r), column c is x_at(c), both ascending.
inline void write_matrix_file(const std::filesystem::path& path, const DensityMap& map)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "owf-matrix 1\n";
    out << "rows " << map.values.rows() << " cols " << map.values.cols() << '\n';
    out << "bounds " << format_double(map.x_min) << ' ' << format_double(map.x_max) << ' ' << format_double(map.y_min)
        << ' ' << format_double(map.y_max) << '\n';
    for (Index r = 0; r < map.values.rows(); ++r) {
        for (Index c = 0; c < map.values.cols(); ++c) {
            if (c > 0) out << ' ';
            out << format_double(map.values(r, c));
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline DensityMap read_matrix_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    auto fail = [&](const std::string& what) { return InvalidInput(path.string() + ": " + what); };
    std::string magic, rows_kw, cols_kw, bounds_kw;
    int version = 0;
    Index rows = 0, cols = 0;
    std::string xmin, xmax, ymin, ymax;
    if (!(in >> magic >> version) || magic != "owf-matrix" || version != 1) throw fail("not an owf-matrix v1 file");
    if (!(in >> rows_kw >> rows >> cols_kw >> cols) || rows_kw != "rows" || cols_kw != "cols" || rows < 1 || cols < 1)
        throw fail("bad dimension line");
    if (!(in >> bounds_kw >> xmin >> xmax >> ymin >> ymax) || bounds_kw != "bounds") throw fail("bad bounds line");
    DensityMap map;
    map.x_min = parse_double(xmin);
    map.x_max = parse_double(xmax);
    map.y_min = parse_double(ymin);
    map.y_max = parse_double(ymax);
    map.resolution = cols;
    map.values.resize(rows, cols);
    std::string cell;
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) {
            if (!(in >> cell)) throw fail("truncated matrix body");
            map.values(r, c) = parse_double(cell);
        }
    if (in >> cell) throw fail("trailing data after matrix body");
    return map;
}

inline void write_histogram(const std::filesystem::path& path, const Histogram& h)
{
    CsvWriter csv(path, {"bin", "lo", "hi", "count", "probability"});
    const double width = h.bin_width();
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        const double lo = h.lo + width * static_cast<double>(b);
        const double hi = b + 1 == h.counts.size() ? h.hi : h.lo + width * static_cast<double>(b + 1);
        csv.row(static_cast<Index>(b), lo, hi, h.counts[b], h.probability(b));
    }
}

inline void write_overfit_summary(const std::filesystem::path& path, const OverfitReport& report)
{
    CsvWriter csv(path, {"bins", "train_count", "test_count", "overlap"});
    csv.row(static_cast<Index>(report.train.counts.size()), report.train.total, report.test.total, report.overlap);
}

inline void write_jacobench(const std::filesystem::path& deltas_path, const std::filesystem::path& summary_path,
                            const SuccessReport& report)
{
    CsvWriter deltas(deltas_path, {"size", "depth", "net_id", "step", "delta"});
    CsvWriter summary(summary_path, {"size", "depth", "steps", "successes", "success_rate"});
    for (const auto& cell : report.cells) {
        Index hits = 0;
        for (const auto& d : cell.deltas) {
            deltas.row(cell.size, cell.depth, d.net_id, d.step, d.delta);
            hits += d.success ? 1 : 0;
        }
        summary.row(cell.size, cell.depth, static_cast<Index>(cell.deltas.size()), hits, cell.success_rate);
    }
}

inline void write_points(const std::filesystem::path& path, const Matrix& points)
{
    detail::require(points.rows() == 2, "write_points: points must be 2D");
    CsvWriter csv(path, {"x", "y"});
    for (Index i = 0; i < points.cols(); ++i) csv.row(points(0, i), points(1, i));
}

inline void write_generated(const std::filesystem::path& path, const GeneratedBatch& batch)
{
    detail::require(batch.outputs.rows() == 2, "write_generated: outputs must be 2D");
    std::vector<std::string> header;
    for (Index d = 0; d < batch.inputs.rows(); ++d) header.push_back("u" + std::to_string(d));
    for (const char* name : {"x", "y", "log_pz_pr", "log_abs_det", "log_pg"}) header.emplace_back(name);
    CsvWriter csv(path, header);
    const Vector log_pg = batch.log_pg();
    for (Index i = 0; i < batch.size(); ++i) {
        std::vector<std::string> cells;
        for (Index d = 0; d < batch.inputs.rows(); ++d) cells.push_back(format_double(batch.inputs(d, i)));
        for (double v : {batch.outputs(0, i), batch.outputs(1, i), batch.log_pz_pr(i), batch.log_abs_det(i), log_pg(i)})
            cells.push_back(format_double(v));
        csv.write_row(cells);
    }
}

}  // namespace owf
