#pragma once

// Evaluation of trained models: high-quality sample fraction and mode
// coverage, partition-function convergence under several proposals,
// discriminator density maps and train/test discriminator histograms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "owf/diffnet.hpp"
#include "owf/errors.hpp"
#include "owf/objectives.hpp"
#include "owf/oneway_flow.hpp"
#include "owf/random.hpp"
#include "owf/synthetic_data.hpp"

namespace owf {

inline constexpr Index kHqSampleCount = 2500;

struct HqReport {
    Index n_samples = 0;
    Index hq_count = 0;
    double hq_fraction = 0.0;
    Index modes_captured = 0;
    std::vector<Index> mode_hits;  // HQ samples whose nearest mode is k
};

/// A sample is high quality when within 3 sigma of its nearest mode; a mode is captured
/// when it is the nearest mode of at least one high-quality sample. Ties go to the lowest index.
inline HqReport hq_and_modes(const GmmSpec& spec, const Matrix& samples)
{
    detail::require(samples.rows() == 2, "hq_and_modes: samples must be 2D");
    detail::require(samples.cols() > 0, "hq_and_modes: need at least one sample");
    const double threshold = 3.0 * spec.sigma;
    HqReport report;
    report.n_samples = samples.cols();
    report.mode_hits.assign(static_cast<std::size_t>(spec.mode_count()), 0);
    for (Index i = 0; i < samples.cols(); ++i) {
        Index nearest = 0;
        double best = (samples.col(i) - spec.means.col(0)).squaredNorm();
        for (Index k = 1; k < spec.mode_count(); ++k) {
            const double d = (samples.col(i) - spec.means.col(k)).squaredNorm();
            if (d < best) {
                best = d;
                nearest = k;
            }
        }
        if (std::sqrt(best) <= threshold) {
            report.hq_count += 1;
            report.mode_hits[static_cast<std::size_t>(nearest)] += 1;
        }
    }
    report.hq_fraction = static_cast<double>(report.hq_count) / static_cast<double>(report.n_samples);
    report.modes_captured = std::count_if(report.mode_hits.begin(), report.mode_hits.end(),
                                          [](Index hits) { return hits > 0; });
    return report;
}

/// HQ report of `count` fresh generator samples.
inline HqReport evaluate_generator(const GmmSpec& spec, const OneWayGenerator& gen, Index count, Rng& rng)
{
    return hq_and_modes(spec, gen.network().forward_batch(gen.sample_inputs(count, rng)));
}

// ---------------------------------------------------------------------------
// Partition-function convergence

enum class ProposalKind { generator, normal, ground_truth };

inline std::string to_string(ProposalKind kind)
{
    switch (kind) {
    case ProposalKind::generator: return "generator";
    case ProposalKind::normal: return "normal";
    case ProposalKind::ground_truth: return "ground_truth";
    }
    return "unknown";
}

inline ProposalKind proposal_from_string(const std::string& name)
{
    if (name == "generator") return ProposalKind::generator;
    if (name == "normal") return ProposalKind::normal;
    if (name == "ground_truth") return ProposalKind::ground_truth;
    throw InvalidInput("unknown proposal '" + name + "'");
}

/// Samples (n x count) and their exact proposal log-densities.
struct ProposalDraw {
    Matrix points;
    Vector log_density;
};

/// A proposal distribution with an exact log-density at its own samples.
struct Proposal {
    std::string tag;
    std::function<ProposalDraw(Index count, Rng& rng)> draw;
};

inline Proposal generator_proposal(const OneWayGenerator& gen)
{
    return {"generator", [&gen](Index count, Rng& rng) {
                const GeneratedBatch batch = gen.generate_batch(count, LogDetMode::exact, rng);
                return ProposalDraw{batch.outputs, batch.log_pg()};
            }};
}

/// N(0, I) in data space.
inline Proposal normal_proposal(Index dim)
{
    return {"normal", [dim](Index count, Rng& rng) {
                Matrix points = standard_normal(rng, dim, count);
                Vector log_density = standard_normal_log_density_cols(points);
                return ProposalDraw{std::move(points), std::move(log_density)};
            }};
}

inline Proposal gmm_proposal(const GmmSpec& spec, std::string tag = "ground_truth")
{
    return {std::move(tag), [spec](Index count, Rng& rng) {
                Matrix points = sample(spec, count, rng);
                Vector log_density = log_density_cols(spec, points);
                return ProposalDraw{std::move(points), std::move(log_density)};
            }};
}

struct ZetaPoint {
    Index sample_count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation over repetitions
    std::vector<double> values;
};

struct ZetaCurve {
    std::string proposal_tag;
    std::vector<ZetaPoint> points;
};

inline constexpr Index kZetaRepetitions = 10;

/// Repeated log zeta estimates of `disc_values(points)` with each proposal at each sample count.
template <typename DiscFn>
std::vector<ZetaCurve> zeta_convergence_fn(DiscFn&& disc_values, double w, const std::vector<Proposal>& proposals,
                                           const std::vector<Index>& sample_counts, Index repetitions, Rng& rng)
{
    detail::require(!sample_counts.empty(), "zeta_convergence: need at least one sample count");
    detail::require(repetitions >= 1, "zeta_convergence: repetitions must be >= 1");
    for (std::size_t i = 0; i < sample_counts.size(); ++i) {
        detail::require(sample_counts[i] >= 1, "zeta_convergence: sample counts must be >= 1");
        if (i > 0) detail::require(sample_counts[i] > sample_counts[i - 1], "zeta_convergence: counts must increase");
    }
    std::vector<ZetaCurve> curves;
    for (const auto& proposal : proposals) {
        ZetaCurve curve;
        curve.proposal_tag = proposal.tag;
        for (Index count : sample_counts) {
            ZetaPoint point;
            point.sample_count = count;
            for (Index rep = 0; rep < repetitions; ++rep) {
                const ProposalDraw draw = proposal.draw(count, rng);
                point.values.push_back(log_zeta(Vector(disc_values(draw.points)), draw.log_density, w).log_zeta);
            }
            const Eigen::Map<const Vector> values(point.values.data(), static_cast<Index>(point.values.size()));
            point.mean = values.mean();
            point.stddev = std::sqrt((values.array() - point.mean).square().mean());
            curve.points.push_back(std::move(point));
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

inline std::vector<ZetaCurve> zeta_convergence(const MlpNetwork& disc, double w,
                                               const std::vector<Proposal>& proposals,
                                               const std::vector<Index>& sample_counts, Rng& rng,
                                               Index repetitions = kZetaRepetitions)
{
    auto values = [&disc](const Matrix& points) { return Vector(disc.forward_batch(points).row(0).transpose()); };
    return zeta_convergence_fn(values, w, proposals, sample_counts, repetitions, rng);
}

// ---------------------------------------------------------------------------
// Density maps

struct DensityMap {
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    Index resolution = 0;
    Matrix values;  // values(row, col): row indexes y (ascending), col indexes x (ascending)

    double x_at(Index col) const { return axis(x_min, x_max, col); }
    double y_at(Index row) const { return axis(y_min, y_max, row); }

private:
    double axis(double lo, double hi, Index i) const
    {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
};

/// Evaluates a scalar field on a resolution x resolution lattice including the bounds.
template <typename Field>
DensityMap density_map_fn(Field&& field, double x_min, double x_max, double y_min, double y_max, Index resolution)
{
    detail::require(resolution >= 2, "density_map: resolution must be >= 2");
    detail::require(x_max > x_min && y_max > y_min, "density_map: bounds must be increasing");
    DensityMap map;
    map.x_min = x_min;
    map.x_max = x_max;
    map.y_min = y_min;
    map.y_max = y_max;
    map.resolution = resolution;
    Matrix lattice(2, resolution * resolution);
    for (Index row = 0; row < resolution; ++row)
        for (Index col = 0; col < resolution; ++col) lattice.col(row * resolution + col) << map.x_at(col), map.y_at(row);
    const Vector flat = field(lattice);
    map.values.resize(resolution, resolution);
    for (Index row = 0; row < resolution; ++row)
        for (Index col = 0; col < resolution; ++col) map.values(row, col) = flat(row * resolution + col);
    detail::require(map.values.allFinite(), "density_map: field produced non-finite values");
    return map;
}

/// D evaluated on the lattice, unnormalized log-space.
inline DensityMap density_map(const MlpNetwork& disc, double x_min, double x_max, double y_min, double y_max,
                              Index resolution)
{
    return density_map_fn(
        [&disc](const Matrix& points) { return Vector(disc.forward_batch(points).row(0).transpose()); }, x_min,
        x_max, y_min, y_max, resolution);
}

/// Ground-truth log-density on the lattice (oracle path).
inline DensityMap density_map(const GmmSpec& spec, double x_min, double x_max, double y_min, double y_max,
                              Index resolution)
{
    return density_map_fn([&spec](const Matrix& points) { return log_density_cols(spec, points); }, x_min, x_max,
                          y_min, y_max, resolution);
}

/// True when map cell (row, col) is >= every cell in its 8-neighborhood.
inline bool is_local_max(const DensityMap& map, Index row, Index col)
{
    const double center = map.values(row, col);
    for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const Index r = row + dr;
            const Index c = col + dc;
            if (r < 0 || c < 0 || r >= map.resolution || c >= map.resolution) continue;
            if (map.values(r, c) > center) return false;
        }
    return true;
}

/// Lattice cell nearest to a point.
inline std::pair<Index, Index> nearest_cell(const DensityMap& map, double x, double y)
{
    auto index = [&](double v, double lo, double hi) {
        const double t = (v - lo) / (hi - lo) * static_cast<double>(map.resolution - 1);
        return std::clamp<Index>(static_cast<Index>(std::lround(t)), 0, map.resolution - 1);
    };
    return {index(y, map.y_min, map.y_max), index(x, map.x_min, map.x_max)};
}

// ---------------------------------------------------------------------------
// Overfit histograms

inline constexpr Index kDefaultHistogramBins = 100;

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<Index> counts;
    Index total = 0;

    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
    double probability(std::size_t bin) const
    {
        return static_cast<double>(counts[bin]) / static_cast<double>(total);
    }
};

struct OverfitReport {
    Histogram train;
    Histogram test;
    double overlap = 0.0;  // sum over bins of min(p_train, p_test)
};

/// Shared equal-width binning over the pooled min/max of both value sets.
inline OverfitReport overfit_histogram_values(const Vector& train_values, const Vector& test_values, Index bins)
{
    detail::require(train_values.size() > 0 && test_values.size() > 0, "overfit_histogram: sets must be nonempty");
    detail::require(bins >= 1, "overfit_histogram: bins must be >= 1");
    const double lo = std::min(train_values.minCoeff(), test_values.minCoeff());
    double hi = std::max(train_values.maxCoeff(), test_values.maxCoeff());
    if (!(hi > lo)) hi = lo + 1.0;
    auto fill = [&](const Vector& values) {
        Histogram h;
        h.lo = lo;
        h.hi = hi;
        h.counts.assign(static_cast<std::size_t>(bins), 0);
        h.total = values.size();
        for (Index i = 0; i < values.size(); ++i) {
            auto bin = static_cast<Index>((values(i) - lo) / (hi - lo) * static_cast<double>(bins));
            bin = std::clamp<Index>(bin, 0, bins - 1);
            h.counts[static_cast<std::size_t>(bin)] += 1;
        }
        return h;
    };
    OverfitReport report;
    report.train = fill(train_values);
    report.test = fill(test_values);
    for (std::size_t b = 0; b < report.train.counts.size(); ++b)
        report.overlap += std::min(report.train.probability(b), report.test.probability(b));
    return report;
}

inline OverfitReport overfit_histogram(const MlpNetwork& disc, const Matrix& train_set, const Matrix& test_set,
                                       Index bins = kDefaultHistogramBins)
{
    detail::require(train_set.cols() > 0 && test_set.cols() > 0, "overfit_histogram: sets must be nonempty");
    return overfit_histogram_values(disc.forward_batch(train_set).row(0).transpose(),
                                    disc.forward_batch(test_set).row(0).transpose(), bins);
}

}  // namespace owf
