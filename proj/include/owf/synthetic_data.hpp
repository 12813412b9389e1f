#pragma once

// Ground-truth 2D Gaussian mixtures: uniform weights, shared isotropic sigma.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "owf/errors.hpp"
#include "owf/linalg.hpp"
#include "owf/random.hpp"

namespace owf {

struct GmmSpec {
    Eigen::Matrix2Xd means;  // one column per mode
    double sigma = 0.05;
    std::string name;

    Eigen::Index mode_count() const { return means.cols(); }
    double weight() const { return 1.0 / static_cast<double>(mode_count()); }

    void validate() const
    {
        if (means.cols() < 1) throw ConfigError("data: a mixture needs at least one mode");
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("data.sigma: must be a positive finite number");
        if (!means.allFinite()) throw ConfigError("data: mode means must be finite");
    }
};

inline constexpr double kDefaultRingRadius = 2.0;
inline constexpr double kDefaultGridSpacing = 2.0;
inline constexpr double kDefaultMixtureSigma = 0.05;

/// 8 modes at angles 2 pi k / 8 on a circle of the given radius.
inline GmmSpec make_ring(double radius = kDefaultRingRadius, double sigma = kDefaultMixtureSigma, int modes = 8)
{
    GmmSpec spec;
    spec.name = "ring";
    spec.sigma = sigma;
    spec.means.resize(2, modes);
    for (int k = 0; k < modes; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / modes;
        spec.means.col(k) << radius * std::cos(angle), radius * std::sin(angle);
    }
    spec.validate();
    return spec;
}

/// 25 modes on the lattice {-2s, -s, 0, s, 2s}^2.
inline GmmSpec make_grid(double spacing = kDefaultGridSpacing, double sigma = kDefaultMixtureSigma)
{
    GmmSpec spec;
    spec.name = "grid";
    spec.sigma = sigma;
    spec.means.resize(2, 25);
    int k = 0;
    for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) spec.means.col(k++) << i * spacing, j * spacing;
    spec.validate();
    return spec;
}

/// `count` points (2 x count): a uniformly chosen mode plus N(0, sigma^2 I) noise.
inline Eigen::MatrixXd sample(const GmmSpec& spec, Eigen::Index count, Rng& rng)
{
    detail::require(count >= 1, "sample: count must be >= 1");
    std::uniform_int_distribution<Eigen::Index> pick(0, spec.mode_count() - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::MatrixXd points(2, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        const Eigen::Index k = pick(rng);
        const double dx = noise(rng);
        const double dy = noise(rng);
        points(0, i) = spec.means(0, k) + spec.sigma * dx;
        points(1, i) = spec.means(1, k) + spec.sigma * dy;
    }
    return points;
}

inline double log_density(const GmmSpec& spec, const Eigen::Vector2d& x)
{
    const double var = spec.sigma * spec.sigma;
    const double log_norm = std::log(spec.weight()) - std::log(2.0 * std::numbers::pi * var);
    Eigen::VectorXd terms(spec.mode_count());
    for (Eigen::Index k = 0; k < spec.mode_count(); ++k)
        terms(k) = log_norm - 0.5 * (x - spec.means.col(k)).squaredNorm() / var;
    return logsumexp(terms);
}

inline Eigen::VectorXd log_density_cols(const GmmSpec& spec, const Eigen::MatrixXd& points)
{
    detail::require(points.rows() == 2, "log_density: points must be 2D");
    Eigen::VectorXd out(points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i) out(i) = log_density(spec, points.col(i));
    return out;
}

/// Largest |coordinate| over all means plus 3 sigma.
inline double extent(const GmmSpec& spec)
{
    return spec.means.cwiseAbs().maxCoeff() + 3.0 * spec.sigma;
}

}  // namespace owf
