#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "owf/errors.hpp"

namespace owf {

using Rng = std::mt19937_64;

/// Derives an independent generator from a base seed and a list of stream coordinates
/// (e.g. {size, depth, net_id}). The result does not depend on evaluation order.
inline Rng make_substream(std::uint64_t seed, std::initializer_list<std::uint64_t> coords = {})
{
    std::seed_seq::result_type words[16];
    std::size_t count = 0;
    words[count++] = static_cast<std::uint32_t>(seed);
    words[count++] = static_cast<std::uint32_t>(seed >> 32);
    for (auto c : coords) {
        if (count + 2 > 16) break;
        words[count++] = static_cast<std::uint32_t>(c);
        words[count++] = static_cast<std::uint32_t>(c >> 32);
    }
    std::seed_seq seq(words, words + count);
    return Rng(seq);
}

inline double standard_normal(Rng& rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
    return v;
}

inline Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

inline double uniform01(Rng& rng)
{
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

/// Uniform direction on S^{n-1}: a normalized Gaussian draw (redrawn on the zero vector).
inline Eigen::VectorXd uniform_on_sphere(Rng& rng, Eigen::Index n)
{
    for (;;) {
        Eigen::VectorXd v = standard_normal(rng, n);
        const double norm = v.norm();
        if (norm > 0.0) return v / norm;
    }
}

inline std::string serialize_rng(const Rng& rng)
{
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng deserialize_rng(const std::string& state)
{
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw InvalidInput("malformed random engine state");
    return rng;
}

}  // namespace owf
