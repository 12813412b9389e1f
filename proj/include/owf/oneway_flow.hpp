#pragma once

// One-way flow generator G = g_n o g_u.
//
// g_u appends standard-normal noise r (dimension n - d) to the latent z, so the
// density of the concatenated vector is P(z) P(r). g_n is a square network
// R^n -> R^n whose Jacobian determinant is evaluated only at generated points.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "owf/diffnet.hpp"
#include "owf/linalg.hpp"
#include "owf/random.hpp"

namespace owf {

enum class LogDetMode { exact, jvp_one_sample };

inline std::string to_string(LogDetMode mode)
{
    return mode == LogDetMode::exact ? "exact" : "jvp_one_sample";
}

inline LogDetMode logdet_mode_from_string(const std::string& name)
{
    if (name == "exact") return LogDetMode::exact;
    if (name == "jvp_one_sample" || name == "jvp") return LogDetMode::jvp_one_sample;
    throw InvalidInput("unknown log-det mode '" + name + "'");
}

struct LogDensityRecord {
    double log_pz_pr = 0.0;
    double log_abs_det = 0.0;
    LogDetMode method = LogDetMode::exact;
    double log_pg = 0.0;

    static LogDensityRecord make(double log_pz_pr, double log_abs_det, LogDetMode method)
    {
        return {log_pz_pr, log_abs_det, method, log_pz_pr - log_abs_det};
    }
};

struct LatentDraw {
    Vector z;
    Vector r;
};

struct GeneratedSample {
    Vector z;
    Vector r;
    Vector y;
    LogDensityRecord log_density;
};

/// Column-wise batch of generated samples. `inputs` holds concat(z, r) per column.
struct GeneratedBatch {
    Matrix inputs;
    Matrix outputs;
    Vector log_pz_pr;
    Vector log_abs_det;
    LogDetMode method = LogDetMode::exact;

    Index size() const { return outputs.cols(); }
    Vector log_pg() const { return log_pz_pr - log_abs_det; }
};

inline double standard_normal_log_density(const Vector& v)
{
    constexpr double half_log_two_pi = 0.91893853320467274178;  // 0.5 ln(2 pi)
    return -0.5 * v.squaredNorm() - half_log_two_pi * static_cast<double>(v.size());
}

/// Per-column standard-normal log-density of a matrix.
inline Vector standard_normal_log_density_cols(const Matrix& columns)
{
    constexpr double half_log_two_pi = 0.91893853320467274178;
    return (-0.5 * columns.colwise().squaredNorm().array() -
            half_log_two_pi * static_cast<double>(columns.rows()))
        .matrix()
        .transpose();
}

class OneWayGenerator {
public:
    static constexpr Index kDefaultExactDetLimit = 8;

    OneWayGenerator() = default;

    OneWayGenerator(Index latent_dim, MlpNetwork gn, Index exact_det_limit = kDefaultExactDetLimit)
        : latent_dim_(latent_dim), gn_(std::move(gn)), exact_det_limit_(exact_det_limit)
    {
        detail::require(gn_.input_dim() == gn_.output_dim(), "generator network must be square (n -> n)");
        detail::require(latent_dim_ >= 1, "latent dimension must be positive");
        detail::require(latent_dim_ <= gn_.input_dim(), "latent dimension must not exceed data dimension");
        detail::require(exact_det_limit_ >= 1, "exact_det_limit must be positive");
    }

    Index latent_dim() const { return latent_dim_; }
    Index data_dim() const { return gn_.input_dim(); }
    Index noise_dim() const { return data_dim() - latent_dim_; }
    Index exact_det_limit() const { return exact_det_limit_; }
    const MlpNetwork& network() const { return gn_; }
    MlpNetwork& network() { return gn_; }

    LatentDraw sample_latent(Rng& rng) const
    {
        LatentDraw draw;
        draw.z = standard_normal(rng, latent_dim_);
        draw.r = standard_normal(rng, noise_dim());
        return draw;
    }

    Vector concat(const Vector& z, const Vector& r) const
    {
        detail::require(z.size() == latent_dim_, "latent vector has dimension " + std::to_string(z.size()) +
                                                     ", expected " + std::to_string(latent_dim_));
        detail::require(r.size() == noise_dim(), "noise vector has dimension " + std::to_string(r.size()) +
                                                     ", expected " + std::to_string(noise_dim()));
        Vector u(data_dim());
        u << z, r;
        return u;
    }

    Vector generate(const Vector& z, const Vector& r) const { return gn_.forward(concat(z, r)); }

    double log_abs_det_exact(const Vector& z, const Vector& r) const
    {
        require_exact_capable();
        return log_abs_det(gn_.input_jacobian(concat(z, r)));
    }

    /// n ln ||J v|| for v uniform on the unit sphere.
    double log_abs_det_approx(const Vector& z, const Vector& r, Rng& rng) const
    {
        const Vector u = concat(z, r);
        const Vector v = uniform_on_sphere(rng, data_dim());
        return log_norm_to_logdet(gn_.jvp(u, v).norm());
    }

    LogDensityRecord log_prob_generated(const Vector& z, const Vector& r, LogDetMode mode, Rng& rng) const
    {
        const double log_pz_pr = standard_normal_log_density(z) + standard_normal_log_density(r);
        const double log_det = mode == LogDetMode::exact ? log_abs_det_exact(z, r) : log_abs_det_approx(z, r, rng);
        return LogDensityRecord::make(log_pz_pr, log_det, mode);
    }

    GeneratedSample draw(LogDetMode mode, Rng& rng) const
    {
        LatentDraw latent = sample_latent(rng);
        GeneratedSample sample;
        sample.y = generate(latent.z, latent.r);
        sample.log_density = log_prob_generated(latent.z, latent.r, mode, rng);
        sample.z = std::move(latent.z);
        sample.r = std::move(latent.r);
        return sample;
    }

    /// -(1/m) sum log P_G over the given latent draws.
    double entropy_estimate(std::span<const LatentDraw> latents, LogDetMode mode, Rng& rng) const
    {
        detail::require(!latents.empty(), "entropy_estimate: need at least one latent draw");
        double total = 0.0;
        for (const auto& latent : latents) total += log_prob_generated(latent.z, latent.r, mode, rng).log_pg;
        return -total / static_cast<double>(latents.size());
    }

    /// Concatenated latent inputs for a batch: column b is concat(z_b, r_b).
    Matrix sample_inputs(Index count, Rng& rng) const { return standard_normal(rng, data_dim(), count); }

    /// Batched generation with log-densities; the tangent sweep replaces per-sample Jacobians.
    GeneratedBatch generate_batch(const Matrix& inputs, LogDetMode mode, Rng& rng) const
    {
        detail::require(inputs.rows() == data_dim(), "generate_batch: input rows must equal data dim");
        const Index count = inputs.cols();
        const Index n = data_dim();
        GeneratedBatch batch;
        batch.method = mode;
        batch.inputs = inputs;
        batch.log_pz_pr = standard_normal_log_density_cols(inputs);
        batch.log_abs_det.resize(count);
        if (mode == LogDetMode::exact) {
            require_exact_capable();
            const ForwardTape tape = gn_.forward_tangent(inputs, identity_blocks(n, count), n);
            for (Index b = 0; b < count; ++b)
                batch.log_abs_det(b) = log_abs_det(tape.output_tangents().middleCols(b * n, n));
            batch.outputs = tape.output();
        } else {
            const Matrix directions = sphere_directions(n, count, rng);
            const ForwardTape tape = gn_.forward_tangent(inputs, directions, 1);
            for (Index b = 0; b < count; ++b)
                batch.log_abs_det(b) = log_norm_to_logdet(tape.output_tangents().col(b).norm());
            batch.outputs = tape.output();
        }
        return batch;
    }

    GeneratedBatch generate_batch(Index count, LogDetMode mode, Rng& rng) const
    {
        return generate_batch(sample_inputs(count, rng), mode, rng);
    }

    static Matrix identity_blocks(Index n, Index count)
    {
        return Matrix::Identity(n, n).replicate(1, count);
    }

    static Matrix sphere_directions(Index n, Index count, Rng& rng)
    {
        Matrix directions(n, count);
        for (Index b = 0; b < count; ++b) directions.col(b) = uniform_on_sphere(rng, n);
        return directions;
    }

private:
    double log_norm_to_logdet(double norm) const
    {
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw SingularJacobian("Jacobian-vector product vanished (||Jv|| = 0)");
        return static_cast<double>(data_dim()) * std::log(norm);
    }

    void require_exact_capable() const
    {
        detail::require(data_dim() <= exact_det_limit_, "exact log-det requested for n = " +
                                                            std::to_string(data_dim()) + " above exact_det_limit " +
                                                            std::to_string(exact_det_limit_));
    }

    Index latent_dim_ = 0;
    MlpNetwork gn_;
    Index exact_det_limit_ = kDefaultExactDetLimit;
};

}  // namespace owf
