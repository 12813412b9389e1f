#pragma once

// Training objectives.
//
// The discriminator D defines an unnormalized log-density D(x)/w. Its
// normalizer is estimated by importance sampling with the generator as
// proposal:
//
//   log zeta ~= logsumexp_i(D(y_i)/w - log P_G(y_i)) - ln S
//
// and the discriminator minimizes mean_x[-D(x)/w] + logsumexp_i(...). With
// S = 1 and w = 1 this reduces to the WGAN critic loss because log P_G(y) does
// not depend on the discriminator parameters.
//
// The generator minimizes mean_z[-w log|det J| - D(G(z))], i.e. a w-scaled KL
// divergence to the discriminator's density, which maximizes entropy.

#include <cmath>
#include <span>
#include <string>

#include "owf/diffnet.hpp"
#include "owf/errors.hpp"
#include "owf/linalg.hpp"
#include "owf/oneway_flow.hpp"
#include "owf/random.hpp"

namespace owf {

struct ObjectiveConfig {
    double w = 1.0;                 // temperature on D and weight on the entropy term
    Index S = 256;                  // importance samples shared by a discriminator step
    Index m = 256;                  // batch size
    double grad_penalty_coeff = 0.0;
    LogDetMode logdet_mode = LogDetMode::exact;

    void validate() const
    {
        if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("objective.w: must be a positive finite number");
        if (S < 1) throw ConfigError("objective.S: must be >= 1");
        if (m < 1) throw ConfigError("objective.batch_size: must be >= 1");
        if (!(grad_penalty_coeff >= 0.0)) throw ConfigError("objective.grad_penalty: must be >= 0");
    }
};

struct PartitionEstimate {
    double log_zeta = 0.0;
    Index S = 0;
    Vector log_weights;
    double w = 1.0;
};

struct LossGradient {
    double loss = 0.0;
    Vector grads;
};

struct GenLossResult {
    double loss = 0.0;
    Vector grads;
    double entropy = 0.0;           // -(1/m) sum [log P(z)P(r) - log|det J|]
    double mean_log_abs_det = 0.0;
    double min_log_abs_det = 0.0;
    double mean_disc = 0.0;
};

/// Importance-sampled log normalizer from per-sample D values and proposal log-densities.
inline PartitionEstimate log_zeta(const Vector& disc_values, const Vector& log_proposal, double w)
{
    detail::require(disc_values.size() > 0, "log_zeta: need at least one sample");
    detail::require(disc_values.size() == log_proposal.size(), "log_zeta: value/density length mismatch");
    detail::require(w > 0.0, "log_zeta: w must be positive");
    detail::require(log_proposal.allFinite(), "log_zeta: proposal log-densities must be finite");
    PartitionEstimate est;
    est.S = disc_values.size();
    est.w = w;
    est.log_weights = disc_values / w - log_proposal;
    est.log_zeta = logsumexp(est.log_weights) - std::log(static_cast<double>(est.S));
    return est;
}

inline PartitionEstimate log_zeta(const MlpNetwork& disc, const Matrix& samples, const Vector& log_proposal, double w)
{
    return log_zeta(Vector(disc.forward_batch(samples).row(0).transpose()), log_proposal, w);
}

inline PartitionEstimate log_zeta(const MlpNetwork& disc, std::span<const GeneratedSample> samples,
                                  const ObjectiveConfig& cfg)
{
    detail::require(!samples.empty(), "log_zeta: need at least one sample");
    Matrix ys(disc.input_dim(), static_cast<Index>(samples.size()));
    Vector log_pg(static_cast<Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ys.col(static_cast<Index>(i)) = samples[i].y;
        log_pg(static_cast<Index>(i)) = samples[i].log_density.log_pg;
    }
    return log_zeta(disc, ys, log_pg, cfg.w);
}

namespace detail {

inline Vector disc_param_grad(const MlpNetwork& disc, const Matrix& points, const Vector& upstream)
{
    const ForwardTape tape = disc.forward_tangent(points, Matrix(points.rows(), 0), 0);
    return disc.backward_tangent(tape, upstream.transpose(), Matrix(1, 0)).params;
}

inline void require_finite_loss(double loss, const char* what)
{
    if (!std::isfinite(loss)) throw TrainingPathology(std::string(what) + ": loss is not finite");
}

inline void require_scalar_disc(const MlpNetwork& disc)
{
    require(disc.output_dim() == 1, "discriminator must have a scalar output");
}

}  // namespace detail

/// mean_x[-D(x)/w] + logsumexp_i(D(y_i)/w - log P_G(y_i)); one shared set of generated samples.
inline LossGradient disc_loss_unbiased(const MlpNetwork& disc, const Matrix& real, const Matrix& generated,
                                       const Vector& generated_log_pg, const ObjectiveConfig& cfg)
{
    detail::require_scalar_disc(disc);
    detail::require(real.cols() > 0 && generated.cols() > 0, "disc_loss_unbiased: batches must be nonempty");
    detail::require(generated.cols() == generated_log_pg.size(), "disc_loss_unbiased: one log-density per sample");
    detail::require(cfg.w > 0.0, "disc_loss_unbiased: w must be positive");
    const double w = cfg.w;
    const auto batch = static_cast<double>(real.cols());

    const Vector d_real = disc.forward_batch(real).row(0).transpose();
    const Vector d_gen = disc.forward_batch(generated).row(0).transpose();
    const Vector log_weights = d_gen / w - generated_log_pg;
    LossGradient out;
    out.loss = -d_real.sum() / (w * batch) + logsumexp(log_weights);
    detail::require_finite_loss(out.loss, "disc_loss_unbiased");

    const Vector up_real = Vector::Constant(real.cols(), -1.0 / (w * batch));
    const Vector up_gen = softmax(log_weights) / w;
    out.grads = detail::disc_param_grad(disc, real, up_real) + detail::disc_param_grad(disc, generated, up_gen);
    return out;
}

/// mean[D(y)] - mean[D(x)].
inline LossGradient disc_loss_wgan(const MlpNetwork& disc, const Matrix& real, const Matrix& generated)
{
    detail::require_scalar_disc(disc);
    detail::require(real.cols() > 0 && generated.cols() > 0, "disc_loss_wgan: batches must be nonempty");
    const auto batch = static_cast<double>(real.cols());
    const auto count = static_cast<double>(generated.cols());
    LossGradient out;
    out.loss = disc.forward_batch(generated).sum() / count - disc.forward_batch(real).sum() / batch;
    detail::require_finite_loss(out.loss, "disc_loss_wgan");
    const Vector up_real = Vector::Constant(real.cols(), -1.0 / batch);
    const Vector up_gen = Vector::Constant(generated.cols(), 1.0 / count);
    out.grads = detail::disc_param_grad(disc, real, up_real) + detail::disc_param_grad(disc, generated, up_gen);
    return out;
}

/// Penalty evaluated at fixed interpolates (deterministic part of grad_penalty).
inline LossGradient grad_penalty_at(const MlpNetwork& disc, const Matrix& points, double coeff)
{
    const Index n = disc.input_dim();
    const Index batch = points.cols();
    const ForwardTape tape = disc.forward_tangent(points, OneWayGenerator::identity_blocks(n, batch), n);
    const Matrix& grads_x = tape.output_tangents();  // 1 x B*n; block b is grad_x D(x_b)^T
    Matrix upstream = Matrix::Zero(1, batch * n);
    LossGradient out;
    double total = 0.0;
    for (Index b = 0; b < batch; ++b) {
        const auto g = grads_x.middleCols(b * n, n);
        const double norm = g.norm();
        total += (norm - 1.0) * (norm - 1.0);
        if (norm > 0.0) upstream.middleCols(b * n, n) = (2.0 * coeff * (norm - 1.0) / (norm * batch)) * g;
    }
    out.loss = coeff * total / static_cast<double>(batch);
    detail::require_finite_loss(out.loss, "grad_penalty");
    out.grads = disc.backward_tangent(tape, Matrix::Zero(1, batch), upstream).params;
    return out;
}

/// coeff * mean[(||grad_x D(x_hat)|| - 1)^2] at x_hat = t x_b + (1 - t) y_{b mod S}, t ~ U(0, 1).
inline LossGradient grad_penalty(const MlpNetwork& disc, const Matrix& real, const Matrix& generated, double coeff,
                                 Rng& rng)
{
    detail::require_scalar_disc(disc);
    detail::require(coeff >= 0.0, "grad_penalty: coefficient must be >= 0");
    detail::require(real.cols() > 0 && generated.cols() > 0, "grad_penalty: batches must be nonempty");
    LossGradient out;
    out.grads = Vector::Zero(disc.param_count());
    if (coeff == 0.0) return out;

    const Index n = disc.input_dim();
    const Index batch = real.cols();
    Matrix interpolates(n, batch);
    for (Index b = 0; b < batch; ++b) {
        const double t = uniform01(rng);
        interpolates.col(b) = t * real.col(b) + (1.0 - t) * generated.col(b % generated.cols());
    }
    return grad_penalty_at(disc, interpolates, coeff);
}

/// mean_b[-w log|det J_b| - D(G(u_b))] over concatenated latent inputs u_b = (z_b, r_b).
/// The log-det uses cfg.logdet_mode; w = 0 gives the plain adversarial generator loss.
inline GenLossResult gen_loss(const MlpNetwork& disc, const OneWayGenerator& gen, const Matrix& inputs,
                              const ObjectiveConfig& cfg, Rng& rng)
{
    detail::require_scalar_disc(disc);
    detail::require(inputs.cols() >= 1, "gen_loss: batch must be nonempty");
    detail::require(inputs.rows() == gen.data_dim(), "gen_loss: inputs must be concat(z, r) columns");
    detail::require(disc.input_dim() == gen.data_dim(), "gen_loss: discriminator and generator dims differ");
    detail::require(cfg.w >= 0.0, "gen_loss: w must be >= 0");

    const MlpNetwork& gn = gen.network();
    const Index n = gen.data_dim();
    const Index batch = inputs.cols();
    const double scale = 1.0 / static_cast<double>(batch);
    const double w = cfg.w;

    Vector log_det(batch);
    Matrix g_tangent;
    ForwardTape tape;
    if (cfg.logdet_mode == LogDetMode::exact) {
        detail::require(n <= gen.exact_det_limit(), "gen_loss: exact log-det requested above exact_det_limit");
        tape = gn.forward_tangent(inputs, OneWayGenerator::identity_blocks(n, batch), n);
        g_tangent.resize(n, batch * n);
        for (Index b = 0; b < batch; ++b) {
            const PivotedLu lu(tape.output_tangents().middleCols(b * n, n));
            log_det(b) = lu.log_abs_det();
            g_tangent.middleCols(b * n, n) = (-w * scale) * lu.inverse_transpose();
        }
    } else {
        tape = gn.forward_tangent(inputs, OneWayGenerator::sphere_directions(n, batch, rng), 1);
        g_tangent.resize(n, batch);
        const auto nd = static_cast<double>(n);
        for (Index b = 0; b < batch; ++b) {
            const Vector jv = tape.output_tangents().col(b);
            const double sq = jv.squaredNorm();
            if (!(sq > 0.0) || !std::isfinite(sq)) throw SingularJacobian("gen_loss: ||Jv|| vanished");
            log_det(b) = 0.5 * nd * std::log(sq);
            g_tangent.col(b) = (-w * scale * nd / sq) * jv;
        }
    }

    const Matrix& outputs = tape.output();
    const ForwardTape disc_tape = disc.forward_tangent(outputs, Matrix(n, 0), 0);
    const Vector d_values = disc_tape.output().row(0).transpose();
    const Matrix g_outputs =
        disc.backward_tangent(disc_tape, Matrix::Constant(1, batch, -scale), Matrix(1, 0)).inputs;

    GenLossResult out;
    out.mean_log_abs_det = log_det.mean();
    out.min_log_abs_det = log_det.minCoeff();
    out.mean_disc = d_values.mean();
    out.loss = -w * out.mean_log_abs_det - out.mean_disc;
    out.entropy = -(standard_normal_log_density_cols(inputs) - log_det).mean();
    detail::require_finite_loss(out.loss, "gen_loss");
    out.grads = gn.backward_tangent(tape, g_outputs, g_tangent).params;
    return out;
}

}  // namespace owf
