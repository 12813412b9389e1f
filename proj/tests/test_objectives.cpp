#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "owf/objectives.hpp"
#include "owf/synthetic_data.hpp"
#include "test_support.hpp"

using namespace owf;
using owf::testing::fd_gradient;
using owf::testing::max_rel_error;
using owf::testing::with_params;

namespace {

MlpNetwork tiny_disc(Rng& rng, LayerKind act = LayerKind::tanh)
{
    const std::vector<Index> hidden{6, 5};
    MlpNetwork net = MlpNetwork::mlp(2, hidden, 1, act, rng);
    net.set_flat_params(net.flat_params() + 0.2 * standard_normal(rng, net.param_count()));
    return net;
}

/// Shifts the scalar output of `disc` by c through its final bias.
MlpNetwork shifted(MlpNetwork disc, double c)
{
    Vector p = disc.flat_params();
    p(p.size() - 1) += c;
    disc.set_flat_params(p);
    return disc;
}

/// Two-mode mixture used as a known unnormalized log-density: D(y) = log sum_k exp(-|y - mu_k|^2 / (2 s^2)).
struct TwoModeTarget {
    GmmSpec spec;
    double log_normalizer;

    TwoModeTarget()
    {
        spec.means.resize(2, 2);
        spec.means << -1.0, 1.0, 0.5, -0.5;
        spec.sigma = 0.5;
        spec.name = "two-mode";
        log_normalizer = std::log(2.0 * 2.0 * std::numbers::pi * spec.sigma * spec.sigma);
    }

    Vector values(const Matrix& points) const
    {
        return (log_density_cols(spec, points).array() + log_normalizer).matrix();
    }
};

/// N(0, scale^2 I) in 2D.
struct WideNormal {
    double scale;

    Matrix draw(Index count, Rng& rng) const { return scale * standard_normal(rng, 2, count); }
    Vector log_density(const Matrix& points) const
    {
        return (-0.5 * points.colwise().squaredNorm().array() / (scale * scale) -
                std::log(2.0 * std::numbers::pi * scale * scale))
            .matrix()
            .transpose();
    }
};

double mean_of(const std::vector<double>& xs)
{
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double variance_of(const std::vector<double>& xs)
{
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

}  // namespace

TEST(Objectives, ConstantWeightsGiveExactEstimate)
{
    Rng rng = make_substream(1);
    for (double w : {1.0, 0.25, 3.0}) {
        for (int rep = 0; rep < 5; ++rep) {
            const Vector log_pg = standard_normal(rng, 17);
            const Vector d = w * (log_pg.array() + 2.5).matrix();
            const PartitionEstimate est = log_zeta(d, log_pg, w);
            EXPECT_NEAR(est.log_zeta, 2.5, 1e-12);
            EXPECT_EQ(est.S, 17);
        }
    }
}

TEST(Objectives, SingleSampleEstimate)
{
    const PartitionEstimate est = log_zeta(Vector::Constant(1, 3.0), Vector::Constant(1, -0.7), 2.0);
    EXPECT_DOUBLE_EQ(est.log_zeta, 1.5 + 0.7);
}

TEST(Objectives, EstimateIsLogMeanOfWeights)
{
    Rng rng = make_substream(2);
    const Vector d = standard_normal(rng, 9), lp = standard_normal(rng, 9);
    const double w = 0.7;
    const PartitionEstimate est = log_zeta(d, lp, w);
    EXPECT_NEAR(est.log_zeta, std::log((d / w - lp).array().exp().mean()), 1e-12);
    EXPECT_LE((est.log_weights - (d / w - lp)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Objectives, GeneratedSampleOverloadMatchesMatrixOverload)
{
    Rng rng = make_substream(3);
    const MlpNetwork disc = tiny_disc(rng);
    const std::vector<Index> hidden{4};
    const OneWayGenerator gen(2, MlpNetwork::mlp(2, hidden, 2, LayerKind::tanh, rng));
    std::vector<GeneratedSample> samples;
    Matrix ys(2, 6);
    Vector lp(6);
    for (Index i = 0; i < 6; ++i) {
        samples.push_back(gen.draw(LogDetMode::exact, rng));
        ys.col(i) = samples.back().y;
        lp(i) = samples.back().log_density.log_pg;
    }
    ObjectiveConfig cfg;
    cfg.w = 1.3;
    EXPECT_DOUBLE_EQ(log_zeta(disc, std::span<const GeneratedSample>(samples), cfg).log_zeta,
                     log_zeta(disc, ys, lp, 1.3).log_zeta);
}

TEST(Objectives, PartitionEstimateIsUnbiased)
{
    Rng rng = make_substream(4);
    const TwoModeTarget target;
    const WideNormal proposal{2.0};
    std::vector<double> estimates;
    for (int rep = 0; rep < 200; ++rep) {
        const Matrix y = proposal.draw(10, rng);
        estimates.push_back(std::exp(log_zeta(target.values(y), proposal.log_density(y), 1.0).log_zeta));
    }
    const double truth = std::exp(target.log_normalizer);
    const double se = std::sqrt(variance_of(estimates) / 200.0);
    EXPECT_GT(se, 0.0);
    EXPECT_LE(std::abs(mean_of(estimates) - truth), 3.0 * se);
}

TEST(Objectives, TargetProposalConvergesWithZeroVariance)
{
    Rng rng = make_substream(5);
    const TwoModeTarget target;
    for (Index s : {10, 100, 1000, 10000}) {
        const Matrix y = sample(target.spec, s, rng);
        const double est = log_zeta(target.values(y), log_density_cols(target.spec, y), 1.0).log_zeta;
        EXPECT_NEAR(std::exp(est - target.log_normalizer), 1.0, 1e-12) << "S=" << s;
    }
}

TEST(Objectives, VarianceShrinksAsProposalApproachesTarget)
{
    Rng rng = make_substream(6);
    const TwoModeTarget target;
    const WideNormal wide{2.0};
    std::vector<double> matched, broad;
    for (int rep = 0; rep < 100; ++rep) {
        const Matrix a = sample(target.spec, 10, rng);
        matched.push_back(log_zeta(target.values(a), log_density_cols(target.spec, a), 1.0).log_zeta);
        const Matrix b = wide.draw(10, rng);
        broad.push_back(log_zeta(target.values(b), wide.log_density(b), 1.0).log_zeta);
    }
    EXPECT_LT(variance_of(matched), variance_of(broad));
}

TEST(Objectives, ShiftCovariance)
{
    Rng rng = make_substream(7);
    const MlpNetwork disc = tiny_disc(rng);
    const Matrix real = standard_normal(rng, 2, 8), gen = standard_normal(rng, 2, 5);
    const Vector lp = standard_normal(rng, 5);
    ObjectiveConfig cfg;
    for (double w : {1.0, 0.4}) {
        cfg.w = w;
        const double c = 3.25;
        const MlpNetwork moved = shifted(disc, c);
        EXPECT_NEAR(log_zeta(moved, gen, lp, w).log_zeta - log_zeta(disc, gen, lp, w).log_zeta, c / w, 1e-10);
        const LossGradient a = disc_loss_unbiased(disc, real, gen, lp, cfg);
        const LossGradient b = disc_loss_unbiased(moved, real, gen, lp, cfg);
        EXPECT_NEAR(a.loss, b.loss, 1e-10);
        EXPECT_LE((a.grads - b.grads).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Objectives, SingleSampleUnbiasedLossReducesToWgan)
{
    Rng rng = make_substream(8);
    ObjectiveConfig cfg;
    cfg.w = 1.0;
    cfg.S = 1;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const MlpNetwork disc = tiny_disc(rng, trial % 2 ? LayerKind::tanh : LayerKind::leaky_relu);
        const Matrix real = standard_normal(rng, 2, 1 + trial % 7);
        const Matrix gen = standard_normal(rng, 2, 1);
        const Vector lp = standard_normal(rng, 1);
        const LossGradient u = disc_loss_unbiased(disc, real, gen, lp, cfg);
        const LossGradient v = disc_loss_wgan(disc, real, gen);
        worst = std::max(worst, (u.grads - v.grads).cwiseAbs().maxCoeff());
        EXPECT_NEAR(u.loss, v.loss - lp(0), 1e-12);
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(Objectives, ConstantDiscriminatorCancels)
{
    Rng rng = make_substream(9);
    std::vector<LayerSpec> layers{LayerSpec::affine_random(2, 4, rng), LayerSpec::activation(LayerKind::tanh, 4),
                                  LayerSpec::affine(Matrix::Zero(1, 4), Vector::Constant(1, 1.7))};
    const MlpNetwork disc(std::move(layers));
    ObjectiveConfig cfg;
    cfg.w = 1.0;
    const Matrix real = standard_normal(rng, 2, 6), gen = standard_normal(rng, 2, 1);
    const Vector lp = Vector::Constant(1, -2.0);
    const LossGradient g = disc_loss_unbiased(disc, real, gen, lp, cfg);
    EXPECT_NEAR(g.loss, 2.0, 1e-14);  // -c + (c - log_pg)
    EXPECT_NEAR(g.grads(g.grads.size() - 1), 0.0, 1e-15);
}

TEST(Objectives, UnbiasedLossGradientMatchesFiniteDifferences)
{
    Rng rng = make_substream(10);
    for (double w : {1.0, 0.5}) {
        ObjectiveConfig cfg;
        cfg.w = w;
        const MlpNetwork disc = tiny_disc(rng);
        const Matrix real = standard_normal(rng, 2, 5), gen = standard_normal(rng, 2, 4);
        const Vector lp = standard_normal(rng, 4);
        const LossGradient g = disc_loss_unbiased(disc, real, gen, lp, cfg);
        const Vector fd = fd_gradient(
            [&](const Vector& p) { return disc_loss_unbiased(with_params(disc, p), real, gen, lp, cfg).loss; },
            disc.flat_params());
        EXPECT_LE(max_rel_error(g.grads, fd), 1e-4);
    }
}

TEST(Objectives, WganLoss)
{
    Rng rng = make_substream(11);
    const MlpNetwork disc = tiny_disc(rng);
    const Matrix x = standard_normal(rng, 2, 6);
    EXPECT_NEAR(disc_loss_wgan(disc, x, x).loss, 0.0, 1e-15);
    const Matrix y = standard_normal(rng, 2, 3);
    const LossGradient g = disc_loss_wgan(disc, x, y);
    const Vector fd =
        fd_gradient([&](const Vector& p) { return disc_loss_wgan(with_params(disc, p), x, y).loss; }, disc.flat_params());
    EXPECT_LE(max_rel_error(g.grads, fd), 1e-4);
}

TEST(Objectives, GradientPenalty)
{
    Rng rng = make_substream(12);
    const MlpNetwork disc = tiny_disc(rng);
    const Matrix x = standard_normal(rng, 2, 4), y = standard_normal(rng, 2, 4);
    const LossGradient off = grad_penalty(disc, x, y, 0.0, rng);
    EXPECT_EQ(off.loss, 0.0);
    EXPECT_TRUE(off.grads.isZero(0.0));

    const MlpNetwork unit({LayerSpec::affine((Matrix(1, 2) << 0.6, 0.8).finished(), Vector::Constant(1, 0.3))});
    EXPECT_NEAR(grad_penalty(unit, x, y, 10.0, rng).loss, 0.0, 1e-15);

    const double coeff = 2.5;
    const Matrix points = standard_normal(rng, 2, 5);
    const LossGradient g = grad_penalty_at(disc, points, coeff);
    const Vector fd = fd_gradient([&](const Vector& p) { return grad_penalty_at(with_params(disc, p), points, coeff).loss; },
                                  disc.flat_params());
    EXPECT_LE(max_rel_error(g.grads, fd), 1e-4);
}

TEST(Objectives, GradientPenaltyPairsBatchesAndIsSeeded)
{
    Rng a = make_substream(13), b = make_substream(13);
    Rng init = make_substream(14);
    const MlpNetwork disc = tiny_disc(init);
    const Matrix x = standard_normal(init, 2, 6), y = standard_normal(init, 2, 4);
    const LossGradient ga = grad_penalty(disc, x, y, 1.0, a);
    const LossGradient gb = grad_penalty(disc, x, y, 1.0, b);
    EXPECT_EQ(ga.loss, gb.loss);
    EXPECT_GT(ga.loss, 0.0);
}

TEST(Objectives, GeneratorLossWithoutEntropy)
{
    Rng rng = make_substream(15);
    const MlpNetwork disc = tiny_disc(rng);
    const std::vector<Index> hidden{5};
    const OneWayGenerator gen(2, MlpNetwork::mlp(2, hidden, 2, LayerKind::tanh, rng));
    const Matrix inputs = gen.sample_inputs(7, rng);
    ObjectiveConfig cfg;
    cfg.w = 0.0;
    const GenLossResult r = gen_loss(disc, gen, inputs, cfg, rng);
    EXPECT_NEAR(r.loss, -disc.forward_batch(gen.network().forward_batch(inputs)).mean(), 1e-14);
}

TEST(Objectives, GeneratorLossOfScaledIdentity)
{
    Rng rng = make_substream(16);
    const MlpNetwork zero_disc({LayerSpec::affine(Matrix::Zero(1, 2), Vector::Zero(1))});
    for (double c : {0.5, 2.0}) {
        for (double w : {1.0, 0.3}) {
            const OneWayGenerator gen(2, MlpNetwork({LayerSpec::affine(c * Matrix::Identity(2, 2), Vector::Zero(2))}));
            ObjectiveConfig cfg;
            cfg.w = w;
            const GenLossResult r = gen_loss(zero_disc, gen, gen.sample_inputs(4, rng), cfg, rng);
            EXPECT_NEAR(r.loss, -w * 2.0 * std::log(c), 1e-14);
            // Directional derivative along W = c I is the trace of dL/dW.
            EXPECT_NEAR(r.grads(0) + r.grads(3), -2.0 * w / c, 1e-14);
        }
    }
}

TEST(Objectives, GeneratorLossGradientMatchesFiniteDifferences)
{
    Rng rng = make_substream(17);
    const MlpNetwork disc = tiny_disc(rng);
    const std::vector<Index> hidden{6, 6};
    const OneWayGenerator gen(2, MlpNetwork::mlp(2, hidden, 2, LayerKind::tanh, rng));
    const Matrix inputs = gen.sample_inputs(5, rng);
    for (LogDetMode mode : {LogDetMode::exact, LogDetMode::jvp_one_sample}) {
        ObjectiveConfig cfg;
        cfg.w = 0.8;
        cfg.logdet_mode = mode;
        const Rng start = rng;
        auto loss_at = [&](const Vector& p) {
            Rng local = start;  // same sphere directions for every evaluation
            OneWayGenerator g = gen;
            g.network().set_flat_params(p);
            return gen_loss(disc, g, inputs, cfg, local).loss;
        };
        Rng local = start;
        const GenLossResult r = gen_loss(disc, gen, inputs, cfg, local);
        EXPECT_LE(max_rel_error(r.grads, fd_gradient(loss_at, gen.network().flat_params())), 1e-3) << to_string(mode);
    }
}

TEST(Objectives, GeneratorLossDecomposesIntoEntropyAndDiscriminatorTerms)
{
    Rng rng = make_substream(18);
    const MlpNetwork disc = tiny_disc(rng);
    const std::vector<Index> hidden{6};
    const OneWayGenerator gen(2, MlpNetwork::mlp(2, hidden, 2, LayerKind::tanh, rng));
    const Matrix inputs = gen.sample_inputs(9, rng);
    ObjectiveConfig cfg;
    cfg.w = 1.0;
    const GenLossResult r = gen_loss(disc, gen, inputs, cfg, rng);
    const double mean_log_pz = standard_normal_log_density_cols(inputs).mean();
    EXPECT_NEAR(r.loss, -(r.entropy + mean_log_pz) - r.mean_disc, 1e-12);
    const GeneratedBatch batch = gen.generate_batch(inputs, LogDetMode::exact, rng);
    EXPECT_NEAR(r.entropy, -batch.log_pg().mean(), 1e-12);
}

TEST(Objectives, RejectsInvalidArguments)
{
    Rng rng = make_substream(19);
    const MlpNetwork disc = tiny_disc(rng);
    ObjectiveConfig cfg;
    cfg.w = 0.0;
    EXPECT_THROW(disc_loss_unbiased(disc, Matrix::Zero(2, 2), Matrix::Zero(2, 2), Vector::Zero(2), cfg), InvalidInput);
    EXPECT_THROW(log_zeta(Vector::Zero(2), Vector::Zero(3), 1.0), InvalidInput);
    EXPECT_THROW(log_zeta(Vector::Zero(2), Vector::Zero(2), -1.0), InvalidInput);
    EXPECT_THROW(cfg.validate(), ConfigError);
    const MlpNetwork vector_disc({LayerSpec::affine_random(2, 2, rng)});
    EXPECT_THROW(disc_loss_wgan(vector_disc, Matrix::Zero(2, 2), Matrix::Zero(2, 2)), InvalidInput);
}
