#pragma once

// Alternating adversarial optimization: `disc_steps_per_gen` discriminator
// updates (fresh real batch, S shared generator samples) then one generator
// update, per iteration.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "owf/adam.hpp"
#include "owf/diffnet.hpp"
#include "owf/objectives.hpp"
#include "owf/oneway_flow.hpp"
#include "owf/random.hpp"
#include "owf/synthetic_data.hpp"

namespace owf {

struct ModelConfig {
    Index latent_dim = 2;
    Index data_dim = 2;
    std::vector<Index> gen_hidden{64, 64};
    LayerKind gen_activation = LayerKind::tanh;
    std::vector<Index> disc_hidden{128, 128};
    LayerKind disc_activation = LayerKind::leaky_relu;
    Index exact_det_limit = OneWayGenerator::kDefaultExactDetLimit;

    void validate() const
    {
        if (data_dim < 1) throw ConfigError("model.data_dim: must be >= 1");
        if (latent_dim < 1 || latent_dim > data_dim) throw ConfigError("model.latent_dim: must be in [1, data_dim]");
        for (Index h : gen_hidden)
            if (h < data_dim) throw ConfigError("model.gen_hidden: widths must be >= data_dim");
        for (Index h : disc_hidden)
            if (h < 1) throw ConfigError("model.disc_hidden: widths must be >= 1");
        if (exact_det_limit < 1) throw ConfigError("model.exact_det_limit: must be >= 1");
    }
};

struct TrainConfig {
    double lr_disc = 1e-5;
    double lr_gen = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    Index steps = 30000;
    Index disc_steps_per_gen = 1;
    ObjectiveConfig objective;
    std::uint64_t seed = 0;
    Index checkpoint_every = 1000;
    Index train_set_size = 10000;  // 0 draws fresh real batches from the mixture every step
    bool record_wall_clock = true;

    void validate() const
    {
        if (!(lr_disc > 0.0)) throw ConfigError("train.lr_disc: must be > 0");
        if (!(lr_gen > 0.0)) throw ConfigError("train.lr_gen: must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must be in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must be in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("train.eps: must be > 0");
        if (steps < 0) throw ConfigError("train.steps: must be >= 0");
        if (disc_steps_per_gen < 1) throw ConfigError("train.disc_steps_per_gen: must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
        if (train_set_size < 0) throw ConfigError("train.train_set_size: must be >= 0");
        objective.validate();
    }

    AdamHyper disc_hyper() const { return {lr_disc, beta1, beta2, eps}; }
    AdamHyper gen_hyper() const { return {lr_gen, beta1, beta2, eps}; }
};

struct Model {
    MlpNetwork disc;
    OneWayGenerator gen;
};

inline Model init_model(const ModelConfig& cfg, Rng& rng)
{
    cfg.validate();
    Model model;
    model.disc = MlpNetwork::mlp(cfg.data_dim, cfg.disc_hidden, 1, cfg.disc_activation, rng);
    model.gen = OneWayGenerator(cfg.latent_dim,
                                MlpNetwork::mlp(cfg.data_dim, cfg.gen_hidden, cfg.data_dim, cfg.gen_activation, rng),
                                cfg.exact_det_limit);
    return model;
}

struct TraceRecord {
    Index iteration = 0;
    double disc_loss = 0.0;
    double gen_loss = 0.0;
    double entropy = 0.0;
    double log_zeta = 0.0;
    double wall_clock = 0.0;
    double disc_grad_norm = 0.0;
    double gen_grad_norm = 0.0;
    double min_log_abs_det = 0.0;
};

using TrainTrace = std::vector<TraceRecord>;

/// Everything needed to continue a run bit-for-bit.
struct TrainState {
    Model model;
    AdamState disc_opt;
    AdamState gen_opt;
    Index iteration = 0;
    Rng rng;
};

struct TrainResult {
    TrainState state;
    TrainTrace trace;
};

struct TrainHooks {
    /// Called with the state after every `checkpoint_every` iterations and at the end ("final"),
    /// and with the last good state before an abort ("failed").
    std::function<void(const TrainState&, const std::string& tag)> checkpoint;
    std::function<void(const TraceRecord&)> on_iteration;
};

inline Rng training_stream(std::uint64_t seed) { return make_substream(seed, {2}); }

inline TrainState initial_state(const ModelConfig& model_cfg, std::uint64_t seed)
{
    Rng init = make_substream(seed, {0});
    TrainState state;
    state.model = init_model(model_cfg, init);
    state.disc_opt = AdamState::zeros(state.model.disc.param_count());
    state.gen_opt = AdamState::zeros(state.model.gen.network().param_count());
    state.rng = training_stream(seed);
    return state;
}

/// Fixed training set drawn from its own stream, so resuming does not need to store it.
inline Matrix training_set(const TrainConfig& cfg, const GmmSpec& data)
{
    if (cfg.train_set_size == 0) return {};
    Rng rng = make_substream(cfg.seed, {1});
    return sample(data, cfg.train_set_size, rng);
}

inline Matrix real_batch(const GmmSpec& data, const Matrix& train_set, Index count, Rng& rng)
{
    if (train_set.cols() == 0) return sample(data, count, rng);
    std::uniform_int_distribution<Index> pick(0, train_set.cols() - 1);
    Matrix batch(train_set.rows(), count);
    for (Index i = 0; i < count; ++i) batch.col(i) = train_set.col(pick(rng));
    return batch;
}

/// Runs the remaining iterations of `state` up to cfg.steps.
inline TrainResult train(const TrainConfig& cfg, const GmmSpec& data, TrainState state, const TrainHooks& hooks = {})
{
    cfg.validate();
    data.validate();
    detail::require(state.model.disc.input_dim() == 2 && state.model.gen.data_dim() == 2,
                    "train: mixture data is 2D; model dimensions must be 2");
    const Matrix train_set = training_set(cfg, data);
    const ObjectiveConfig& obj = cfg.objective;
    const auto start = std::chrono::steady_clock::now();

    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(std::max<Index>(0, cfg.steps - state.iteration)));
    while (state.iteration < cfg.steps) {
        TrainState before = state;
        TraceRecord record;
        record.iteration = state.iteration + 1;
        try {
            for (Index k = 0; k < cfg.disc_steps_per_gen; ++k) {
                const Matrix real = real_batch(data, train_set, obj.m, state.rng);
                const GeneratedBatch fake = state.model.gen.generate_batch(obj.S, obj.logdet_mode, state.rng);
                const Vector log_pg = fake.log_pg();
                LossGradient loss = disc_loss_unbiased(state.model.disc, real, fake.outputs, log_pg, obj);
                if (obj.grad_penalty_coeff > 0.0) {
                    const LossGradient gp =
                        grad_penalty(state.model.disc, real, fake.outputs, obj.grad_penalty_coeff, state.rng);
                    loss.loss += gp.loss;
                    loss.grads += gp.grads;
                }
                record.disc_loss = loss.loss;
                record.disc_grad_norm = loss.grads.norm();
                record.log_zeta = log_zeta(state.model.disc, fake.outputs, log_pg, obj.w).log_zeta;
                Vector params = state.model.disc.flat_params();
                adam_step(params, loss.grads, state.disc_opt, cfg.disc_hyper());
                state.model.disc.set_flat_params(params);
            }
            const Matrix inputs = state.model.gen.sample_inputs(obj.m, state.rng);
            const GenLossResult g = gen_loss(state.model.disc, state.model.gen, inputs, obj, state.rng);
            record.gen_loss = g.loss;
            record.entropy = g.entropy;
            record.gen_grad_norm = g.grads.norm();
            record.min_log_abs_det = g.min_log_abs_det;
            Vector params = state.model.gen.network().flat_params();
            adam_step(params, g.grads, state.gen_opt, cfg.gen_hyper());
            state.model.gen.network().set_flat_params(params);
        } catch (const SingularJacobian&) {
            if (hooks.checkpoint) hooks.checkpoint(before, "failed");
            throw;
        } catch (const TrainingPathology&) {
            if (hooks.checkpoint) hooks.checkpoint(before, "failed");
            throw;
        }
        state.iteration += 1;
        if (cfg.record_wall_clock)
            record.wall_clock =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.trace.push_back(record);
        if (hooks.on_iteration) hooks.on_iteration(record);
        if (hooks.checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
            state.iteration < cfg.steps)
            hooks.checkpoint(state, "iter_" + std::to_string(state.iteration));
    }
    if (hooks.checkpoint) hooks.checkpoint(state, "final");
    result.state = std::move(state);
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const GmmSpec& data,
                         const TrainHooks& hooks = {})
{
    return train(cfg, data, initial_state(model_cfg, cfg.seed), hooks);
}

}  // namespace owf
