#pragma once

// Does maximizing the one-sample estimate n ln ||J v|| raise the true log|det J|?
//
// Random square networks are trained on the estimate at a fixed probe input.
// After every optimizer step the exact log-determinant is recomputed from a
// dense pivoted factorization and the change is recorded. The success rate of
// a (size, depth) cell is the fraction of steps with a strictly positive change.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "owf/adam.hpp"
#include "owf/diffnet.hpp"
#include "owf/errors.hpp"
#include "owf/linalg.hpp"
#include "owf/random.hpp"

namespace owf {

struct JacobenchConfig {
    std::vector<Index> vector_sizes{8, 16, 32};
    std::vector<Index> layer_counts{1, 4, 16, 32};
    Index nets_per_cell = 50;
    Index steps = 20;
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const
    {
        if (vector_sizes.empty() || layer_counts.empty())
            throw ConfigError("jacobench: vector_sizes and layer_counts must be nonempty");
        for (Index s : vector_sizes)
            if (s < 1) throw ConfigError("jacobench.vector_sizes: entries must be positive");
        for (Index d : layer_counts)
            if (d < 1) throw ConfigError("jacobench.layer_counts: entries must be positive");
        if (nets_per_cell < 1) throw ConfigError("jacobench.nets_per_cell: must be positive");
        if (steps < 1) throw ConfigError("jacobench.steps: must be positive");
        if (!(lr > 0.0)) throw ConfigError("jacobench.lr: must be positive");
    }
};

struct StepDelta {
    Index net_id = 0;
    Index step = 0;
    double delta = 0.0;  // NaN when either determinant was singular
    bool success = false;
};

struct CellResult {
    Index size = 0;
    Index depth = 0;
    double success_rate = 0.0;
    std::vector<StepDelta> deltas;
};

struct SuccessReport {
    std::vector<CellResult> cells;

    double overall_success_rate() const
    {
        Index hits = 0;
        Index total = 0;
        for (const auto& cell : cells)
            for (const auto& d : cell.deltas) {
                hits += d.success ? 1 : 0;
                total += 1;
            }
        return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    }
};

/// Exact log|det J(x)| via a forward sweep with the identity as tangents; NaN when singular.
inline double exact_log_abs_det_or_nan(const MlpNetwork& net, const Vector& x)
{
    const Index n = net.input_dim();
    const ForwardTape tape = net.forward_tangent(x, Matrix::Identity(n, n), n);
    const PivotedLu lu(tape.output_tangents());
    return lu.singular() ? std::numeric_limits<double>::quiet_NaN() : lu.log_abs_det();
}

/// Random square network of `depth` layers drawn from {affine, leaky_relu, batchnorm}.
/// The first layer is always affine so every network has trainable weights; batchnorm
/// statistics are set from a standard-normal calibration batch.
inline MlpNetwork random_square_network(Index size, Index depth, Rng& rng)
{
    std::vector<LayerSpec> layers;
    std::uniform_int_distribution<int> pick(0, 2);
    for (Index l = 0; l < depth; ++l) {
        const int kind = l == 0 ? 0 : pick(rng);
        if (kind == 0)
            layers.push_back(LayerSpec::affine_random(size, size, rng));
        else if (kind == 1)
            layers.push_back(LayerSpec::activation(LayerKind::leaky_relu, size));
        else
            layers.push_back(LayerSpec::batchnorm(size));
    }
    MlpNetwork net(std::move(layers));
    net.update_batchnorm_statistics(standard_normal(rng, size, 64));
    return net;
}

/// Trains one network on -n ln ||J v|| at `probe` and returns the per-step true log-det deltas.
inline std::vector<StepDelta> jacobench_network(MlpNetwork net, const Vector& probe, Index steps,
                                                const AdamHyper& hyper, Rng& rng, Index net_id = 0)
{
    detail::require(net.input_dim() == net.output_dim(), "jacobench: network must be square");
    detail::require(probe.size() == net.input_dim(), "jacobench: probe dimension mismatch");
    detail::require(hyper.lr >= 0.0, "jacobench: learning rate must be >= 0");
    const Index n = net.input_dim();
    const auto nd = static_cast<double>(n);
    AdamState state = AdamState::zeros(net.param_count());
    std::vector<StepDelta> deltas;
    double previous = exact_log_abs_det_or_nan(net, probe);
    for (Index step = 0; step < steps; ++step) {
        const Vector v = uniform_on_sphere(rng, n);
        const ForwardTape tape = net.forward_tangent(probe, v, 1);
        const Vector jv = tape.output_tangents().col(0);
        const double sq = jv.squaredNorm();
        StepDelta record;
        record.net_id = net_id;
        record.step = step;
        if (sq > 0.0 && std::isfinite(sq)) {
            const Matrix upstream = (-nd / sq) * jv;  // d(-n ln||Jv||)/d(Jv)
            const Vector grads = net.backward_tangent(tape, Matrix::Zero(n, 1), upstream).params;
            Vector params = net.flat_params();
            adam_step(params, grads, state, hyper);
            net.set_flat_params(params);
        }
        const double current = exact_log_abs_det_or_nan(net, probe);
        record.delta = current - previous;
        record.success = std::isfinite(record.delta) && record.delta > 0.0;
        deltas.push_back(record);
        previous = current;
    }
    return deltas;
}

/// Runs every (size, depth) cell; networks are independent substreams of `seed`, so the
/// report does not depend on `threads`.
inline SuccessReport run_jacobench(const JacobenchConfig& cfg, std::uint64_t seed, int threads = 1)
{
    cfg.validate();
    struct Job {
        std::size_t cell;
        Index size;
        Index depth;
        Index net_id;
    };
    SuccessReport report;
    std::vector<Job> jobs;
    for (Index size : cfg.vector_sizes)
        for (Index depth : cfg.layer_counts) {
            report.cells.push_back({size, depth, 0.0, {}});
            for (Index id = 0; id < cfg.nets_per_cell; ++id) jobs.push_back({report.cells.size() - 1, size, depth, id});
        }

    const AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    std::vector<std::vector<StepDelta>> results(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const Job& job = jobs[i];
            Rng rng = make_substream(seed, {static_cast<std::uint64_t>(job.size), static_cast<std::uint64_t>(job.depth),
                                            static_cast<std::uint64_t>(job.net_id)});
            MlpNetwork net = random_square_network(job.size, job.depth, rng);
            const Vector probe = standard_normal(rng, job.size);
            results[i] = jacobench_network(std::move(net), probe, cfg.steps, hyper, rng, job.net_id);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        auto& cell = report.cells[jobs[i].cell];
        cell.deltas.insert(cell.deltas.end(), results[i].begin(), results[i].end());
    }
    for (auto& cell : report.cells) {
        Index hits = 0;
        for (const auto& d : cell.deltas) hits += d.success ? 1 : 0;
        cell.success_rate = static_cast<double>(hits) / static_cast<double>(cell.deltas.size());
    }
    return report;
}

}  // namespace owf
