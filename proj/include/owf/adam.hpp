#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "owf/errors.hpp"

namespace owf {

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    long step_count = 0;

    static AdamState zeros(Eigen::Index size)
    {
        return {Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size), 0};
    }
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected adaptive-moment step (descent direction), applied in place.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamHyper& hyper)
{
    detail::require(params.size() == grads.size(), "adam_step: parameter/gradient length mismatch");
    if (state.first_moment.size() == 0 && state.step_count == 0) state = AdamState::zeros(params.size());
    detail::require(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
                    "adam_step: optimizer state does not match parameters");
    if (!grads.allFinite()) throw TrainingPathology("adam_step: non-finite gradient");

    state.step_count += 1;
    state.first_moment = hyper.beta1 * state.first_moment + (1.0 - hyper.beta1) * grads;
    state.second_moment = hyper.beta2 * state.second_moment + (1.0 - hyper.beta2) * grads.cwiseAbs2();
    const double correction1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step_count));
    const double correction2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step_count));
    const auto m_hat = state.first_moment.array() / correction1;
    const auto v_hat = state.second_moment.array() / correction2;
    params.array() -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
}

}  // namespace owf
