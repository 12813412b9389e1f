#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "owf/errors.hpp"

namespace owf {

inline constexpr double kSingularPivot = 1e-300;

/// Partially pivoted LU factorization of a square matrix, kept for log|det| and the
/// inverse-transpose needed by d log|det J| / dJ = J^{-T}.
class PivotedLu {
public:
    explicit PivotedLu(const Eigen::MatrixXd& square)
    {
        detail::require(square.rows() == square.cols(), "determinant requires a square matrix");
        detail::require(square.rows() > 0, "determinant of an empty matrix");
        lu_.compute(square);
        const auto diagonal = lu_.matrixLU().diagonal();
        log_abs_det_ = 0.0;
        singular_ = false;
        for (Eigen::Index i = 0; i < diagonal.size(); ++i) {
            const double pivot = std::abs(diagonal(i));
            if (!(pivot >= kSingularPivot) || !std::isfinite(pivot)) {
                singular_ = true;
                break;
            }
            log_abs_det_ += std::log(pivot);
        }
    }

    bool singular() const { return singular_; }

    double log_abs_det() const
    {
        if (singular_) throw SingularJacobian("Jacobian is singular (pivot below 1e-300)");
        return log_abs_det_;
    }

    Eigen::MatrixXd inverse_transpose() const
    {
        if (singular_) throw SingularJacobian("Jacobian is singular (pivot below 1e-300)");
        return lu_.inverse().transpose();
    }

private:
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    double log_abs_det_ = 0.0;
    bool singular_ = false;
};

inline double log_abs_det(const Eigen::MatrixXd& square)
{
    return PivotedLu(square).log_abs_det();
}

/// log(sum(exp(values))) with the maximum subtracted first.
inline double logsumexp(const Eigen::VectorXd& values)
{
    detail::require(values.size() > 0, "logsumexp of an empty vector");
    const double peak = values.maxCoeff();
    if (!std::isfinite(peak)) return peak;
    return peak + std::log((values.array() - peak).exp().sum());
}

/// Softmax weights matching logsumexp(values).
inline Eigen::VectorXd softmax(const Eigen::VectorXd& values)
{
    const double peak = values.maxCoeff();
    Eigen::VectorXd e = (values.array() - peak).exp().matrix();
    return e / e.sum();
}

}  // namespace owf
