#pragma once

// Central finite differences and the relative-error measure used by every
// gradient check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

namespace counts::fd {

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;
// Gradients smaller than this are compared in absolute terms; round-off in the
// difference quotient is about 1e-11 times the function value.
inline constexpr double kFloor = 1e-3;

inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                                        const Eigen::MatrixXd& at, double h = kStep) {
    Eigen::MatrixXd g(at.rows(), at.cols());
    Eigen::MatrixXd p = at;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        const double v = p(i);
        p(i) = v + h;
        const double up = f(p);
        p(i) = v - h;
        const double down = f(p);
        p(i) = v;
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double a = analytic(i), n = numeric(i);
        const double scale = std::max({std::abs(a), std::abs(n), kFloor});
        worst = std::max(worst, std::abs(a - n) / scale);
    }
    return worst;
}

}  // namespace counts::fd
