#pragma once

#include <Eigen/Dense>

#include <vector>

namespace counts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Task { kClassification, kSequenceRegression };

// One model input with its observed label. `x` is D x T; classification uses
// `label`, sequence regression uses `sequence` (length T).
struct Example {
    Matrix x;
    int label = -1;
    Vector sequence;
};

using Examples = std::vector<Example>;

}  // namespace counts
