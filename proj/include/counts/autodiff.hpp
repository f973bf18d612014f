#pragma once

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// Every value is an Eigen matrix. Batched code keeps one instance per column;
// time-series features are stored channel-major along the rows, i.e. row
// `c * T + t` holds channel c at step t. Nodes are appended to a Tape in
// topological order, so `backward` is a single reverse sweep.

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace counts::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool valid() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    // Gradient closure: receives the output gradient and pushes contributions
    // to parents through `accumulate`.
    using Backward = std::function<void(Tape&, const Matrix&)>;

    Var constant(Matrix value);
    Var variable(Matrix value);

    const Matrix& value(int id) const { return nodes_[id].value; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

    // Gradient of the last `backward` root w.r.t. `v`; zeros if v was not reached.
    Matrix grad(Var v) const;

    // Seeds d(root)/d(root) = 1 and sweeps the tape. Root must be 1x1.
    void backward(Var root);

    void accumulate(int id, const Matrix& g);

    // Used by ops; `parents` decides whether the node needs a gradient.
    Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
    Var push(Matrix value, const std::vector<Var>& parents, Backward backward);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

// Elementwise arithmetic (shapes must match).
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// m + b * 1^T, where b is a column vector with m.rows() entries.
Var add_bias(Var m, Var b);
Var matmul(Var a, Var b);

Var tanh(Var a);
Var identity(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
// Hard clamp; gradient is zero outside [lo, hi].
Var clamp(Var a, double lo, double hi);

// 1x1 sum of all entries.
Var sum(Var a);
// 1 x cols: per-column sum over rows.
Var col_sum(Var a);
// rows x 1: per-row mean over columns.
Var row_mean(Var a);

// Column-wise numerically stable log-softmax / softmax.
Var log_softmax(Var a);
Var softmax(Var a);

// 1 x cols: entry (index[c], c) for every column c.
Var pick(Var a, const std::vector<int>& index);

Var rows(Var a, Eigen::Index start, Eigen::Index count);
Var vcat(const std::vector<Var>& parts);
// Repeats the column block `times` times: [a, a, ..., a].
Var tile_cols(Var a, int times);
// Repeats each column `times` times consecutively: [a0, a0, a1, a1, ...].
Var repeat_cols(Var a, int times);

// 1-D convolution over channel-major rows.
//   x: (c_in * t_in) x B, w: c_out x (c_in * kernel), b: c_out x 1
//   result: (c_out * t_out) x B with t_out = (t_in + 2 pad - kernel) / stride + 1
Var conv1d(Var x, Var w, Var b, int c_in, int t_in, int kernel, int stride, int pad);
int conv_out_len(int t_in, int kernel, int stride, int pad);

// (c * t) x B -> c x B: mean over time per channel.
Var time_mean(Var x, int channels, int t);
// c x B -> (c * t) x B: each channel held constant over t steps.
Var repeat_time(Var x, int t);

}  // namespace counts::ad
