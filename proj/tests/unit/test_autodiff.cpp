#include "../common/fd.hpp"

#include "counts/autodiff.hpp"
#include "counts/error.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace counts;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

using Op = std::function<Var(const std::vector<Var>&)>;

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
    return m;
}

// Reduces op(inputs) with a fixed random weighting, then compares the tape
// gradient of every input with central differences.
double check_op(const Op& op, std::vector<Matrix> inputs, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    Matrix weight;
    auto value = [&](const std::vector<Matrix>& in) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& m : in) vars.push_back(tape.variable(m));
        const Var out = op(vars);
        if (weight.size() == 0) weight = random_matrix(rng, out.rows(), out.cols());
        return (out.value().array() * weight.array()).sum();
    };
    value(inputs);

    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    const Var out = op(vars);
    tape.backward(ad::sum(out * tape.constant(weight)));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = tape.grad(vars[k]);
        const Matrix numeric = fd::numeric_gradient(
            [&](const Matrix& m) {
                auto in = inputs;
                in[k] = m;
                return value(in);
            },
            inputs[k]);
        worst = std::max(worst, fd::max_relative_error(analytic, numeric));
    }
    return worst;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937_64 rng(7);
    const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
    const Matrix pos = random_matrix(rng, 3, 4, 0.5, 2.0);
    CHECK(check_op([](auto v) { return v[0] + v[1]; }, {a, b}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return v[0] - v[1]; }, {a, b}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return v[0] * v[1]; }, {a, b}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return -v[0]; }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::scale(v[0], -2.5); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::add_scalar(v[0], 3.0); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::tanh(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::identity(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::exp(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::log(v[0]); }, {pos}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::square(v[0]); }, {a}) < fd::kTolerance);
    // Entries of `a` lie inside (-1, 1); the clamp keeps some and cuts others.
    CHECK(check_op([](auto v) { return ad::clamp(v[0], -0.5, 0.5); }, {a * 0.9 + Matrix::Constant(3, 4, 0.013)}) <
          fd::kTolerance);
}

TEST_CASE("linear algebra and reductions match finite differences") {
    std::mt19937_64 rng(8);
    const Matrix a = random_matrix(rng, 3, 4), w = random_matrix(rng, 2, 3), bias = random_matrix(rng, 3, 1);
    CHECK(check_op([](auto v) { return ad::matmul(v[0], v[1]); }, {w, a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::add_bias(v[0], v[1]); }, {a, bias}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::sum(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::col_sum(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::row_mean(v[0]); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::log_softmax(v[0]); }, {a * 3.0}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::softmax(v[0]); }, {a * 3.0}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::pick(v[0], {0, 2, 1, 2}); }, {a}) < fd::kTolerance);
}

TEST_CASE("structural ops match finite differences") {
    std::mt19937_64 rng(9);
    const Matrix a = random_matrix(rng, 4, 3), b = random_matrix(rng, 2, 3);
    CHECK(check_op([](auto v) { return ad::rows(v[0], 1, 2); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::vcat({v[0], v[1], v[0]}); }, {a, b}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::tile_cols(v[0], 3); }, {a}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::repeat_cols(v[0], 2); }, {a}) < fd::kTolerance);
    // 2 channels x 6 steps.
    const Matrix series = random_matrix(rng, 12, 2);
    CHECK(check_op([](auto v) { return ad::time_mean(v[0], 2, 6); }, {series}) < fd::kTolerance);
    CHECK(check_op([](auto v) { return ad::repeat_time(v[0], 5); }, {b}) < fd::kTolerance);
}

TEST_CASE("conv1d matches finite differences") {
    std::mt19937_64 rng(10);
    const int c_in = 2, t_in = 9, k = 5, c_out = 3;
    const Matrix x = random_matrix(rng, c_in * t_in, 2);
    const Matrix w = random_matrix(rng, c_out, c_in * k), b = random_matrix(rng, c_out, 1);
    for (int stride : {1, 2})
        for (int pad : {0, 2}) {
            CAPTURE(stride);
            CAPTURE(pad);
            CHECK(check_op([&](auto v) { return ad::conv1d(v[0], v[1], v[2], c_in, t_in, k, stride, pad); },
                           {x, w, b}) < fd::kTolerance);
        }
    CHECK(ad::conv_out_len(80, 5, 2, 2) == 40);
    CHECK(ad::conv_out_len(40, 5, 2, 2) == 20);
}

TEST_CASE("conv1d computes a direct correlation") {
    Tape tape;
    // One channel, 4 steps, kernel 3, no padding: out[t] = sum_j w[j] x[t + j] + b.
    const Var x = tape.constant(Matrix{{1.0}, {2.0}, {3.0}, {4.0}});
    const Var w = tape.constant(Matrix{{1.0, 0.0, -1.0}});
    const Var b = tape.constant(Matrix{{0.5}});
    const Var out = ad::conv1d(x, w, b, 1, 4, 3, 1, 0);
    REQUIRE(out.rows() == 2);
    CHECK(out.value()(0, 0) == -1.5);
    CHECK(out.value()(1, 0) == -1.5);
}

TEST_CASE("composed expression and shared subgraphs") {
    std::mt19937_64 rng(11);
    const Matrix a = random_matrix(rng, 3, 2), w = random_matrix(rng, 3, 3);
    CHECK(check_op(
              [](auto v) {
                  const Var h = ad::tanh(ad::matmul(v[1], v[0]));
                  return ad::log_softmax(h + ad::square(h) + v[0]);
              },
              {a, w}) < fd::kTolerance);
}

TEST_CASE("gradients of unreached and constant nodes are zero") {
    Tape tape;
    const Var a = tape.variable(Matrix::Ones(2, 2));
    const Var unused = tape.variable(Matrix::Ones(3, 1));
    const Var c = tape.constant(Matrix::Ones(2, 2));
    tape.backward(ad::sum(a * c));
    CHECK(tape.grad(unused).isZero());
    CHECK(tape.grad(a).isApprox(Matrix::Ones(2, 2)));
}

TEST_CASE("shape errors") {
    Tape tape;
    const Var a = tape.variable(Matrix::Ones(2, 2));
    const Var b = tape.variable(Matrix::Ones(3, 2));
    CHECK_THROWS_AS(a + b, ShapeError);
    CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

}  // TEST_SUITE
