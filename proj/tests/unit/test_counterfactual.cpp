#include "../common/gradcheck.hpp"

#include "counts/counterfactual.hpp"
#include "counts/error.hpp"
#include "counts/model.hpp"

#include <doctest.h>

#include <cmath>

using namespace counts;

namespace {

ArchConfig small_dense(Task task) {
    ArchConfig a;
    a.D = 2;
    a.T_in = 3;
    a.H_z = 3;
    a.H_l = 2;
    a.H_g = 2;
    a.hidden = 6;
    a.task = task;
    a.num_classes = task == Task::kClassification ? 2 : 0;
    return a;
}

Matrix random_x(const ArchConfig& a, std::uint64_t seed) {
    Rng rng(seed);
    return standard_normal(rng, a.D, a.T_in);
}

// p(y | u, z) fixed at [0.3, 0.7] whatever its inputs.
ModelParams constant_predictor() {
    ModelParams p(small_dense(Task::kClassification), 3);
    p.get("p_y.2.W").setZero();
    p.get("p_y.2.b") = Vector{{std::log(0.3), std::log(0.7)}};
    return p;
}

// Identity activations and an input-independent p(z | x, u) variance make the
// interventional mean an affine map of x'.
ModelParams linear_surrogate(Variant variant) {
    ArchConfig a = small_dense(Task::kSequenceRegression);
    a.D = 1;
    a.activation = Activation::kIdentity;
    a.variant = variant;
    ModelParams p = gradcheck::random_params(a, 21);
    if (variant == Variant::kCounts) p.get("p_z.2.W").bottomRows(a.z_dim()).setZero();
    return p;
}

// Columns of the affine map m(x) = A flatten(x) + c, probed exactly.
void affine_map(const std::function<Vector(const Matrix&)>& mean, const Matrix& x, Matrix& A, Vector& c) {
    const Vector base = mean(x);
    A.resize(base.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Matrix xp = x;
        xp.data()[j] += 1.0;
        A.col(j) = mean(xp) - base;
    }
    c = base - A * flatten(x);
}

double step_from_curvature(const Matrix& A, int T) {
    const Matrix H = (2.0 / T) * A.transpose() * A;
    return 1.0 / Eigen::SelfAdjointEigenSolver<Matrix>(H).eigenvalues().maxCoeff();
}

Matrix closed_form(const Matrix& A, const Vector& c, const Matrix& x, const Vector& t) {
    const Vector dx = A.completeOrthogonalDecomposition().pseudoInverse() * (t - A * flatten(x) - c);
    return unflatten(flatten(x) + dx, static_cast<int>(x.rows()), static_cast<int>(x.cols()));
}

}  // namespace

TEST_SUITE("counterfactual") {

TEST_CASE("collapsed abduction posterior gives coincident samples") {
    const ArchConfig a = small_dense(Task::kClassification);
    ModelParams p(a, 5);
    Matrix& b = p.get("q_lat.2.b");
    b.middleRows(a.ul_dim(), a.ul_dim()).setConstant(-100.0);
    b.middleRows(2 * a.ul_dim() + a.ug_dim(), a.ug_dim()).setConstant(-100.0);
    const Matrix x = random_x(a, 1);
    const auto u = abduct(p, x, predicted_encoding(p, x), 6, 9);
    REQUIRE(u.size() == 6);
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = i + 1; j < u.size(); ++j) {
            CHECK((u[i].u_l - u[j].u_l).norm() < 0.1);
            CHECK((u[i].u_g - u[j].u_g).norm() < 0.1);
        }
}

TEST_CASE("abduction is seeded and sized by m_u") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p(a, 5);
    const Matrix x = random_x(a, 2);
    const Vector y = predicted_encoding(p, x);
    const auto first = abduct(p, x, y, 4, 11), second = abduct(p, x, y, 4, 11);
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].u_l == second[i].u_l);
        CHECK(first[i].u_g == second[i].u_g);
        CHECK(first[i].u_l.rows() == a.H_l);
        CHECK(first[i].u_l.cols() == a.T_mid);
    }
    CHECK(abduct(p, x, y, 1, 11).size() == 1);
    CHECK(abduct(p, x, y, 4, 12)[0].u_g != first[0].u_g);
    CHECK_THROWS_AS(abduct(p, x, y, 0, 11), ConfigError);
    CHECK(z_noise(a, 3, 5, 1).rows() == a.z_dim());
    CHECK(z_noise(a, 3, 5, 1).cols() == 15);
}

TEST_CASE("constant predictor gives its constant interventional distribution") {
    const ModelParams p = constant_predictor();
    const ArchConfig& a = p.arch();
    const auto u = abduct(p, random_x(a, 3), predicted_encoding(p, random_x(a, 3)), 3, 4);
    const Matrix noise = z_noise(a, 3, 5, 4);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Matrix xp = 10.0 * random_x(a, 100 + s);
        const OutputDist d = interventional_y(p, xp, u[0], 5, noise.leftCols(5));
        CHECK(d.probs[0] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(d.probs[1] == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(cf_likelihood(p, xp, u, noise, CfTarget{1, {}}) == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(log_cf_likelihood(p, xp, u, noise, CfTarget{0, {}}) == doctest::Approx(std::log(0.3)).epsilon(1e-12));
    }
}

TEST_CASE("interventional likelihood is a probability with small MC spread") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p = gradcheck::random_params(a, 8);
    const Matrix x = random_x(a, 4);
    const auto u = abduct(p, x, predicted_encoding(p, x), 1, 2);
    const Matrix xp = random_x(a, 5);
    std::vector<double> values;
    for (std::uint64_t s = 0; s < 8; ++s) {
        const double v = cf_likelihood(p, xp, u, z_noise(a, 1, 1000, 50 + s), CfTarget{1, {}});
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
        values.push_back(v);
    }
    double mean = 0.0, var = 0.0;
    for (double v : values) mean += v / values.size();
    for (double v : values) var += (v - mean) * (v - mean) / (values.size() - 1);
    CHECK(std::sqrt(var) < 0.01);
}

TEST_CASE("interventional output ignores the inference networks after abduction") {
    const ArchConfig a = small_dense(Task::kSequenceRegression);
    const ModelParams p = gradcheck::random_params(a, 13);
    const Matrix x = random_x(a, 6);
    const auto u = abduct(p, x, predicted_encoding(p, x), 2, 3);
    const Matrix noise = z_noise(a, 1, 4, 3);
    ModelParams q = p;
    for (auto& t : q.tensors())
        if (t.name.starts_with("q_")) t.value.array() += 0.7;
    const Matrix xp = random_x(a, 7);
    const OutputDist before = interventional_y(p, xp, u[1], 4, noise);
    const OutputDist after = interventional_y(q, xp, u[1], 4, noise);
    CHECK(before.gauss.mean == after.gauss.mean);
    CHECK(before.gauss.log_var == after.gauss.log_var);
}

TEST_CASE("objective gradient matches finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 6; ++trial) {
        const ArchConfig a = gradcheck::random_small_arch(rng);
        const ModelParams p = gradcheck::random_params(a, 40 + trial);
        const Matrix x = standard_normal(rng, a.D, a.T_in);
        const auto obj = gradcheck::frozen_objective(p, x, gradcheck::random_target(a, rng), 2, 3, trial);
        CHECK(gradcheck::cf_input_error(obj, x + 0.1 * standard_normal(rng, a.D, a.T_in)) < fd::kTolerance);
    }
}

TEST_CASE("satisfied target stops before the first step") {
    const ModelParams p = constant_predictor();
    ExplainConfig cfg;
    cfg.epsilon = 0.5;  // -log 0.7 = 0.357
    const Matrix x = random_x(p.arch(), 8);
    const ExplanationResult r = explain(p, x, CfTarget{1, {}}, cfg);
    CHECK(r.iterations == 0);
    CHECK(r.converged);
    CHECK(r.x_cf == x);
    CHECK(r.final_discrepancy == doctest::Approx(-std::log(0.7)));
}

TEST_CASE("unreachable target runs to max_iters without converging") {
    const ModelParams p = constant_predictor();
    ExplainConfig cfg;
    cfg.epsilon = 0.1;
    cfg.max_iters = 7;
    const ExplanationResult r = explain(p, random_x(p.arch(), 9), CfTarget{0, {}}, cfg);
    CHECK(r.iterations == 7);
    CHECK_FALSE(r.converged);
}

TEST_CASE("linear surrogate converges to the least-norm closed form") {
    const ModelParams p = linear_surrogate(Variant::kCounts);
    const ArchConfig& a = p.arch();
    const Matrix x = random_x(a, 10);
    ExplainConfig cfg;
    cfg.m_u = 2;
    cfg.n_z = 2;
    cfg.seed = 6;
    cfg.epsilon = 1e-24;
    cfg.max_iters = 300000;  // the probed map has condition number near 80

    const auto u = abduct(p, x, predicted_encoding(p, x), cfg.m_u, cfg.seed);
    const CounterfactualObjective probe(p, u, z_noise(a, cfg.m_u, cfg.n_z, cfg.seed), cfg.n_z, CfTarget{});
    Matrix A;
    Vector c;
    affine_map([&](const Matrix& xp) { return probe.prediction(xp).mean(); }, x, A, c);
    const Vector t = A * flatten(random_x(a, 11)) + c;
    const Matrix expected = closed_form(A, c, x, t);
    cfg.step_size = step_from_curvature(A, a.T_in);

    double previous = INFINITY;
    bool monotone = true;
    const ExplanationResult r = explain(p, x, CfTarget{-1, t}, cfg, [&](const IterationState& s) {
        monotone = monotone && s.discrepancy <= previous + 1e-15;
        previous = s.discrepancy;
    });
    CHECK(monotone);
    CHECK((r.x_cf - expected).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("small steps never increase the discrepancy") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p = gradcheck::random_params(a, 17);
    const Matrix x = random_x(a, 12);
    ExplainConfig cfg;
    cfg.step_size = 1e-3;
    cfg.max_iters = 200;
    const int target = 1 - predict(p, x).label;
    double previous = INFINITY;
    bool monotone = true;
    explain(p, x, CfTarget{target, {}}, cfg, [&](const IterationState& s) {
        monotone = monotone && s.discrepancy <= previous + 1e-12;
        previous = s.discrepancy;
    });
    CHECK(monotone);
}

TEST_CASE("exogenous variables stay fixed during the search") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p = gradcheck::random_params(a, 19);
    const Matrix x = random_x(a, 13);
    ExplainConfig cfg;
    cfg.max_iters = 30;
    cfg.step_size = 0.1;
    std::vector<std::uint64_t> digests;
    explain(p, x, CfTarget{1 - predict(p, x).label, {}}, cfg,
            [&](const IterationState& s) { digests.push_back(s.exogenous_digest); });
    REQUIRE(digests.size() > 1);
    for (std::uint64_t d : digests) CHECK(d == digests.front());
    CHECK(digests.front() != 0);
}

TEST_CASE("explanation is deterministic and converged means below epsilon") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p = gradcheck::random_params(a, 23);
    for (std::uint64_t s = 0; s < 4; ++s) {
        const Matrix x = random_x(a, 200 + s);
        ExplainConfig cfg;
        cfg.seed = s;
        cfg.step_size = 0.2;
        cfg.max_iters = 100;
        const CfTarget t{1 - predict(p, x).label, {}};
        const ExplanationResult r1 = explain(p, x, t, cfg), r2 = explain(p, x, t, cfg);
        CHECK(r1.x_cf == r2.x_cf);
        CHECK(r1.iterations == r2.iterations);
        CHECK(r1.converged == (r1.final_discrepancy < cfg.epsilon));
        CHECK(r1.y_achieved.probs.isApprox(r2.y_achieved.probs));
    }
}

TEST_CASE("explain rejects bad inputs") {
    const ModelParams p = constant_predictor();
    const Matrix x = random_x(p.arch(), 14);
    ExplainConfig cfg;
    CHECK_THROWS_AS(explain(p, x, CfTarget{2, {}}, cfg), ShapeError);
    CHECK_THROWS_AS(explain(p, Matrix::Zero(1, 3), CfTarget{1, {}}, cfg), ShapeError);
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(explain(p, x, CfTarget{1, {}}, cfg), ConfigError);
    CHECK_THROWS_AS(explain_from_json({{"m_u", 0}}), ConfigError);
    CHECK(explain_from_json(to_json(spike_explain_config())).step_size == spike_explain_config().step_size);
}

TEST_CASE("RGD with a dominant L1 weight keeps the input") {
    const ArchConfig a = small_dense(Task::kClassification);
    ArchConfig plain = a;
    plain.variant = Variant::kPlain;
    const ModelParams p = gradcheck::random_params(plain, 29);
    const Matrix x = random_x(a, 15);
    ExplainConfig cfg;
    cfg.l1_weight = 1e6;
    cfg.max_iters = 20;
    const ExplanationResult r = rgd_explain(p, direct_predictor(), x, CfTarget{1 - predict(p, x).label, {}}, cfg);
    CHECK(r.x_cf == x);
    CHECK(r.iterations == 20);
}

TEST_CASE("RGD keeps an input that already has the target prediction") {
    ArchConfig a = small_dense(Task::kClassification);
    a.variant = Variant::kPlain;
    const ModelParams p = gradcheck::random_params(a, 31);
    const Matrix x = random_x(a, 16);
    ExplainConfig cfg;
    cfg.epsilon = std::log(2.0) + 1e-9;  // the argmax class has mass >= 1/2
    const ExplanationResult r = rgd_explain(p, direct_predictor(), x, CfTarget{predict(p, x).label, {}}, cfg);
    CHECK(r.iterations == 0);
    CHECK(r.x_cf == x);
}

TEST_CASE("RGD without L1 matches the closed form on a linear predictor") {
    const ModelParams p = linear_surrogate(Variant::kPlain);
    const ArchConfig& a = p.arch();
    const Matrix x = random_x(a, 17);
    Matrix A;
    Vector c;
    affine_map([&](const Matrix& xp) { return q_y(p, xp).mean(); }, x, A, c);
    const Vector t = A * flatten(random_x(a, 18)) + c;
    ExplainConfig cfg;
    cfg.l1_weight = 0.0;
    cfg.epsilon = 1e-24;
    cfg.max_iters = 20000;
    cfg.step_size = step_from_curvature(A, a.T_in);
    const ExplanationResult r = rgd_explain(p, direct_predictor(), x, CfTarget{-1, t}, cfg);
    CHECK((r.x_cf - closed_form(A, c, x, t)).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("descend handles the L1 anchor coordinate-wise") {
    // d(x) = (x0 - 3)^2 + (x1 - 0.01)^2 with l1 = 0.1: x1 stays at its anchor.
    const Discrepancy d = [](const Matrix& x, Matrix* g) {
        if (g) *g = Matrix{{2.0 * (x(0, 0) - 3.0), 2.0 * (x(0, 1) - 0.01)}};
        return (x(0, 0) - 3.0) * (x(0, 0) - 3.0) + (x(0, 1) - 0.01) * (x(0, 1) - 0.01);
    };
    ExplainConfig cfg;
    cfg.step_size = 0.1;
    cfg.max_iters = 300;
    cfg.epsilon = 1e-12;
    const DescentOutcome o = descend(d, Matrix::Zero(1, 2), cfg, 0.1);
    CHECK(o.x(0, 1) == 0.0);
    CHECK(o.x(0, 0) == doctest::Approx(2.95).epsilon(1e-9));
    const DescentOutcome free = descend(d, Matrix::Zero(1, 2), cfg, 0.0);
    CHECK(free.x(0, 1) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("batch explanation uses per-instance seeds") {
    const ArchConfig a = small_dense(Task::kClassification);
    const ModelParams p = gradcheck::random_params(a, 37);
    Rng rng(3);
    const Examples data = gradcheck::random_examples(a, 4, rng);
    const std::vector<std::size_t> ids{3, 1};
    const std::vector<CfTarget> targets{CfTarget{0, {}}, CfTarget{1, {}}};
    ExplainConfig cfg;
    cfg.max_iters = 20;
    cfg.seed = 5;
    const auto batch = explain_batch(p, data, ids, targets, Method::kCounts, cfg);
    REQUIRE(batch.size() == 2);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ExplainConfig c = cfg;
        c.seed = instance_seed(cfg.seed, ids[i]);
        CHECK(batch[i].x_cf == explain(p, data[ids[i]].x, targets[i], c).x_cf);
    }
    CHECK_THROWS_AS(explain_batch(p, data, {0}, targets, Method::kCounts, cfg), ShapeError);
    CHECK_THROWS_AS(explain_batch(p, data, {0, 9}, targets, Method::kCounts, cfg), ShapeError);
    ArchConfig plain = a;
    plain.variant = Variant::kPlain;
    const ModelParams pp(plain, 1);
    CHECK_THROWS_AS(explain_batch(pp, data, ids, targets, Method::kCounts, cfg), ConfigError);
    CHECK_NOTHROW(explain_batch(pp, data, ids, targets, Method::kRgd, cfg));
    CHECK_NOTHROW(explain_batch(p, data, ids, targets, Method::kRgd, cfg));
}

TEST_CASE("method names") {
    CHECK(method_from_string("counts") == Method::kCounts);
    CHECK(method_from_string("rgd") == Method::kRgd);
    CHECK(to_string(Method::kRgd) == "rgd");
    CHECK_THROWS_AS(method_from_string("gradient"), ConfigError);
    CHECK(output_discrepancy(constant_predictor().arch(), interventional_y(constant_predictor(),
                             Matrix::Zero(2, 3), LatentSample{Matrix::Zero(2, 1), Vector::Zero(2), {}}, 1,
                             Matrix::Zero(3, 1)), CfTarget{1, {}}) == doctest::Approx(-std::log(0.7)));
}

}  // TEST_SUITE
