#include "counts/error.hpp"
#include "counts/synthgen.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>

using namespace counts;
using namespace counts::synth;

namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Noise-free NARMA recursion of order 2 with the seed-window interaction,
// written out step by step (1-based t).
Vector noise_free_narma(int T, double alpha, double init) {
    std::vector<double> x(T + 1, init);
    for (int t = 2; t < T; ++t) {
        double s = 0.0;
        if (t <= 2) s += x[t];
        if (t - 1 <= 2) s += x[t - 1];
        x[t + 1] = 0.5 * x[t] + 0.5 * x[t] * s + 0.5 + alpha * t;
    }
    Vector out(T);
    for (int t = 1; t <= T; ++t) out[t - 1] = x[t];
    return out;
}

struct ThreadsEnv {
    explicit ThreadsEnv(const char* v) { setenv("COUNTS_THREADS", v, 1); }
    ~ThreadsEnv() { unsetenv("COUNTS_THREADS"); }
};

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("toy without noise is deterministic in x and u") {
    ToyConfig cfg;
    cfg.n = 20;
    cfg.sigma_x = cfg.sigma_u = 0.0;
    cfg.mu_x = cfg.mu_u = 1.0;
    const Dataset ds = gen_toy(cfg);
    Vector z_expected = Vector::Zero(12);
    z_expected.head(6).setOnes();
    for (const auto& inst : ds.toy) {
        CHECK(inst.x == Vector::Ones(12));
        CHECK(inst.z == z_expected);
        CHECK(toy_label_probability(inst) == doctest::Approx(0.99909).epsilon(1e-5));
        CHECK(toy_label_probability(inst) == logistic(7.0));
    }
}

TEST_CASE("toy with zero confounder has label probability one half") {
    ToyConfig cfg;
    cfg.n = 20;
    cfg.sigma_u = 0.0;
    cfg.mu_u = 0.0;
    for (const auto& inst : gen_toy(cfg).toy) {
        CHECK(inst.z.isZero());
        CHECK(toy_label_probability(inst) == 0.5);
    }
}

TEST_CASE("toy invariants") {
    ToyConfig cfg;
    cfg.n = 500;
    cfg.seed = 3;
    const Dataset ds = gen_toy(cfg);
    for (const auto& inst : ds.toy) {
        CHECK(inst.m == toy_mask());
        CHECK((inst.z - inst.u * inst.m.cwiseProduct(inst.x)).isZero(0.0));
        CHECK((inst.y == 0 || inst.y == 1));
    }
    CHECK(toy_mask().head(6) == Vector::Ones(6));
    CHECK(toy_mask().tail(6) == Vector::Zero(6));
}

TEST_CASE("toy label frequency matches the logistic probability") {
    ToyConfig cfg;
    cfg.sigma_x = cfg.sigma_u = 0.0;
    cfg.mu_x = 0.3;
    cfg.mu_u = -0.8;
    const int n = 100000;
    int ones = 0;
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
        Rng rng = derive_rng(17, 0, static_cast<std::uint64_t>(i));
        const ToyInstance inst = make_toy_instance(cfg, rng);
        p = toy_label_probability(inst);
        ones += inst.y;
    }
    CHECK(p == doctest::Approx(logistic(-0.8 * 0.3 * 6 - 0.8)));
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(static_cast<double>(ones) / n - p) < 3 * se);
}

TEST_CASE("generation is deterministic") {
    ToyConfig t;
    t.n = 50;
    t.seed = 9;
    CHECK(gen_toy(t) == gen_toy(t));
    SpikeConfig s;
    s.n = 20;
    s.seed = 9;
    CHECK(gen_spike(s) == gen_spike(s));
    PairConfig p;
    p.n = 20;
    p.seed = 9;
    CHECK(gen_pairs(p) == gen_pairs(p));
    t.seed = 10;
    CHECK_FALSE(gen_toy(t) == gen_toy(ToyConfig{50, 9}));
}

TEST_CASE("generation does not depend on the thread count") {
    SpikeConfig s;
    s.n = 40;
    s.seed = 5;
    ToyConfig t;
    t.n = 200;
    t.seed = 5;
    Dataset s1, t1;
    {
        ThreadsEnv env("1");
        s1 = gen_spike(s);
        t1 = gen_toy(t);
    }
    ThreadsEnv env("4");
    CHECK(gen_spike(s) == s1);
    CHECK(gen_toy(t) == t1);
}

TEST_CASE("narma step examples") {
    CHECK(narma_step(0.1, 0.1, 0.0, 0.0, 0.003, 2) == doctest::Approx(0.566).epsilon(1e-12));
    CHECK(narma_step(0.0, 0.7, 0.0, 0.0, 0.065, 9) == doctest::Approx(0.5 + 0.065 * 9).epsilon(1e-15));
    CHECK(narma_step(0.0, 0.0, 0.0, 0.0, 0.0, 4) == 0.5);
    // Noise enters as the product of the current and lagged draws.
    CHECK(narma_step(0.0, 0.0, 0.2, 0.5, 0.0, 4) == doctest::Approx(0.5 + 1.5 * 0.1));
}

TEST_CASE("narma interaction variants") {
    CHECK(to_string(narma_interaction_from_string("window")) == "window");
    CHECK_THROWS_AS(narma_interaction_from_string("other"), ConfigError);
    SpikeConfig cfg;
    cfg.noise_sigma = 0.0;
    Rng rng(1);
    CHECK(narma_series(cfg, 0.003, rng).isApprox(noise_free_narma(cfg.T, 0.003, 0.1), 1e-14));
}

TEST_CASE("spike label examples") {
    const Vector y = spike_label(80, {1, 0, 0}, {{30}, {10}, {}});
    for (int t = 1; t <= 80; ++t) CHECK(y[t - 1] == (t > 30 ? 1.0 : 0.0));
    CHECK(spike_label(80, {0, 1, 0}, {{5}, {}, {}}).isZero());
    CHECK(spike_label(80, {0, 0, 0}, {{5}, {7}, {}}).isZero());
    CHECK(spike_label(80, {1, 1, 0}, {{40, 60}, {12, 70}, {}})[12] == 1.0);
    CHECK(spike_label(80, {1, 1, 0}, {{40, 60}, {12, 70}, {}})[11] == 0.0);
}

TEST_CASE("spike invariants") {
    SpikeConfig cfg;
    cfg.n = 300;
    cfg.seed = 21;
    cfg.noise_sigma = 0.0;
    const Dataset ds = gen_spike(cfg);
    std::vector<Vector> raw;
    for (double a : cfg.alpha) raw.push_back(noise_free_narma(cfg.T, a, cfg.initial_value));
    int with_spikes = 0;
    for (const auto& s : ds.spike) {
        // Channel 3 never spikes and is never label-active.
        CHECK(s.n_mask[2] == 0);
        CHECK(s.m_mask[2] == 0);
        for (int d = 0; d < cfg.D; ++d) {
            const Vector delta = s.x.row(d).transpose() - raw[d];
            if (s.n_mask[d] == 0) {
                CHECK(s.spike_times[d].empty());
                CHECK(delta.isZero(1e-12));
                continue;
            }
            with_spikes += !s.spike_times[d].empty();
            CHECK(std::is_sorted(s.spike_times[d].begin(), s.spike_times[d].end()));
            // Nonzero increments exactly at the spike times.
            for (int t = 1; t <= cfg.T; ++t) {
                const bool spike = std::find(s.spike_times[d].begin(), s.spike_times[d].end(), t) !=
                                   s.spike_times[d].end();
                if (!spike) CHECK(std::abs(delta[t - 1]) < 1e-12);
            }
        }
        // y is monotone and switches one step after the earliest active spike.
        int first_one = 0;
        for (int t = 1; t < cfg.T; ++t) CHECK(s.y[t] >= s.y[t - 1]);
        for (int t = 1; t <= cfg.T && !first_one; ++t)
            if (s.y[t - 1] == 1.0) first_one = t;
        int earliest = 0;
        for (int d = 0; d < cfg.D; ++d)
            if (s.m_mask[d] == 1 && !s.spike_times[d].empty())
                earliest = earliest ? std::min(earliest, s.spike_times[d].front()) : s.spike_times[d].front();
        if (earliest && earliest < cfg.T) {
            CHECK(first_one == earliest + 1);
        } else {
            CHECK(s.y.isZero());
        }
    }
    CHECK(with_spikes > 0);
}

TEST_CASE("pairs share one confounder") {
    PairConfig cfg;
    cfg.n = 30;
    for (const auto& p : gen_pairs(cfg).pairs) {
        CHECK(p.first.u == p.second.u);
        CHECK_FALSE(p.first.x == p.second.x);
    }
    CHECK(to_examples(gen_pairs(cfg)).size() == 60);
}

TEST_CASE("invalid configurations") {
    ToyConfig t;
    t.sigma_x = -1.0;
    CHECK_THROWS_AS(gen_toy(t), ConfigError);
    t = ToyConfig{};
    t.n = 0;
    CHECK_THROWS_AS(gen_toy(t), ConfigError);
    SpikeConfig s;
    s.theta = {0.8, 1.5, 0.0};
    CHECK_THROWS_AS(gen_spike(s), ConfigError);
    s = SpikeConfig{};
    s.T = 2;
    CHECK_THROWS_AS(gen_spike(s), ConfigError);
    CHECK_THROWS_AS(dataset_kind_from_string("ecg"), ConfigError);
}

TEST_CASE("generate from json") {
    const Dataset a = generate(DatasetKind::kToy, {{"n", 10}, {"seed", 4}, {"mu_u", 0.5}});
    ToyConfig cfg;
    cfg.n = 10;
    cfg.seed = 4;
    cfg.mu_u = 0.5;
    CHECK(a == gen_toy(cfg));
    CHECK(generate(DatasetKind::kToy, config_to_json(a)) == a);
    CHECK_THROWS_AS(generate(DatasetKind::kToy, {{"n", 10}}), ConfigError);
    CHECK_THROWS_AS(generate(DatasetKind::kSpike, {{"n", "ten"}, {"seed", 1}}), ConfigError);
}

}  // TEST_SUITE
