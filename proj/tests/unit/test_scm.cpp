#include "../common/scm_oracle.hpp"

#include "counts/error.hpp"
#include "counts/scm.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace counts;
using namespace counts::scm;

using oracle::brute_force_interventional;
using oracle::max_gap;

TEST_SUITE("scm") {

TEST_CASE("joint sums to one") {
    Rng rng(3);
    const DiscreteScm m = random_scm(rng);
    const Joint joint(m);
    double s = 0.0;
    for (int u = 0; u < m.n_u; ++u)
        for (int x = 0; x < m.n_x; ++x)
            for (int z = 0; z < m.n_z; ++z)
                for (int y = 0; y < m.n_y; ++y) s += joint(u, x, z, y);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identification matches the structural intervention on random models") {
    Rng rng(20240601);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) worst = std::max(worst, max_gap(random_scm(rng, 3)));
    CHECK(worst <= 1e-12);
}

TEST_CASE("identification holds when x ignores u") {
    // u -> z, x -> z, u -> y, z -> y with x exogenous.
    Rng rng(11);
    for (int k = 0; k < 20; ++k) {
        DiscreteScm m = random_scm(rng, 3);
        const std::size_t ne = m.f_x.noise.size();
        for (int u = 1; u < m.n_u; ++u)
            for (std::size_t e = 0; e < ne; ++e) m.f_x.table[u * ne + e] = m.f_x.table[e];
        CHECK(max_gap(m) <= 1e-12);
    }
}

TEST_CASE("interventional distribution is normalized") {
    Rng rng(5);
    const DiscreteScm m = random_scm(rng, 4);
    const Joint joint(m);
    const auto p = identified_interventional(joint, 0, 0);
    double s = 0.0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("invalid models and queries are rejected") {
    Rng rng(1);
    DiscreteScm m = random_scm(rng);
    CHECK_THROWS_AS(identified_interventional(Joint(m), m.n_x, 0), ConfigError);
    m.p_u[0] += 0.5;
    CHECK_THROWS_AS(Joint{m}, ConfigError);
    CHECK_THROWS_AS(random_scm(rng, 1), ConfigError);
}

TEST_CASE("zero-probability conditioning set throws") {
    DiscreteScm m;
    m.p_u = {1.0, 0.0};
    m.f_x = {{1.0}, {0, 0}};
    m.f_z = {{1.0}, {0, 0, 0, 0}};
    m.f_y = {{1.0}, {0, 0, 0, 0}};
    CHECK_THROWS_AS(identified_interventional(Joint(m), 1, 0), ConfigError);
}

}  // TEST_SUITE
