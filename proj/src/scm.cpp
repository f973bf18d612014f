#include "counts/scm.hpp"

#include "counts/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace counts::scm {

namespace {

std::vector<double> random_simplex(Rng& rng, int n) {
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    std::vector<double> p(static_cast<std::size_t>(n));
    for (auto& v : p) v = uni(rng);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= s;
    return p;
}

// For each parent configuration, the first `card` noise values are a random
// permutation of all outputs; the rest map anywhere.
Mechanism random_mechanism(Rng& rng, int parents, int card) {
    std::uniform_int_distribution<int> extra(0, 2);
    const int n_noise = card + extra(rng);
    Mechanism m{random_simplex(rng, n_noise), {}};
    std::uniform_int_distribution<int> any(0, card - 1);
    for (int p = 0; p < parents; ++p) {
        std::vector<int> row(static_cast<std::size_t>(n_noise));
        std::iota(row.begin(), row.begin() + card, 0);
        std::shuffle(row.begin(), row.begin() + card, rng);
        for (int e = card; e < n_noise; ++e) row[static_cast<std::size_t>(e)] = any(rng);
        m.table.insert(m.table.end(), row.begin(), row.end());
    }
    return m;
}

void check_mechanism(const Mechanism& m, int parents, int card, const char* what) {
    if (m.noise.empty() || m.table.size() != static_cast<std::size_t>(parents) * m.noise.size())
        throw ShapeError(std::string(what) + ": table size does not match parents x noise");
    double s = 0.0;
    for (double p : m.noise) {
        if (!(p >= 0.0)) throw ConfigError(std::string(what) + ": negative noise probability");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError(std::string(what) + ": noise probabilities do not sum to 1");
    for (int v : m.table)
        if (v < 0 || v >= card) throw ConfigError(std::string(what) + ": value out of range");
}

}  // namespace

void DiscreteScm::validate() const {
    for (int c : {n_u, n_x, n_z, n_y})
        if (c < 1) throw ConfigError("cardinalities must be >= 1");
    if (p_u.size() != static_cast<std::size_t>(n_u)) throw ShapeError("p_u has the wrong length");
    double s = 0.0;
    for (double p : p_u) {
        if (!(p >= 0.0)) throw ConfigError("negative p_u entry");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("p_u does not sum to 1");
    check_mechanism(f_x, n_u, n_x, "f_x");
    check_mechanism(f_z, n_x * n_u, n_z, "f_z");
    check_mechanism(f_y, n_z * n_u, n_y, "f_y");
}

DiscreteScm random_scm(Rng& rng, int max_card) {
    if (max_card < 2) throw ConfigError("max_card must be >= 2");
    std::uniform_int_distribution<int> card(2, max_card);
    DiscreteScm m;
    m.n_u = card(rng);
    m.n_x = card(rng);
    m.n_z = card(rng);
    m.n_y = card(rng);
    m.p_u = random_simplex(rng, m.n_u);
    m.f_x = random_mechanism(rng, m.n_u, m.n_x);
    m.f_z = random_mechanism(rng, m.n_x * m.n_u, m.n_z);
    m.f_y = random_mechanism(rng, m.n_z * m.n_u, m.n_y);
    return m;
}

Joint::Joint(const DiscreteScm& m) : n_u_(m.n_u), n_x_(m.n_x), n_z_(m.n_z), n_y_(m.n_y) {
    m.validate();
    p_.assign(static_cast<std::size_t>(n_u_ * n_x_ * n_z_ * n_y_), 0.0);
    const int nex = static_cast<int>(m.f_x.noise.size());
    const int nez = static_cast<int>(m.f_z.noise.size());
    const int ney = static_cast<int>(m.f_y.noise.size());
    for (int u = 0; u < n_u_; ++u)
        for (int ex = 0; ex < nex; ++ex) {
            const int x = m.f_x(u, ex);
            for (int ez = 0; ez < nez; ++ez) {
                const int z = m.f_z(x * n_u_ + u, ez);
                for (int ey = 0; ey < ney; ++ey) {
                    const int y = m.f_y(z * n_u_ + u, ey);
                    p_[index(u, x, z, y)] += m.p_u[u] * m.f_x.noise[ex] * m.f_z.noise[ez] * m.f_y.noise[ey];
                }
            }
        }
}

std::vector<double> identified_interventional(const Joint& joint, int x_prime, int u) {
    if (x_prime < 0 || x_prime >= joint.n_x() || u < 0 || u >= joint.n_u())
        throw ConfigError("x' or u out of range");
    std::vector<double> p_z_given(static_cast<std::size_t>(joint.n_z()), 0.0);
    double p_xu = 0.0;
    for (int z = 0; z < joint.n_z(); ++z)
        for (int y = 0; y < joint.n_y(); ++y) {
            p_z_given[z] += joint(u, x_prime, z, y);
            p_xu += joint(u, x_prime, z, y);
        }
    if (!(p_xu > 0.0)) throw ConfigError("p(x', u) is zero; the conditional is undefined");

    std::vector<double> out(static_cast<std::size_t>(joint.n_y()), 0.0);
    for (int z = 0; z < joint.n_z(); ++z) {
        const double w = p_z_given[z] / p_xu;
        if (w == 0.0) continue;
        std::vector<double> p_zy(static_cast<std::size_t>(joint.n_y()), 0.0);
        double p_zu = 0.0;
        for (int x = 0; x < joint.n_x(); ++x)
            for (int y = 0; y < joint.n_y(); ++y) {
                p_zy[y] += joint(u, x, z, y);
                p_zu += joint(u, x, z, y);
            }
        if (!(p_zu > 0.0)) throw ConfigError("p(z, u) is zero; the conditional is undefined");
        for (int y = 0; y < joint.n_y(); ++y) out[y] += w * p_zy[y] / p_zu;
    }
    return out;
}

}  // namespace counts::scm
