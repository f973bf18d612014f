#pragma once

// Interventional distribution of a discrete SCM computed two ways: by
// intervening on the structural equations and by the identification formula.

#include "counts/scm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace counts::scm::oracle {

// Ground truth by intervention on the structural equations: fix x = x', keep u,
// and push the remaining noise through f_z and f_y.
inline std::vector<double> brute_force_interventional(const DiscreteScm& m, int x_prime, int u) {
    std::vector<double> out(static_cast<std::size_t>(m.n_y), 0.0);
    for (std::size_t ez = 0; ez < m.f_z.noise.size(); ++ez) {
        const int z = m.f_z(x_prime * m.n_u + u, static_cast<int>(ez));
        for (std::size_t ey = 0; ey < m.f_y.noise.size(); ++ey) {
            const int y = m.f_y(z * m.n_u + u, static_cast<int>(ey));
            out[y] += m.f_z.noise[ez] * m.f_y.noise[ey];
        }
    }
    return out;
}

inline double max_gap(const DiscreteScm& m) {
    const Joint joint(m);
    double gap = 0.0;
    for (int u = 0; u < m.n_u; ++u)
        for (int x = 0; x < m.n_x; ++x) {
            const auto a = identified_interventional(joint, x, u);
            const auto b = brute_force_interventional(m, x, u);
            for (int y = 0; y < m.n_y; ++y) gap = std::max(gap, std::abs(a[y] - b[y]));
        }
    return gap;
}

}  // namespace counts::scm::oracle
