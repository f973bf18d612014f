#pragma once

// Small discrete structural causal models over (u, x, z, y) with the edges
// u -> x, u -> z, x -> z, u -> y, z -> y. Every endogenous variable is a lookup
// of its parents and one discrete noise variable.
//
// The identification path works on the observational joint only:
//   p(y | do(x'), u) = sum_z p(z | x', u) p(y | z, u).

#include "counts/rng.hpp"

#include <vector>

namespace counts::scm {

struct Mechanism {
    std::vector<double> noise;  // distribution of the noise variable
    std::vector<int> table;     // value at (parent configuration * noise.size() + noise value)
    int operator()(int parents, int e) const { return table[static_cast<std::size_t>(parents) * noise.size() + e]; }
};

struct DiscreteScm {
    int n_u = 2, n_x = 2, n_z = 2, n_y = 2;
    std::vector<double> p_u;
    Mechanism f_x;  // parents: u
    Mechanism f_z;  // parents: x * n_u + u
    Mechanism f_y;  // parents: z * n_u + u

    void validate() const;
};

// Random model with cardinalities in [2, max_card]. Each mechanism reaches
// every value for every parent configuration, so all conditionals used by the
// identification formula are defined.
DiscreteScm random_scm(Rng& rng, int max_card = 3);

// p(u, x, z, y), computed by summing over all noise values.
class Joint {
public:
    explicit Joint(const DiscreteScm& m);

    double operator()(int u, int x, int z, int y) const { return p_[index(u, x, z, y)]; }
    int n_u() const { return n_u_; }
    int n_x() const { return n_x_; }
    int n_z() const { return n_z_; }
    int n_y() const { return n_y_; }

private:
    std::size_t index(int u, int x, int z, int y) const {
        return ((static_cast<std::size_t>(u) * n_x_ + x) * n_z_ + z) * n_y_ + y;
    }
    int n_u_, n_x_, n_z_, n_y_;
    std::vector<double> p_;
};

// sum_z p(z | x', u) p(y | z, u) from the joint, one entry per y.
// Throws ConfigError when p(x', u) or a needed p(z, u) is zero.
std::vector<double> identified_interventional(const Joint& joint, int x_prime, int u);

}  // namespace counts::scm
