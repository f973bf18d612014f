#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace counts {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent, order-free streams.
std::uint64_t mix64(std::uint64_t x);

// Stream for (seed, a, b). Generation code keys instances by index so that the
// output does not depend on iteration order or thread count.
Rng derive_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace counts
