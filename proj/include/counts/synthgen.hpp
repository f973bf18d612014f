#pragma once

// Seeded synthetic benchmarks with ground-truth exogenous variables:
//   * toy: 12 inputs, a scalar confounder u and a fixed label mask,
//   * spike: D NARMA channels with Poisson spikes and a step label sequence,
//   * pairs: two consecutive toy segments sharing one confounder.
// Every instance draws from its own stream derived from (seed, index), so the
// output is independent of generation order and thread count.

#include "counts/rng.hpp"
#include "counts/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace counts::synth {

inline constexpr int kToyLength = 12;
inline constexpr int kToyMasked = 6;

struct ToyConfig {
    int n = 2000;
    std::uint64_t seed = 0;
    double mu_x = 0.0;
    double sigma_x = 1.0;
    double mu_u = 1.0;
    double sigma_u = 0.5;

    void validate() const;
};

struct ToyInstance {
    Vector x;  // 12
    double u = 0.0;
    Vector m;  // [1 x 6, 0 x 6]
    Vector z;  // u * (m .* x)
    int y = 0;

    bool operator==(const ToyInstance& o) const;
};

// How the multiplicative term of the NARMA recurrence sums past values.
enum class NarmaInteraction {
    // Sum over x(t-i), i < l, restricted to the l seeded initial values. The
    // full window diverges under the default coefficients.
    kSeedWindow,
    // Sum over x(t-i) for i = 0..l-1.
    kWindow,
    // l * x(t-l) in place of the window sum.
    kLiteral,
};

std::string to_string(NarmaInteraction v);
NarmaInteraction narma_interaction_from_string(const std::string& s);

struct SpikeConfig {
    int n = 1000;
    std::uint64_t seed = 0;
    int T = 80;
    int D = 3;
    int order_l = 2;
    std::vector<double> alpha{0.1, 0.065, 0.003};
    std::vector<double> theta{0.8, 0.4, 0.0};
    double noise_sigma = 0.03;
    double spike_rate = 2.0;
    double spike_amp_mean = 1.0;
    double spike_amp_sigma = 0.3;
    double initial_value = 0.1;
    NarmaInteraction interaction = NarmaInteraction::kSeedWindow;

    void validate() const;
};

struct SpikeInstance {
    Matrix x;                                // D x T
    Vector y;                                // T, entries 0/1
    std::vector<int> n_mask;                 // spike existence per channel
    std::vector<int> m_mask;                 // label activeness per channel
    std::vector<std::vector<int>> spike_times;  // sorted, 1-based timestamps

    int active_count() const;
    bool operator==(const SpikeInstance& o) const;
};

struct PairConfig {
    int n = 500;
    std::uint64_t seed = 0;
    double mu_x = 0.0;
    double sigma_x = 1.0;
    double mu_u = 1.0;
    double sigma_u = 0.5;

    void validate() const;
    ToyConfig segment_config() const;
};

// Two consecutive toy segments generated with one shared confounder u.
struct PairInstance {
    ToyInstance first;
    ToyInstance second;

    bool operator==(const PairInstance& o) const { return first == o.first && second == o.second; }
};

enum class DatasetKind { kToy, kSpike, kPairs };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct Dataset {
    DatasetKind kind = DatasetKind::kToy;
    std::variant<ToyConfig, SpikeConfig, PairConfig> config;
    std::vector<ToyInstance> toy;
    std::vector<SpikeInstance> spike;
    std::vector<PairInstance> pairs;

    std::size_t size() const;
    int channels() const;
    int length() const;
    std::uint64_t seed() const;
    Task task() const;

    bool operator==(const Dataset& o) const;
};

// Label mask of the toy generator.
Vector toy_mask();

ToyInstance make_toy_instance(const ToyConfig& cfg, Rng& rng);
// sigmoid(sum(z) + u): the Bernoulli parameter the label was drawn from.
double toy_label_probability(const ToyInstance& inst);
Dataset gen_toy(const ToyConfig& cfg);

double narma_step(double x_t, double x_prev, double noise_t, double noise_lag, double alpha_d, int t);
double narma_step_with_sum(double x_t, double interaction_sum, double noise_t, double noise_lag, double alpha_d,
                           int t);
// x_1..x_T of one channel (returned 0-based) before spike injection.
Vector narma_series(const SpikeConfig& cfg, double alpha_d, Rng& rng);

// Step label: y_t = 1 for t > min over label-active channels of their first
// spike (1-based t), 0 otherwise; all-zero if no active channel has a spike.
Vector spike_label(int T, const std::vector<int>& m_mask, const std::vector<std::vector<int>>& spike_times);

Dataset gen_spike(const SpikeConfig& cfg);
Dataset gen_pairs(const PairConfig& cfg);

// Flattens a dataset into model examples. Pairs contribute both segments.
Examples to_examples(const Dataset& ds);
Example to_example(const ToyInstance& inst);
Example to_example(const SpikeInstance& inst);

// Generator parameters as stored in the manifest. `generate` requires "n" and
// "seed"; other keys default.
nlohmann::json config_to_json(const Dataset& ds);
Dataset generate(DatasetKind kind, const nlohmann::json& config);

// Dataset directory: manifest.json + data.csv.
inline constexpr int kFormatVersion = 1;
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace counts::synth
