#include "counts/synthgen.hpp"

#include "counts/error.hpp"
#include "counts/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace counts::synth {

namespace {

// Stream tags keep toy/spike/pair streams apart for the same seed.
constexpr std::uint64_t kToyStream = 0x746f79;
constexpr std::uint64_t kSpikeStream = 0x7370696b65;
constexpr std::uint64_t kPairStream = 0x70616972;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double gaussian(Rng& rng, double mean, double stddev) {
    std::normal_distribution<double> normal(0.0, 1.0);
    return mean + stddev * normal(rng);
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

void check_moments(double sigma_x, double sigma_u, int n) {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (!(sigma_x >= 0.0)) throw ConfigError("sigma_x must be >= 0");
    if (!(sigma_u >= 0.0)) throw ConfigError("sigma_u must be >= 0");
}

}  // namespace

void ToyConfig::validate() const { check_moments(sigma_x, sigma_u, n); }

void PairConfig::validate() const { check_moments(sigma_x, sigma_u, n); }

ToyConfig PairConfig::segment_config() const { return ToyConfig{n, seed, mu_x, sigma_x, mu_u, sigma_u}; }

void SpikeConfig::validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (D < 1) throw ConfigError("D must be >= 1");
    if (order_l < 1) throw ConfigError("order_l must be >= 1");
    if (T < order_l + 1) throw ConfigError("T must be >= order_l + 1");
    if (static_cast<int>(alpha.size()) != D) throw ConfigError("alpha needs one entry per channel");
    if (static_cast<int>(theta.size()) != D) throw ConfigError("theta needs one entry per channel");
    for (double th : theta)
        if (!(th >= 0.0 && th <= 1.0)) throw ConfigError("theta entries must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(spike_rate >= 0.0)) throw ConfigError("spike_rate must be >= 0");
    if (!(spike_amp_sigma >= 0.0)) throw ConfigError("spike_amp_sigma must be >= 0");
}

bool ToyInstance::operator==(const ToyInstance& o) const {
    return bit_equal(x, o.x) && u == o.u && bit_equal(m, o.m) && bit_equal(z, o.z) && y == o.y;
}

int SpikeInstance::active_count() const {
    int c = 0;
    for (int v : m_mask) c += v;
    return c;
}

bool SpikeInstance::operator==(const SpikeInstance& o) const {
    return bit_equal(x, o.x) && bit_equal(y, o.y) && n_mask == o.n_mask && m_mask == o.m_mask &&
           spike_times == o.spike_times;
}

std::string to_string(NarmaInteraction v) {
    switch (v) {
        case NarmaInteraction::kSeedWindow: return "seed_window";
        case NarmaInteraction::kWindow: return "window";
        case NarmaInteraction::kLiteral: return "literal";
    }
    return "seed_window";
}

NarmaInteraction narma_interaction_from_string(const std::string& s) {
    if (s == "seed_window") return NarmaInteraction::kSeedWindow;
    if (s == "window") return NarmaInteraction::kWindow;
    if (s == "literal") return NarmaInteraction::kLiteral;
    throw ConfigError("unknown NARMA interaction '" + s + "'");
}

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::kToy: return "toy";
        case DatasetKind::kSpike: return "spike";
        case DatasetKind::kPairs: return "pairs";
    }
    return "toy";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "toy") return DatasetKind::kToy;
    if (s == "spike") return DatasetKind::kSpike;
    if (s == "pairs") return DatasetKind::kPairs;
    throw ConfigError("unknown dataset kind '" + s + "'");
}

std::size_t Dataset::size() const {
    switch (kind) {
        case DatasetKind::kToy: return toy.size();
        case DatasetKind::kSpike: return spike.size();
        case DatasetKind::kPairs: return pairs.size();
    }
    return 0;
}

int Dataset::channels() const {
    return kind == DatasetKind::kSpike ? std::get<SpikeConfig>(config).D : 1;
}

int Dataset::length() const {
    return kind == DatasetKind::kSpike ? std::get<SpikeConfig>(config).T : kToyLength;
}

std::uint64_t Dataset::seed() const {
    return std::visit([](const auto& c) { return c.seed; }, config);
}

Task Dataset::task() const {
    return kind == DatasetKind::kSpike ? Task::kSequenceRegression : Task::kClassification;
}

bool Dataset::operator==(const Dataset& o) const {
    return kind == o.kind && toy == o.toy && spike == o.spike && pairs == o.pairs;
}

Vector toy_mask() {
    Vector m = Vector::Zero(kToyLength);
    m.head(kToyMasked).setOnes();
    return m;
}

ToyInstance make_toy_instance(const ToyConfig& cfg, Rng& rng) {
    ToyInstance inst;
    inst.x.resize(kToyLength);
    for (int j = 0; j < kToyLength; ++j) inst.x[j] = gaussian(rng, cfg.mu_x, cfg.sigma_x);
    inst.u = gaussian(rng, cfg.mu_u, cfg.sigma_u);
    inst.m = toy_mask();
    inst.z = inst.u * inst.m.cwiseProduct(inst.x);
    std::bernoulli_distribution label(toy_label_probability(inst));
    inst.y = label(rng) ? 1 : 0;
    return inst;
}

double toy_label_probability(const ToyInstance& inst) { return sigmoid(inst.z.sum() + inst.u); }

Dataset gen_toy(const ToyConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.kind = DatasetKind::kToy;
    ds.config = cfg;
    ds.toy.resize(cfg.n);
    parallel_for(cfg.n, [&](std::size_t i) {
        Rng rng = derive_rng(cfg.seed, kToyStream, i);
        ds.toy[i] = make_toy_instance(cfg, rng);
    });
    return ds;
}

double narma_step_with_sum(double x_t, double interaction_sum, double noise_t, double noise_lag, double alpha_d,
                           int t) {
    return 0.5 * x_t + 0.5 * x_t * interaction_sum + 1.5 * noise_lag * noise_t + 0.5 + alpha_d * t;
}

double narma_step(double x_t, double x_prev, double noise_t, double noise_lag, double alpha_d, int t) {
    return narma_step_with_sum(x_t, x_t + x_prev, noise_t, noise_lag, alpha_d, t);
}

Vector narma_series(const SpikeConfig& cfg, double alpha_d, Rng& rng) {
    const int T = cfg.T;
    const int l = cfg.order_l;
    // 1-based storage: x[1..T], u[1..T].
    std::vector<double> x(T + 1, cfg.initial_value);
    std::vector<double> u(T + 1, 0.0);
    for (int t = 1; t <= T; ++t) u[t] = gaussian(rng, 0.0, cfg.noise_sigma);
    auto at = [&](int idx) { return idx >= 1 ? x[idx] : cfg.initial_value; };
    for (int t = l; t < T; ++t) {
        double s = 0.0;
        switch (cfg.interaction) {
            case NarmaInteraction::kWindow:
                for (int i = 0; i < l; ++i) s += at(t - i);
                break;
            case NarmaInteraction::kSeedWindow:
                for (int i = 0; i < l; ++i)
                    if (t - i <= l) s += at(t - i);
                break;
            case NarmaInteraction::kLiteral:
                s = l * at(t - l);
                break;
        }
        const int lag = std::max(1, t - (l - 1));
        x[t + 1] = narma_step_with_sum(x[t], s, u[t], u[lag], alpha_d, t);
    }
    Vector out(T);
    for (int t = 1; t <= T; ++t) out[t - 1] = x[t];
    return out;
}

Vector spike_label(int T, const std::vector<int>& m_mask, const std::vector<std::vector<int>>& spike_times) {
    int first = std::numeric_limits<int>::max();
    for (std::size_t d = 0; d < m_mask.size(); ++d) {
        if (m_mask[d] != 1 || spike_times[d].empty()) continue;
        first = std::min(first, *std::min_element(spike_times[d].begin(), spike_times[d].end()));
    }
    Vector y = Vector::Zero(T);
    for (int t = 1; t <= T; ++t)
        if (t > first) y[t - 1] = 1.0;
    return y;
}

namespace {

SpikeInstance make_spike_instance(const SpikeConfig& cfg, Rng& rng) {
    SpikeInstance inst;
    const int D = cfg.D;
    const int T = cfg.T;
    inst.x.resize(D, T);
    inst.n_mask.assign(D, 0);
    inst.m_mask.assign(D, 0);
    inst.spike_times.assign(D, {});

    for (int d = 0; d < D; ++d) {
        inst.n_mask[d] = std::bernoulli_distribution(cfg.theta[d])(rng) ? 1 : 0;
        inst.m_mask[d] = std::bernoulli_distribution(cfg.theta[d])(rng) ? 1 : 0;
    }
    for (int d = 0; d < D; ++d) inst.x.row(d) = narma_series(cfg, cfg.alpha[d], rng).transpose();

    for (int d = 0; d < D; ++d) {
        if (inst.n_mask[d] != 1) continue;
        int count = cfg.spike_rate > 0.0 ? std::poisson_distribution<int>(cfg.spike_rate)(rng) : 0;
        count = std::min(count, T);
        // Partial Fisher-Yates over [1..T].
        std::vector<int> slots(T);
        for (int t = 0; t < T; ++t) slots[t] = t + 1;
        for (int k = 0; k < count; ++k) {
            std::uniform_int_distribution<int> pick(k, T - 1);
            std::swap(slots[k], slots[pick(rng)]);
        }
        std::vector<int> times(slots.begin(), slots.begin() + count);
        std::sort(times.begin(), times.end());
        for (int t : times) {
            const double kappa = gaussian(rng, cfg.spike_amp_mean, cfg.spike_amp_sigma);
            inst.x(d, t - 1) += kappa + cfg.theta[d];
        }
        inst.spike_times[d] = std::move(times);
    }
    inst.y = spike_label(T, inst.m_mask, inst.spike_times);
    return inst;
}

}  // namespace

Dataset gen_spike(const SpikeConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.kind = DatasetKind::kSpike;
    ds.config = cfg;
    ds.spike.resize(cfg.n);
    parallel_for(cfg.n, [&](std::size_t i) {
        Rng rng = derive_rng(cfg.seed, kSpikeStream, i);
        ds.spike[i] = make_spike_instance(cfg, rng);
    });
    return ds;
}

Dataset gen_pairs(const PairConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.kind = DatasetKind::kPairs;
    ds.config = cfg;
    ds.pairs.resize(cfg.n);
    const ToyConfig seg = cfg.segment_config();
    parallel_for(cfg.n, [&](std::size_t i) {
        Rng rng = derive_rng(cfg.seed, kPairStream, i);
        const double u = gaussian(rng, cfg.mu_u, cfg.sigma_u);
        // Segments share the confounder; only x and the label draw differ.
        ToyConfig fixed = seg;
        fixed.mu_u = u;
        fixed.sigma_u = 0.0;
        PairInstance p;
        p.first = make_toy_instance(fixed, rng);
        p.second = make_toy_instance(fixed, rng);
        ds.pairs[i] = std::move(p);
    });
    return ds;
}

Example to_example(const ToyInstance& inst) {
    Example e;
    e.x = inst.x.transpose();  // 1 x 12
    e.label = inst.y;
    return e;
}

Example to_example(const SpikeInstance& inst) {
    Example e;
    e.x = inst.x;
    e.sequence = inst.y;
    return e;
}

Examples to_examples(const Dataset& ds) {
    Examples out;
    out.reserve(ds.kind == DatasetKind::kPairs ? 2 * ds.size() : ds.size());
    switch (ds.kind) {
        case DatasetKind::kToy:
            for (const auto& i : ds.toy) out.push_back(to_example(i));
            break;
        case DatasetKind::kSpike:
            for (const auto& i : ds.spike) out.push_back(to_example(i));
            break;
        case DatasetKind::kPairs:
            for (const auto& p : ds.pairs) {
                out.push_back(to_example(p.first));
                out.push_back(to_example(p.second));
            }
            break;
    }
    return out;
}

}  // namespace counts::synth
