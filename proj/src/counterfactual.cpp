#include "counts/counterfactual.hpp"

#include "counts/error.hpp"
#include "counts/parallel.hpp"
#include "counts/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace counts {

using ad::Var;

namespace {

constexpr std::uint64_t kAbductStream = 0x616264;
constexpr std::uint64_t kZNoiseStream = 0x7a6e6f;

std::uint64_t digest_of(std::uint64_t h, const Matrix& m) {
    h = mix64(h ^ static_cast<std::uint64_t>(m.rows()) ^ (static_cast<std::uint64_t>(m.cols()) << 32));
    for (Eigen::Index i = 0; i < m.size(); ++i) h = mix64(h ^ std::bit_cast<std::uint64_t>(m.data()[i]));
    return h;
}

void check_target(const ArchConfig& a, const CfTarget& t) {
    if (a.classification()) {
        if (t.label < 0 || t.label >= a.num_classes) throw ShapeError("counterfactual class out of range");
    } else if (t.sequence.size() != a.T_in) {
        throw ShapeError("counterfactual sequence length must equal T_in");
    }
}

void check_input(const ArchConfig& a, const Matrix& x) {
    if (x.rows() != a.D || x.cols() != a.T_in) throw ShapeError("input has the wrong shape");
}

// Discrepancy graph for a raw output averaged over its columns.
Var discrepancy_graph(const ArchConfig& a, Var raw, const CfTarget& t) {
    ad::Tape& tape = *raw.tape();
    if (a.classification()) {
        Var pbar = ad::row_mean(ad::softmax(raw));
        return -ad::log(ad::pick(pbar, {t.label}));
    }
    Var mbar = ad::row_mean(ad::rows(raw, 0, a.T_in));
    Var diff = mbar - tape.constant(t.sequence);
    return ad::scale(ad::sum(ad::square(diff)), 1.0 / a.T_in);
}

OutputDist average_output(const ArchConfig& a, const Matrix& raw) {
    OutputDist out;
    out.task = a.task;
    const Eigen::Index n = raw.cols();
    if (a.classification()) {
        out.probs = Vector::Zero(a.num_classes);
        for (Eigen::Index c = 0; c < n; ++c) out.probs += net::to_output(a, raw, c).probs;
        out.probs /= static_cast<double>(n);
        return out;
    }
    // Moments of the equal-weight Gaussian mixture.
    Vector mean = Vector::Zero(a.T_in), second = Vector::Zero(a.T_in);
    for (Eigen::Index c = 0; c < n; ++c) {
        const OutputDist d = net::to_output(a, raw, c);
        const Vector m = d.gauss.mean.col(0);
        mean += m;
        second += (d.gauss.log_var.col(0).array().exp() + m.array().square()).matrix();
    }
    mean /= static_cast<double>(n);
    second /= static_cast<double>(n);
    out.gauss.mean = mean;
    out.gauss.log_var = (second - mean.cwiseAbs2()).cwiseMax(std::exp(kLogVarMin)).array().log().matrix();
    return out;
}

}  // namespace

void ExplainConfig::validate() const {
    if (m_u < 1 || n_z < 1) throw ConfigError("m_u and n_z must be >= 1");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(l1_weight >= 0.0)) throw ConfigError("l1_weight must be >= 0");
}

ExplainConfig toy_explain_config() { return ExplainConfig{}; }

ExplainConfig spike_explain_config() {
    ExplainConfig c;
    c.step_size = 1.0;
    return c;
}

nlohmann::json to_json(const ExplainConfig& c) {
    return nlohmann::json{{"m_u", c.m_u},         {"n_z", c.n_z},   {"step_size", c.step_size},
                          {"epsilon", c.epsilon}, {"max_iters", c.max_iters}, {"seed", c.seed},
                          {"l1_weight", c.l1_weight}};
}

ExplainConfig explain_from_json(const nlohmann::json& j, ExplainConfig c) {
    try {
        c.m_u = j.value("m_u", c.m_u);
        c.n_z = j.value("n_z", c.n_z);
        c.step_size = j.value("step_size", c.step_size);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.max_iters = j.value("max_iters", c.max_iters);
        c.seed = j.value("seed", c.seed);
        c.l1_weight = j.value("l1_weight", c.l1_weight);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("explain config: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t id) { return mix64(seed ^ mix64(id + 0x65786cull)); }

Vector predicted_encoding(const ModelParams& params, const Matrix& x) {
    const Prediction p = predict(params, x);
    return encode_label(params.arch(), p.label, p.sequence);
}

std::vector<LatentSample> abduct(const ModelParams& params, const Matrix& x, const Vector& y_encoded, int m_u,
                                 std::uint64_t seed) {
    if (m_u < 1) throw ConfigError("m_u must be >= 1");
    const ArchConfig& a = params.arch();
    const LatentHeads heads = q_latents(params, x, y_encoded);
    Rng rng = derive_rng(seed, kAbductStream);
    std::vector<LatentSample> out;
    out.reserve(static_cast<std::size_t>(m_u));
    for (int r = 0; r < m_u; ++r) {
        LatentSample s;
        s.u_l = reparam_sample(heads.u_l, standard_normal(rng, a.H_l, a.T_mid));
        s.u_g = reparam_sample(heads.u_g, standard_normal(rng, a.H_g, 1)).col(0);
        out.push_back(std::move(s));
    }
    return out;
}

Matrix z_noise(const ArchConfig& arch, int m_u, int n_z, std::uint64_t seed) {
    if (m_u < 1 || n_z < 1) throw ConfigError("m_u and n_z must be >= 1");
    Rng rng = derive_rng(seed, kZNoiseStream);
    return standard_normal(rng, arch.z_dim(), static_cast<Eigen::Index>(m_u) * n_z);
}

CounterfactualObjective::CounterfactualObjective(const ModelParams& params, std::vector<LatentSample> u_samples,
                                                 Matrix noise, int n_z, CfTarget target)
    : params_(&params), u_(std::move(u_samples)), noise_(std::move(noise)), n_z_(n_z), target_(std::move(target)) {
    const ArchConfig& a = params.arch();
    if (a.variant != Variant::kCounts) throw ConfigError("counterfactual search needs a CounTS model");
    if (u_.empty()) throw ConfigError("at least one abducted sample is required");
    if (n_z < 1) throw ConfigError("n_z must be >= 1");
    const Eigen::Index cols = static_cast<Eigen::Index>(u_.size()) * n_z;
    if (noise_.rows() != a.z_dim() || noise_.cols() != cols)
        throw ShapeError("z noise must be z_dim x (m_u * n_z)");
    ul_cols_.resize(a.ul_dim(), cols);
    ug_cols_.resize(a.ug_dim(), cols);
    for (std::size_t r = 0; r < u_.size(); ++r) {
        if (u_[r].u_l.rows() != a.H_l || u_[r].u_l.cols() != a.T_mid || u_[r].u_g.size() != a.H_g)
            throw ShapeError("abducted sample has the wrong shape");
        const Vector ul = flatten(u_[r].u_l);
        for (int s = 0; s < n_z; ++s) {
            ul_cols_.col(static_cast<Eigen::Index>(r) * n_z + s) = ul;
            ug_cols_.col(static_cast<Eigen::Index>(r) * n_z + s) = u_[r].u_g;
        }
    }
}

Var CounterfactualObjective::raw_output(ad::Tape& tape, Var x_flat) const {
    net::Bound b(tape, *params_, false);
    Var ul = tape.constant(ul_cols_);
    Var ug = tape.constant(ug_cols_);
    net::Head pz = net::p_z(b, x_flat, ul, ug);
    Var z = net::sample(pz, tape.constant(noise_));
    return net::p_y_raw(b, ul, ug, z);
}

double CounterfactualObjective::evaluate(const Matrix& x_prime, Matrix* grad) const {
    const ArchConfig& a = params_->arch();
    check_input(a, x_prime);
    check_target(a, target_);
    ad::Tape tape;
    Var x = grad ? tape.variable(flatten(x_prime)) : tape.constant(flatten(x_prime));
    Var d = discrepancy_graph(a, raw_output(tape, x), target_);
    if (grad) {
        tape.backward(d);
        *grad = unflatten(tape.grad(x).col(0), a.D, a.T_in);
    }
    return d.value()(0, 0);
}

OutputDist CounterfactualObjective::prediction(const Matrix& x_prime) const {
    const ArchConfig& a = params_->arch();
    check_input(a, x_prime);
    ad::Tape tape;
    return average_output(a, raw_output(tape, tape.constant(flatten(x_prime))).value());
}

double CounterfactualObjective::log_likelihood(const Matrix& x_prime) const {
    const ArchConfig& a = params_->arch();
    check_input(a, x_prime);
    check_target(a, target_);
    ad::Tape tape;
    const Matrix raw = raw_output(tape, tape.constant(flatten(x_prime))).value();
    if (a.classification()) return std::log(average_output(a, raw).probs[target_.label]);
    Vector logs(raw.cols());
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const OutputDist d = net::to_output(a, raw, c);
        const Vector m = d.gauss.mean.col(0), lv = d.gauss.log_var.col(0);
        logs[c] = -0.5 * (std::log(2.0 * std::numbers::pi) + lv.array() +
                          (target_.sequence - m).array().square() * (-lv.array()).exp())
                             .sum();
    }
    const double top = logs.maxCoeff();
    return top + std::log((logs.array() - top).exp().mean());
}

double CounterfactualObjective::likelihood(const Matrix& x_prime) const { return std::exp(log_likelihood(x_prime)); }

std::uint64_t CounterfactualObjective::exogenous_digest() const {
    std::uint64_t h = 0x65786f67ull;
    for (const auto& s : u_) {
        h = digest_of(h, s.u_l);
        h = digest_of(h, s.u_g);
    }
    return digest_of(h, noise_);
}

OutputDist interventional_y(const ModelParams& params, const Matrix& x_prime, const LatentSample& u, int n_z,
                            const Matrix& noise) {
    return CounterfactualObjective(params, {u}, noise, n_z, CfTarget{}).prediction(x_prime);
}

double cf_likelihood(const ModelParams& params, const Matrix& x_prime, const std::vector<LatentSample>& u_samples,
                     const Matrix& noise, const CfTarget& y_cf) {
    const int n_z = u_samples.empty() ? 1 : static_cast<int>(noise.cols() / static_cast<Eigen::Index>(u_samples.size()));
    return CounterfactualObjective(params, u_samples, noise, n_z, y_cf).likelihood(x_prime);
}

double log_cf_likelihood(const ModelParams& params, const Matrix& x_prime,
                         const std::vector<LatentSample>& u_samples, const Matrix& noise, const CfTarget& y_cf) {
    const int n_z = u_samples.empty() ? 1 : static_cast<int>(noise.cols() / static_cast<Eigen::Index>(u_samples.size()));
    return CounterfactualObjective(params, u_samples, noise, n_z, y_cf).log_likelihood(x_prime);
}

DescentOutcome descend(const Discrepancy& d, const Matrix& x0, const ExplainConfig& cfg, double l1_weight,
                       const std::function<void(int, const Matrix&, double)>& observer) {
    cfg.validate();
    DescentOutcome out{x0, 0, 0.0, false};
    Matrix g;
    out.discrepancy = d(out.x, &g);
    for (;;) {
        if (!std::isfinite(out.discrepancy)) throw NumericError("non-finite discrepancy during explanation");
        if (observer) observer(out.iterations, out.x, out.discrepancy);
        if (out.discrepancy < cfg.epsilon) {
            out.converged = true;
            break;
        }
        if (out.iterations >= cfg.max_iters) break;
        if (!g.allFinite())
            throw NumericError("non-finite gradient at explanation iteration " + std::to_string(out.iterations));
        if (l1_weight > 0.0) {
            for (Eigen::Index i = 0; i < out.x.size(); ++i) {
                double& xi = out.x.data()[i];
                const double anchor = x0.data()[i];
                const double gi = g.data()[i];
                const double delta = xi - anchor;
                if (delta == 0.0) {
                    if (std::abs(gi) > l1_weight) xi -= cfg.step_size * (gi - std::copysign(l1_weight, gi));
                } else {
                    const double next = xi - cfg.step_size * (gi + std::copysign(l1_weight, delta));
                    xi = (next - anchor) * delta < 0.0 ? anchor : next;
                }
            }
        } else {
            out.x -= cfg.step_size * g;
        }
        ++out.iterations;
        out.discrepancy = d(out.x, &g);
    }
    return out;
}

ExplanationResult explain(const ModelParams& params, const Matrix& x, const CfTarget& y_cf, const ExplainConfig& cfg,
                          const IterationObserver& observer) {
    cfg.validate();
    const ArchConfig& a = params.arch();
    check_input(a, x);
    check_target(a, y_cf);
    std::vector<LatentSample> u = abduct(params, x, predicted_encoding(params, x), cfg.m_u, cfg.seed);
    const CounterfactualObjective obj(params, std::move(u), z_noise(a, cfg.m_u, cfg.n_z, cfg.seed), cfg.n_z, y_cf);
    const DescentOutcome o = descend(
        [&](const Matrix& xp, Matrix* g) { return obj.evaluate(xp, g); }, x, cfg, 0.0,
        [&](int it, const Matrix& xp, double d) {
            if (observer) observer(IterationState{it, xp, d, obj.exogenous_digest()});
        });
    return ExplanationResult{o.x, y_cf, obj.prediction(o.x), o.iterations, o.discrepancy, o.converged};
}

GraphPredictor direct_predictor() {
    return [](const net::Bound& b, Var x) { return net::q_y_raw(b, x); };
}

GraphPredictor mean_path_predictor() {
    return [](const net::Bound& b, Var x) {
        const ArchConfig& a = b.arch();
        Var raw = net::q_y_raw(b, x);
        Var enc;
        if (a.classification()) {
            Matrix onehot = Matrix::Zero(a.num_classes, raw.cols());
            for (Eigen::Index c = 0; c < raw.cols(); ++c) {
                Eigen::Index k = 0;
                raw.value().col(c).maxCoeff(&k);
                onehot(k, c) = 1.0;
            }
            enc = b.tape().constant(std::move(onehot));
        } else {
            enc = ad::rows(raw, 0, a.T_in);
        }
        net::Latents l = net::q_latents(b, x, enc);
        return net::p_y_raw(b, l.u_l.mean, l.u_g.mean, l.z.mean);
    };
}

ExplanationResult rgd_explain(const ModelParams& params, const GraphPredictor& f, const Matrix& x,
                              const CfTarget& y_cf, const ExplainConfig& cfg, const IterationObserver& observer) {
    cfg.validate();
    const ArchConfig& a = params.arch();
    check_input(a, x);
    check_target(a, y_cf);
    auto d = [&](const Matrix& xp, Matrix* g) {
        ad::Tape tape;
        net::Bound b(tape, params, false);
        Var xv = g ? tape.variable(flatten(xp)) : tape.constant(flatten(xp));
        Var dv = discrepancy_graph(a, f(b, xv), y_cf);
        if (g) {
            tape.backward(dv);
            *g = unflatten(tape.grad(xv).col(0), a.D, a.T_in);
        }
        return dv.value()(0, 0);
    };
    const DescentOutcome o = descend(d, x, cfg, cfg.l1_weight, [&](int it, const Matrix& xp, double dv) {
        if (observer) observer(IterationState{it, xp, dv, 0});
    });
    ad::Tape tape;
    net::Bound b(tape, params, false);
    const OutputDist achieved = net::to_output(a, f(b, tape.constant(flatten(o.x))).value(), 0);
    return ExplanationResult{o.x, y_cf, achieved, o.iterations, o.discrepancy, o.converged};
}

double output_discrepancy(const ArchConfig& a, const OutputDist& out, const CfTarget& t) {
    check_target(a, t);
    if (a.classification()) return -std::log(out.probs[t.label]);
    return (out.mean() - t.sequence).squaredNorm() / a.T_in;
}

std::string to_string(Method m) { return m == Method::kCounts ? "counts" : "rgd"; }

Method method_from_string(const std::string& s) {
    if (s == "counts") return Method::kCounts;
    if (s == "rgd") return Method::kRgd;
    throw ConfigError("unknown explanation method '" + s + "'");
}

std::vector<ExplanationResult> explain_batch(const ModelParams& params, const Examples& data,
                                             const std::vector<std::size_t>& ids,
                                             const std::vector<CfTarget>& targets, Method method,
                                             const ExplainConfig& cfg) {
    cfg.validate();
    if (ids.size() != targets.size()) throw ShapeError("ids and targets are misaligned");
    for (std::size_t id : ids)
        if (id >= data.size()) throw ShapeError("instance id " + std::to_string(id) + " is out of range");
    if (method == Method::kCounts && params.arch().variant != Variant::kCounts)
        throw ConfigError("the counts method needs a CounTS model, not a plain predictor");
    const GraphPredictor f =
        params.arch().variant == Variant::kPlain ? direct_predictor() : mean_path_predictor();

    std::vector<ExplanationResult> out(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
        ExplainConfig c = cfg;
        c.seed = instance_seed(cfg.seed, ids[i]);
        const Matrix& x = data[ids[i]].x;
        out[i] = method == Method::kCounts ? explain(params, x, targets[i], c) : rgd_explain(params, f, x, targets[i], c);
    });
    return out;
}

}  // namespace counts
