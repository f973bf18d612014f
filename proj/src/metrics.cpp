#include "counts/metrics.hpp"

#include "counts/error.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace counts {

namespace {

constexpr double kDegenerate = 1e-8;

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(what) + ": shapes differ");
}

struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    std::optional<double> value() const {
        return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
    }
};

nlohmann::json number_or_null(const std::optional<double>& v) {
    return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string to_string(MseNorm n) { return n == MseNorm::kPerStep ? "per_step" : "per_instance"; }

MseNorm mse_norm_from_string(const std::string& s) {
    if (s == "per_step") return MseNorm::kPerStep;
    if (s == "per_instance") return MseNorm::kPerInstance;
    throw ConfigError("unknown MSE normalization '" + s + "'");
}

void MetricOptions::validate() const {
    if (!(eps_denom >= 0.0)) throw ConfigError("eps_denom must be >= 0");
    if (shift < 0) throw ConfigError("shift must be >= 0");
}

nlohmann::json to_json(const MetricOptions& o) {
    return nlohmann::json{{"eps_denom", o.eps_denom},
                          {"shift", o.shift},
                          {"threshold", o.threshold},
                          {"mse_norm", to_string(o.mse_norm)}};
}

MetricOptions metric_options_from_json(const nlohmann::json& j, MetricOptions o) {
    try {
        o.eps_denom = j.value("eps_denom", o.eps_denom);
        o.shift = j.value("shift", o.shift);
        o.threshold = j.value("threshold", o.threshold);
        o.mse_norm = mse_norm_from_string(j.value("mse_norm", to_string(o.mse_norm)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("metric options: ") + e.what());
    }
    o.validate();
    return o;
}

double sequence_error(const Vector& a, const Vector& b, MseNorm norm) {
    if (a.size() != b.size() || a.size() == 0) throw ShapeError("sequence lengths differ");
    const double sq = (a - b).squaredNorm();
    return norm == MseNorm::kPerStep ? sq / static_cast<double>(a.size()) : sq;
}

double prediction_metric(const std::vector<Prediction>& predictions, const Examples& test, MseNorm norm) {
    if (test.empty()) throw ConfigError("prediction metric of an empty test set");
    if (predictions.size() != test.size()) throw ShapeError("predictions and test set are misaligned");
    double total = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (predictions[i].dist.task == Task::kClassification) {
            total += predictions[i].label == test[i].label ? 1.0 : 0.0;
        } else {
            total += sequence_error(predictions[i].sequence, test[i].sequence, norm);
        }
    }
    return total / static_cast<double>(test.size());
}

double prediction_metric(const ModelParams& model, const Examples& test, MseNorm norm) {
    if (test.empty()) throw ConfigError("prediction metric of an empty test set");
    return prediction_metric(predict_batch(model, test), test, norm);
}

double counterfactual_metric(const std::vector<OutputDist>& achieved, const std::vector<CfTarget>& targets,
                             MseNorm norm) {
    if (achieved.empty()) throw ConfigError("counterfactual metric of an empty explanation set");
    if (achieved.size() != targets.size()) throw ShapeError("explanations and targets are misaligned");
    double total = 0.0;
    for (std::size_t i = 0; i < achieved.size(); ++i) {
        if (achieved[i].task == Task::kClassification) {
            total += achieved[i].argmax() == targets[i].label ? 1.0 : 0.0;
        } else {
            total += sequence_error(achieved[i].mean(), targets[i].sequence, norm);
        }
    }
    return total / static_cast<double>(achieved.size());
}

double counterfactual_metric(const std::function<OutputDist(const Matrix&)>& f, const std::vector<Matrix>& x_cf,
                             const std::vector<CfTarget>& targets, MseNorm norm) {
    if (x_cf.size() != targets.size()) throw ShapeError("explanations and targets are misaligned");
    std::vector<OutputDist> achieved;
    achieved.reserve(x_cf.size());
    for (const auto& x : x_cf) achieved.push_back(f(x));
    return counterfactual_metric(achieved, targets, norm);
}

double ccr_masked(const Matrix& x, const Matrix& x_cf, const Matrix& mask, double eps_denom) {
    check_same_shape(x, x_cf, "ccr_masked");
    check_same_shape(x, mask, "ccr_masked mask");
    if ((mask.array() != 0.0 && mask.array() != 1.0).any()) throw ConfigError("ccr mask must be binary");
    if ((mask.array() == 1.0).all() || (mask.array() == 0.0).all())
        throw ConfigError("ccr is undefined for an all-ones or all-zeros mask");
    const Eigen::ArrayXXd delta = (x - x_cf).array().abs();
    const double num = (mask.array() * delta).sum();
    const double den = ((1.0 - mask.array()) * delta).sum();
    return num / (den + eps_denom);
}

double ccr_pair(const Matrix& x1, const Matrix& x2, const Matrix& x1_cf, const Matrix& x2_cf, double eps_denom) {
    check_same_shape(x1, x2, "ccr_pair");
    check_same_shape(x1, x1_cf, "ccr_pair");
    check_same_shape(x2, x2_cf, "ccr_pair");
    return (x2 - x2_cf).cwiseAbs().sum() / ((x1 - x1_cf).cwiseAbs().sum() + eps_denom);
}

Vector spike_cf_target(const Vector& y_pred, int shift, double threshold) {
    if (shift < 0) throw ConfigError("shift must be >= 0");
    const Eigen::Index T = y_pred.size();
    Vector out = Vector::Zero(T);
    for (Eigen::Index t = shift; t < T; ++t) out[t] = y_pred[t - shift] > threshold ? 1.0 : 0.0;
    return out;
}

std::vector<CfTarget> default_targets(const synth::Dataset& ds, const std::vector<Prediction>& predictions,
                                      const std::vector<std::size_t>& ids, std::optional<int> target_class,
                                      const MetricOptions& opt) {
    if (predictions.size() != ds.size() * (ds.kind == synth::DatasetKind::kPairs ? 2 : 1))
        throw ShapeError("predictions do not cover the dataset");
    std::vector<CfTarget> out;
    out.reserve(ids.size());
    for (std::size_t id : ids) {
        if (id >= predictions.size()) throw ShapeError("instance id " + std::to_string(id) + " is out of range");
        const Prediction& p = predictions[id];
        CfTarget t;
        if (ds.kind == synth::DatasetKind::kSpike) {
            t.sequence = spike_cf_target(p.sequence, opt.shift, opt.threshold);
        } else if (ds.kind == synth::DatasetKind::kPairs && id % 2 == 0) {
            t.label = p.label;
        } else {
            const int k = static_cast<int>(p.dist.probs.size());
            if (target_class && (*target_class < 0 || *target_class >= k))
                throw ConfigError("target class " + std::to_string(*target_class) + " is out of range");
            t.label = target_class ? *target_class : (p.label + 1) % k;
        }
        out.push_back(std::move(t));
    }
    return out;
}

Matrix spike_mask(const std::vector<int>& m_mask, int T) {
    Matrix m(static_cast<Eigen::Index>(m_mask.size()), T);
    for (std::size_t d = 0; d < m_mask.size(); ++d) m.row(static_cast<Eigen::Index>(d)).setConstant(m_mask[d] ? 1.0 : 0.0);
    return m;
}

Matrix toy_mask_matrix() { return synth::toy_mask().transpose(); }

nlohmann::json MetricsReport::to_json() const {
    const bool cls = task == Task::kClassification;
    nlohmann::json j{{"task", counts::to_string(task)}};
    j[cls ? "prediction_accuracy" : "prediction_mse"] = prediction;
    j[cls ? "counterfactual_accuracy" : "counterfactual_mse"] = counterfactual;
    j["ccr"] = number_or_null(ccr);
    j["ccr_variant"] = ccr_variant;
    if (ccr_variant == "spike_masked") {
        j["ccr_1_active"] = number_or_null(ccr_1_active);
        j["ccr_2_active"] = number_or_null(ccr_2_active);
    }
    j["n_evaluated"] = n_evaluated;
    j["n_skipped_degenerate"] = n_skipped_degenerate;
    return j;
}

MetricsReport evaluate(const synth::Dataset& ds, const std::vector<Prediction>& predictions,
                       const std::vector<EvalItem>& items, const MetricOptions& opt) {
    opt.validate();
    if (items.empty()) throw ConfigError("no explanations to evaluate");
    const Examples examples = synth::to_examples(ds);
    if (predictions.size() != examples.size()) throw ShapeError("predictions do not cover the dataset");

    std::set<std::size_t> seen;
    std::vector<OutputDist> achieved;
    std::vector<CfTarget> targets;
    for (const auto& it : items) {
        if (it.id >= examples.size()) throw ShapeError("explanation id " + std::to_string(it.id) + " is out of range");
        if (!seen.insert(it.id).second) throw ShapeError("duplicate explanation id " + std::to_string(it.id));
        check_same_shape(it.x_cf, examples[it.id].x, "explanation");
        achieved.push_back(it.achieved);
        targets.push_back(it.target);
    }

    MetricsReport r;
    r.task = ds.task();
    r.prediction = prediction_metric(predictions, examples, opt.mse_norm);
    r.counterfactual = counterfactual_metric(achieved, targets, opt.mse_norm);

    Mean all, one, two;
    auto degenerate = [](const Matrix& a, const Matrix& a_cf, const Matrix& b, const Matrix& b_cf) {
        return (a - a_cf).cwiseAbs().sum() < kDegenerate && (b - b_cf).cwiseAbs().sum() < kDegenerate;
    };
    switch (ds.kind) {
        case synth::DatasetKind::kToy: {
            r.ccr_variant = "toy_masked";
            const Matrix mask = toy_mask_matrix();
            for (const auto& it : items) {
                const Matrix& x = examples[it.id].x;
                const Matrix masked_x = mask.cwiseProduct(x), masked_cf = mask.cwiseProduct(it.x_cf);
                if (degenerate(masked_x, masked_cf, x - masked_x, it.x_cf - masked_cf)) {
                    ++r.n_skipped_degenerate;
                    continue;
                }
                all.add(ccr_masked(x, it.x_cf, mask, opt.eps_denom));
            }
            break;
        }
        case synth::DatasetKind::kSpike: {
            r.ccr_variant = "spike_masked";
            for (const auto& it : items) {
                const synth::SpikeInstance& s = ds.spike[it.id];
                const int active = s.active_count();
                const Matrix mask = spike_mask(s.m_mask, static_cast<int>(s.x.cols()));
                const Matrix masked_x = mask.cwiseProduct(s.x), masked_cf = mask.cwiseProduct(it.x_cf);
                if (active == 0 || active == static_cast<int>(s.m_mask.size()) ||
                    degenerate(masked_x, masked_cf, s.x - masked_x, it.x_cf - masked_cf)) {
                    ++r.n_skipped_degenerate;
                    continue;
                }
                const double v = ccr_masked(s.x, it.x_cf, mask, opt.eps_denom);
                all.add(v);
                if (active == 1) one.add(v);
                if (active == 2) two.add(v);
            }
            r.ccr_1_active = one.value();
            r.ccr_2_active = two.value();
            break;
        }
        case synth::DatasetKind::kPairs: {
            r.ccr_variant = "pair";
            std::map<std::size_t, std::pair<const EvalItem*, const EvalItem*>> pairs;
            for (const auto& it : items) (it.id % 2 == 0 ? pairs[it.id / 2].first : pairs[it.id / 2].second) = &it;
            for (const auto& [p, seg] : pairs) {
                if (!seg.first || !seg.second) throw ShapeError("pair " + std::to_string(p) + " lacks a segment");
                const Matrix& x1 = examples[seg.first->id].x;
                const Matrix& x2 = examples[seg.second->id].x;
                if (degenerate(x1, seg.first->x_cf, x2, seg.second->x_cf)) {
                    ++r.n_skipped_degenerate;
                    continue;
                }
                all.add(ccr_pair(x1, x2, seg.first->x_cf, seg.second->x_cf, opt.eps_denom));
            }
            break;
        }
    }
    r.n_evaluated = all.n;
    r.ccr = all.value().value_or(std::numeric_limits<double>::quiet_NaN());
    return r;
}

}  // namespace counts
