#include "counts/objective.hpp"

#include "counts/error.hpp"
#include "counts/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace counts {

using ad::Var;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

std::uint64_t content_key(const Matrix& x, Eigen::Index col) {
    std::uint64_t h = 0x636f6e74656e74ull;
    for (Eigen::Index r = 0; r < x.rows(); ++r) h = mix64(h ^ std::bit_cast<std::uint64_t>(x(r, col)));
    return h;
}

int label_replicates(const ArchConfig& a, const McConfig& mc) { return a.classification() ? a.num_classes : mc.n_y; }

}  // namespace

void McConfig::validate() const {
    if (n_y < 1 || n_u < 1 || n_z < 1) throw ConfigError("Monte-Carlo sample counts must be >= 1");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(lambda_sup >= 0.0)) throw ConfigError("lambda_sup must be >= 0");
    if (kl_warmup_epochs < 0) throw ConfigError("kl_warmup_epochs must be >= 0");
    mc.validate();
}

double TrainConfig::kl_weight(int epoch) const {
    if (kl_warmup_epochs == 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(kl_warmup_epochs + 1));
}

nlohmann::json to_json(const McConfig& c) {
    return nlohmann::json{{"n_y", c.n_y}, {"n_u", c.n_u}, {"n_z", c.n_z}, {"seed", c.seed}};
}

nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"learning_rate", c.learning_rate},
                          {"lambda_sup", c.lambda_sup},
                          {"mc", to_json(c.mc)},
                          {"seed", c.seed},
                          {"kl_warmup_epochs", c.kl_warmup_epochs}};
}

McConfig mc_from_json(const nlohmann::json& j, McConfig c) {
    try {
        c.n_y = j.value("n_y", c.n_y);
        c.n_u = j.value("n_u", c.n_u);
        c.n_z = j.value("n_z", c.n_z);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mc config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.lambda_sup = j.value("lambda_sup", c.lambda_sup);
        c.seed = j.value("seed", c.seed);
        c.kl_warmup_epochs = j.value("kl_warmup_epochs", c.kl_warmup_epochs);
        if (j.contains("mc")) c.mc = mc_from_json(j.at("mc"), c.mc);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double gaussian_kl(const GaussianHead& a, const GaussianHead& b) {
    a.validate();
    b.validate();
    if (a.mean.rows() != b.mean.rows() || a.mean.cols() != b.mean.cols())
        throw ShapeError("gaussian_kl: head shapes differ");
    const auto va = a.log_var.array().exp();
    const auto vb = b.log_var.array().exp();
    const auto diff = (a.mean - b.mean).array();
    return 0.5 * ((b.log_var - a.log_var).array() + (va + diff.square()) / vb - 1.0).sum();
}

double categorical_entropy(const Vector& probs) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k)
        if (probs[k] > 0.0) h -= probs[k] * std::log(probs[k]);
    return h;
}

double gaussian_entropy(const GaussianHead& h) {
    return 0.5 * (h.log_var.array() + kLog2Pi + 1.0).sum();
}

double gaussian_log_density(const Vector& y, const GaussianHead& h) {
    if (y.size() != h.mean.size()) throw ShapeError("density: value and head sizes differ");
    const Vector m = h.mean.reshaped();
    const Vector lv = h.log_var.reshaped();
    return -0.5 * (kLog2Pi + lv.array() + (y - m).array().square() * (-lv.array()).exp()).sum();
}

McNoise draw_noise(const ArchConfig& a, const McConfig& mc, const Matrix& x_flat, std::uint64_t salt) {
    mc.validate();
    const Eigen::Index B = x_flat.cols();
    const int Y = label_replicates(a, mc);
    McNoise n;
    if (!a.classification()) n.y.resize(a.T_in, mc.n_y * B);
    n.u_l.resize(a.ul_dim(), static_cast<Eigen::Index>(mc.n_u) * Y * B);
    n.u_g.resize(a.ug_dim(), static_cast<Eigen::Index>(mc.n_u) * Y * B);
    n.z.resize(a.z_dim(), static_cast<Eigen::Index>(mc.n_z) * mc.n_u * Y * B);
    for (Eigen::Index i = 0; i < B; ++i) {
        Rng rng = derive_rng(mc.seed, content_key(x_flat, i), salt);
        if (!a.classification())
            for (int k = 0; k < mc.n_y; ++k) n.y.col(k * B + i) = standard_normal(rng, a.T_in, 1);
        for (int r = 0; r < mc.n_u; ++r)
            for (int k = 0; k < Y; ++k) {
                const Eigen::Index c = (static_cast<Eigen::Index>(r) * Y + k) * B + i;
                n.u_l.col(c) = standard_normal(rng, a.ul_dim(), 1);
                n.u_g.col(c) = standard_normal(rng, a.ug_dim(), 1);
            }
        for (int s = 0; s < mc.n_z; ++s)
            for (int r = 0; r < mc.n_u; ++r)
                for (int k = 0; k < Y; ++k) {
                    const Eigen::Index c = ((static_cast<Eigen::Index>(s) * mc.n_u + r) * Y + k) * B + i;
                    n.z.col(c) = standard_normal(rng, a.z_dim(), 1);
                }
    }
    return n;
}

Matrix inputs_of(const Examples& batch, std::size_t begin, std::size_t end) {
    if (begin >= end || end > batch.size()) throw ConfigError("empty or out-of-range batch");
    Matrix x(batch[begin].x.size(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
        if (batch[i].x.size() != x.rows()) throw ShapeError("batch inputs differ in shape");
        x.col(static_cast<Eigen::Index>(i - begin)) = flatten(batch[i].x);
    }
    return x;
}

Labels labels_of(const ArchConfig& a, const Examples& batch, std::size_t begin, std::size_t end) {
    Labels l;
    if (a.classification()) {
        for (std::size_t i = begin; i < end; ++i) {
            if (batch[i].label < 0 || batch[i].label >= a.num_classes) throw ShapeError("class label out of range");
            l.classes.push_back(batch[i].label);
        }
    } else {
        l.sequences.resize(a.T_in, static_cast<Eigen::Index>(end - begin));
        for (std::size_t i = begin; i < end; ++i) {
            if (batch[i].sequence.size() != a.T_in) throw ShapeError("label sequence length must equal T_in");
            l.sequences.col(static_cast<Eigen::Index>(i - begin)) = batch[i].sequence;
        }
    }
    return l;
}

namespace net {

namespace {

// 1 x (R*N) -> 1 x N: mean over R column blocks laid out as [block_0, block_1, ...].
Var block_mean(Var row, int blocks) {
    if (blocks == 1) return row;
    const Eigen::Index n = row.cols() / blocks;
    Matrix avg = Matrix::Zero(row.cols(), n);
    for (int r = 0; r < blocks; ++r)
        for (Eigen::Index i = 0; i < n; ++i) avg(r * n + i, i) = 1.0 / blocks;
    return ad::matmul(row, row.tape()->constant(std::move(avg)));
}

Head tile(const Head& h, int times) { return Head{ad::tile_cols(h.mean, times), ad::tile_cols(h.log_var, times)}; }

Var log_density(const Head& h, Var y) {
    Var sq = ad::square(y - h.mean) * ad::exp(-h.log_var);
    return ad::scale(ad::add_scalar(ad::col_sum(h.log_var + sq), kLog2Pi * static_cast<double>(y.rows())), -0.5);
}

Var batch_mean(Var row) { return ad::scale(ad::sum(row), 1.0 / static_cast<double>(row.cols())); }

}  // namespace

Var gaussian_kl(const Head& a, const Head& b) {
    Var ratio = ad::exp(a.log_var - b.log_var) + ad::square(a.mean - b.mean) * ad::exp(-b.log_var);
    return ad::scale(ad::add_scalar(ad::col_sum(b.log_var - a.log_var + ratio), -static_cast<double>(a.mean.rows())),
                     0.5);
}

Var kl_to_standard(const Head& a) {
    Var terms = ad::exp(a.log_var) + ad::square(a.mean) - a.log_var;
    return ad::scale(ad::add_scalar(ad::col_sum(terms), -static_cast<double>(a.mean.rows())), 0.5);
}

LossGraph build_loss(const Bound& b, Var x, const Labels& labels, double lambda_sup, const McConfig& mc,
                     const McNoise& noise, double kl_weight) {
    const ArchConfig& a = b.arch();
    ad::Tape& tape = b.tape();
    const Eigen::Index B = x.cols();
    const Var zero = tape.constant(Matrix::Zero(1, 1));

    Var raw_qy = q_y_raw(b, x);
    Var lsm, qy_head_mean, qy_head_lv;
    Var l_y = zero;
    const bool has_labels = !labels.classes.empty() || labels.sequences.size() > 0;
    if (a.classification()) {
        lsm = ad::log_softmax(raw_qy);
        if (has_labels) {
            if (static_cast<Eigen::Index>(labels.classes.size()) != B) throw ShapeError("label count != batch size");
            l_y = batch_mean(ad::pick(lsm, labels.classes));
        }
    } else if (has_labels) {
        if (labels.sequences.cols() != B) throw ShapeError("label count != batch size");
        l_y = batch_mean(log_density(split_head(raw_qy), tape.constant(labels.sequences)));
    }
    if (a.variant == Variant::kPlain) return LossGraph{zero, zero, zero, zero, l_y, -l_y};

    const int Y = label_replicates(a, mc);
    Var enc, weight, entropy;
    std::vector<int> col_class;
    if (a.classification()) {
        const int K = a.num_classes;
        Matrix onehot = Matrix::Zero(K, K * B);
        std::vector<int> block_class(static_cast<std::size_t>(K * B));
        for (int k = 0; k < K; ++k)
            for (Eigen::Index i = 0; i < B; ++i) {
                onehot(k, k * B + i) = 1.0;
                block_class[static_cast<std::size_t>(k * B + i)] = k;
            }
        enc = tape.constant(std::move(onehot));
        Var probs = ad::exp(lsm);
        weight = ad::pick(ad::tile_cols(probs, K), block_class);
        entropy = -ad::col_sum(probs * lsm);
        const Eigen::Index cols = static_cast<Eigen::Index>(mc.n_z) * mc.n_u * K * B;
        col_class.resize(static_cast<std::size_t>(cols));
        for (Eigen::Index c = 0; c < cols; ++c) col_class[static_cast<std::size_t>(c)] = static_cast<int>((c / B) % K);
    } else {
        Head h = split_head(raw_qy);
        if (noise.y.rows() != a.T_in || noise.y.cols() != mc.n_y * B) throw ShapeError("y noise has the wrong shape");
        enc = sample(tile(h, mc.n_y), tape.constant(noise.y));
        weight = tape.constant(Matrix::Constant(1, mc.n_y * B, 1.0 / mc.n_y));
        entropy = ad::scale(ad::add_scalar(ad::col_sum(h.log_var), (kLog2Pi + 1.0) * a.T_in), 0.5);
    }

    Latents lat = q_latents(b, ad::tile_cols(x, Y), enc);
    Var kl_u = kl_to_standard(lat.u_l) + kl_to_standard(lat.u_g);

    const Eigen::Index u_cols = static_cast<Eigen::Index>(mc.n_u) * Y * B;
    if (noise.u_l.cols() != u_cols || noise.u_g.cols() != u_cols || noise.u_l.rows() != a.ul_dim() ||
        noise.u_g.rows() != a.ug_dim())
        throw ShapeError("u noise has the wrong shape");
    if (noise.z.cols() != mc.n_z * u_cols || noise.z.rows() != a.z_dim()) throw ShapeError("z noise has the wrong shape");
    Var ul = sample(tile(lat.u_l, mc.n_u), tape.constant(noise.u_l));
    Var ug = sample(tile(lat.u_g, mc.n_u), tape.constant(noise.u_g));
    Head pz = p_z(b, ad::tile_cols(x, Y * mc.n_u), ul, ug);
    Head qz = tile(lat.z, mc.n_u);
    Var kl_z = gaussian_kl(qz, pz);

    Var z = sample(tile(qz, mc.n_z), tape.constant(noise.z));
    Var raw_py = p_y_raw(b, ad::tile_cols(ul, mc.n_z), ad::tile_cols(ug, mc.n_z), z);
    Var recon = a.classification() ? ad::pick(ad::log_softmax(raw_py), col_class)
                                   : log_density(split_head(raw_py), ad::tile_cols(enc, mc.n_u * mc.n_z));

    // Per (y replicate, instance), then weighted by q(y | x) and summed over replicates.
    auto reduce = [&](Var per_y) { return ad::scale(block_mean(weight * per_y, Y), static_cast<double>(Y)); };
    Var recon_i = reduce(block_mean(recon, mc.n_u * mc.n_z));
    Var kl_z_i = reduce(block_mean(kl_z, mc.n_u));
    Var kl_u_i = reduce(kl_u);

    LossGraph g{batch_mean(recon_i), batch_mean(kl_z_i), batch_mean(kl_u_i), batch_mean(entropy), l_y, zero};
    Var elbo = g.recon - ad::scale(g.kl_z + g.kl_u, kl_weight) + g.ent_y;
    g.total = -elbo - ad::scale(l_y, lambda_sup);
    return g;
}

}  // namespace net

namespace {

LossBreakdown values(const net::LossGraph& g) {
    auto v = [](Var s) { return s.value()(0, 0); };
    return LossBreakdown{v(g.recon), v(g.kl_z), v(g.kl_u), v(g.ent_y), v(g.l_y), v(g.total)};
}

void check_total(const LossBreakdown& l, const std::string& where) {
    if (!std::isfinite(l.total))
        throw NumericError("non-finite loss " + where + " (recon=" + std::to_string(l.recon) +
                           ", kl_z=" + std::to_string(l.kl_z) + ", kl_u=" + std::to_string(l.kl_u) +
                           ", l_y=" + std::to_string(l.l_y) + ")");
}

}  // namespace

LossBreakdown elbo_terms(const ModelParams& params, const Matrix& x, const McConfig& mc) {
    const ArchConfig& a = params.arch();
    if (a.variant != Variant::kCounts) throw ConfigError("plain predictor has no ELBO");
    if (x.rows() != a.D || x.cols() != a.T_in) throw ShapeError("input has the wrong shape");
    const Matrix xf = flatten(x);
    ad::Tape tape;
    net::Bound b(tape, params, false);
    const LossBreakdown l = values(net::build_loss(b, tape.constant(xf), Labels{}, 0.0, mc, draw_noise(a, mc, xf, 0)));
    check_total(l, "in elbo_terms");
    return l;
}

double supervised_term(const ModelParams& params, const Matrix& x, int label, const Vector& sequence) {
    const ArchConfig& a = params.arch();
    const OutputDist d = q_y(params, x);
    if (a.classification()) {
        if (label < 0 || label >= a.num_classes) throw ShapeError("class label out of range");
        return std::log(d.probs[label]);
    }
    if (sequence.size() != a.T_in) throw ShapeError("label sequence length must equal T_in");
    return gaussian_log_density(sequence, d.gauss);
}

LossBreakdown loss(const ModelParams& params, const Examples& batch, const TrainConfig& cfg) {
    cfg.validate();
    const Matrix x = inputs_of(batch, 0, batch.size());
    ad::Tape tape;
    net::Bound b(tape, params, false);
    const Labels labels = labels_of(params.arch(), batch, 0, batch.size());
    const LossBreakdown l = values(net::build_loss(b, tape.constant(x), labels, cfg.lambda_sup, cfg.mc,
                                                   draw_noise(params.arch(), cfg.mc, x, 0)));
    check_total(l, "in loss");
    return l;
}

std::vector<Matrix> loss_gradient(const ModelParams& params, const Examples& batch, const TrainConfig& cfg) {
    cfg.validate();
    const Matrix x = inputs_of(batch, 0, batch.size());
    ad::Tape tape;
    net::Bound b(tape, params, true);
    const Labels labels = labels_of(params.arch(), batch, 0, batch.size());
    net::LossGraph g =
        net::build_loss(b, tape.constant(x), labels, cfg.lambda_sup, cfg.mc, draw_noise(params.arch(), cfg.mc, x, 0));
    tape.backward(g.total);
    std::vector<Matrix> grads;
    for (Var v : b.vars()) grads.push_back(tape.grad(v));
    return grads;
}

Adam::Adam(const ModelParams& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& t : params.tensors()) {
        m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
        v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
}

void Adam::step(ModelParams& params, const std::vector<Matrix>& grads) {
    auto& tensors = params.tensors();
    if (grads.size() != tensors.size()) throw ShapeError("gradient count != tensor count");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
        tensors[i].value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

}  // namespace counts
