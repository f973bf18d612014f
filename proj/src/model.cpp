#include "counts/model.hpp"

#include "counts/error.hpp"
#include "counts/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace counts {

using ad::Var;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr Eigen::Index kPredictChunk = 256;

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

int mid_length(const ArchConfig& a) {
    const int pad = a.kernel / 2;
    const int t1 = ad::conv_out_len(a.T_in, a.kernel, 2, pad);
    return t1 < 1 ? 0 : ad::conv_out_len(t1, a.kernel, 2, pad);
}

Matrix stack_inputs(const Examples& data, std::size_t begin, std::size_t end) {
    Matrix x(data[begin].x.size(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) x.col(static_cast<Eigen::Index>(i - begin)) = flatten(data[i].x);
    return x;
}

}  // namespace

std::string to_string(Task t) { return t == Task::kClassification ? "classification" : "sequence_regression"; }

Task task_from_string(const std::string& s) {
    if (s == "classification") return Task::kClassification;
    if (s == "sequence_regression") return Task::kSequenceRegression;
    throw ConfigError("unknown task '" + s + "'");
}

void ArchConfig::validate() const {
    for (int v : {D, T_in, T_mid, H_z, H_l, H_g, hidden, conv_channels, kernel})
        if (v < 1) throw ConfigError("architecture dimensions must be >= 1");
    if (classification() && num_classes < 2) throw ConfigError("classification needs num_classes >= 2");
    if (backbone == Backbone::kDense && T_mid != 1) throw ConfigError("dense backbone requires T_mid = 1");
    if (backbone == Backbone::kTemporal && T_mid != mid_length(*this))
        throw ConfigError("temporal backbone requires T_mid = " + std::to_string(mid_length(*this)));
    if (!(latent_log_var_init >= kLogVarMin && latent_log_var_init <= kLogVarMax))
        throw ConfigError("latent_log_var_init must lie in [-8, 8]");
}

ArchConfig toy_arch() { return ArchConfig{}; }

ArchConfig spike_arch() {
    ArchConfig a;
    a.D = 3;
    a.T_in = 80;
    a.T_mid = 20;
    a.H_z = 4;
    a.H_l = 2;
    a.H_g = 4;
    a.hidden = 64;
    a.conv_channels = 16;
    a.kernel = 5;
    a.task = Task::kSequenceRegression;
    a.num_classes = 0;
    a.backbone = Backbone::kTemporal;
    return a;
}

nlohmann::json to_json(const ArchConfig& a) {
    return nlohmann::json{{"D", a.D},
                          {"T_in", a.T_in},
                          {"T_mid", a.T_mid},
                          {"H_z", a.H_z},
                          {"H_l", a.H_l},
                          {"H_g", a.H_g},
                          {"hidden", a.hidden},
                          {"conv_channels", a.conv_channels},
                          {"kernel", a.kernel},
                          {"task", to_string(a.task)},
                          {"num_classes", a.num_classes},
                          {"backbone", a.backbone == Backbone::kDense ? "dense" : "temporal"},
                          {"activation", a.activation == Activation::kTanh ? "tanh" : "identity"},
                          {"variant", a.variant == Variant::kCounts ? "counts" : "plain"},
                          {"latent_log_var_init", a.latent_log_var_init}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    try {
        a.D = j.value("D", a.D);
        a.T_in = j.value("T_in", a.T_in);
        a.T_mid = j.value("T_mid", a.T_mid);
        a.H_z = j.value("H_z", a.H_z);
        a.H_l = j.value("H_l", a.H_l);
        a.H_g = j.value("H_g", a.H_g);
        a.hidden = j.value("hidden", a.hidden);
        a.conv_channels = j.value("conv_channels", a.conv_channels);
        a.kernel = j.value("kernel", a.kernel);
        a.task = task_from_string(j.value("task", to_string(a.task)));
        a.num_classes = j.value("num_classes", a.num_classes);
        const std::string backbone = j.value("backbone", std::string("dense"));
        if (backbone != "dense" && backbone != "temporal") throw ConfigError("unknown backbone '" + backbone + "'");
        a.backbone = backbone == "dense" ? Backbone::kDense : Backbone::kTemporal;
        const std::string activation = j.value("activation", std::string("tanh"));
        if (activation != "tanh" && activation != "identity")
            throw ConfigError("unknown activation '" + activation + "'");
        a.activation = activation == "tanh" ? Activation::kTanh : Activation::kIdentity;
        const std::string variant = j.value("variant", std::string("counts"));
        if (variant != "counts" && variant != "plain") throw ConfigError("unknown variant '" + variant + "'");
        a.variant = variant == "counts" ? Variant::kCounts : Variant::kPlain;
        a.latent_log_var_init = j.value("latent_log_var_init", a.latent_log_var_init);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("architecture: ") + e.what());
    }
    a.validate();
    return a;
}

void GaussianHead::validate() const {
    if (mean.rows() != log_var.rows() || mean.cols() != log_var.cols())
        throw ShapeError("Gaussian head mean and log_var shapes differ");
    if (!mean.allFinite() || !log_var.array().exp().allFinite()) throw NumericError("non-finite Gaussian head");
}

void OutputDist::validate() const {
    if (task == Task::kClassification) {
        if ((probs.array() < 0.0).any() || std::abs(probs.sum() - 1.0) > 1e-9)
            throw NumericError("class probabilities are not normalized");
    } else {
        gauss.validate();
    }
}

int OutputDist::argmax() const {
    if (task != Task::kClassification) throw ConfigError("argmax needs a categorical output");
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<int>(best);
}

ModelParams::ModelParams(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    const int in = arch.input_dim();
    const int H = arch.hidden;
    auto mlp = [&](const std::string& net, int n_in, int n_out) {
        add(net + ".0.W", H, n_in);
        add(net + ".0.b", H, 1);
        add(net + ".1.W", H, H);
        add(net + ".1.b", H, 1);
        add(net + ".2.W", n_out, H);
        add(net + ".2.b", n_out, 1);
    };
    const int C = arch.conv_channels;
    auto layer = [&](const std::string& name, int n_out, int n_in) {
        add(name + ".W", n_out, n_in);
        add(name + ".b", n_out, 1);
    };
    auto extractor = [&](const std::string& net, int c_in) {
        layer(net + ".c0", C, c_in * arch.kernel);
        layer(net + ".c1", C, C * arch.kernel);
    };

    const bool counts = arch.variant == Variant::kCounts;
    if (arch.backbone == Backbone::kDense) {
        mlp("q_y", in, arch.output_dim());
        if (counts) {
            mlp("q_lat", in + arch.label_dim(), 2 * (arch.ul_dim() + arch.ug_dim() + arch.z_dim()));
            mlp("p_z", in + arch.ul_dim() + arch.ug_dim(), 2 * arch.z_dim());
            mlp("p_y", arch.ul_dim() + arch.ug_dim() + arch.z_dim(), arch.output_dim());
        }
    } else {
        extractor("q_y", arch.D);
        layer("q_y.h", H, C * arch.T_mid);
        layer("q_y.o", arch.output_dim(), H);
        if (counts) {
            extractor("q_lat", arch.D + (arch.classification() ? arch.num_classes : 1));
            layer("q_lat.ul", 2 * arch.H_l, C);
            layer("q_lat.z", 2 * arch.H_z, C);
            layer("q_lat.ug", 2 * arch.H_g, C);
            extractor("p_z", arch.D);
            layer("p_z.m", C, C + arch.H_l + arch.H_g);
            layer("p_z.o", 2 * arch.H_z, C);
            layer("p_y.h", H, (arch.H_l + arch.H_z + arch.H_g) * arch.T_mid);
            layer("p_y.o", arch.output_dim(), H);
        }
    }

    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        Tensor& t = tensors_[i];
        if (t.value.cols() == 1 && t.name.ends_with(".b")) continue;
        const double limit = std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
        Rng rng = derive_rng(seed, kInitStream, i);
        std::uniform_real_distribution<double> uniform(-limit, limit);
        for (Eigen::Index c = 0; c < t.value.cols(); ++c)
            for (Eigen::Index r = 0; r < t.value.rows(); ++r) t.value(r, c) = uniform(rng);
    }
    input_offset_ = Matrix::Zero(arch.D, arch.T_in);
    if (!counts) return;
    // Latent heads start with a small variance so z begins as a near-deterministic code.
    const double lv = arch.latent_log_var_init;
    auto lower_half = [&](const std::string& name) {
        Matrix& bias = tensors_[index_of(name)].value;
        bias.bottomRows(bias.rows() / 2).setConstant(lv);
    };
    if (arch.backbone == Backbone::kDense) {
        Matrix& bias = tensors_[index_of("q_lat.2.b")].value;
        const Eigen::Index nl = arch.ul_dim(), ng = arch.ug_dim(), nz = arch.z_dim();
        bias.middleRows(nl, nl).setConstant(lv);
        bias.middleRows(2 * nl + ng, ng).setConstant(lv);
        bias.middleRows(2 * (nl + ng) + nz, nz).setConstant(lv);
        lower_half("p_z.2.b");
    } else {
        for (const char* name : {"q_lat.ul.b", "q_lat.ug.b", "q_lat.z.b", "p_z.o.b"}) lower_half(name);
    }
}

void ModelParams::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    tensors_.push_back(Tensor{name, Matrix::Zero(rows, cols)});
}

std::size_t ModelParams::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
        if (tensors_[i].name == name) return i;
    throw ConfigError("model has no tensor '" + name + "'");
}

const Matrix& ModelParams::get(const std::string& name) const { return tensors_[index_of(name)].value; }
Matrix& ModelParams::get(const std::string& name) { return tensors_[index_of(name)].value; }

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

void ModelParams::set_input_offset(Matrix offset) {
    if (offset.rows() != arch_.D || offset.cols() != arch_.T_in) throw ShapeError("input offset must be D x T_in");
    input_offset_ = std::move(offset);
}

void ModelParams::set_input_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("input scale must be positive and finite");
    input_scale_ = scale;
}

void ModelParams::check_finite() const {
    for (const auto& t : tensors_)
        if (!t.value.allFinite()) throw NumericError("tensor '" + t.name + "' has non-finite entries");
}

bool ModelParams::operator==(const ModelParams& o) const {
    if (!(arch_ == o.arch_) || tensors_.size() != o.tensors_.size() || !bit_equal(input_offset_, o.input_offset_) ||
        std::bit_cast<std::uint64_t>(input_scale_) != std::bit_cast<std::uint64_t>(o.input_scale_))
        return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
        if (tensors_[i].name != o.tensors_[i].name || !bit_equal(tensors_[i].value, o.tensors_[i].value)) return false;
    return true;
}

Matrix input_mean(const Examples& data) {
    if (data.empty()) throw ConfigError("cannot average an empty dataset");
    Matrix sum = Matrix::Zero(data.front().x.rows(), data.front().x.cols());
    for (const auto& e : data) {
        if (e.x.rows() != sum.rows() || e.x.cols() != sum.cols()) throw ShapeError("inputs differ in shape");
        sum += e.x;
    }
    return sum / static_cast<double>(data.size());
}

double input_spread(const Examples& data, const Matrix& mean) {
    if (data.empty()) throw ConfigError("cannot measure an empty dataset");
    double sq = 0.0;
    for (const auto& e : data) {
        if (e.x.rows() != mean.rows() || e.x.cols() != mean.cols()) throw ShapeError("inputs differ in shape");
        sq += (e.x - mean).squaredNorm();
    }
    const double rms = std::sqrt(sq / static_cast<double>(data.size() * static_cast<std::size_t>(mean.size())));
    return rms > 0.0 ? rms : 1.0;
}

Vector flatten(const Matrix& x) {
    Vector v(x.size());
    for (Eigen::Index c = 0; c < x.rows(); ++c) v.segment(c * x.cols(), x.cols()) = x.row(c).transpose();
    return v;
}

Matrix unflatten(const Vector& v, int channels, int steps) {
    if (v.size() != static_cast<Eigen::Index>(channels) * steps) throw ShapeError("unflatten: size mismatch");
    Matrix x(channels, steps);
    for (int c = 0; c < channels; ++c) x.row(c) = v.segment(static_cast<Eigen::Index>(c) * steps, steps).transpose();
    return x;
}

Vector encode_label(const ArchConfig& arch, int label, const Vector& sequence) {
    if (arch.classification()) {
        if (label < 0 || label >= arch.num_classes) throw ShapeError("class label out of range");
        Vector v = Vector::Zero(arch.num_classes);
        v[label] = 1.0;
        return v;
    }
    if (sequence.size() != arch.T_in) throw ShapeError("label sequence length must equal T_in");
    return sequence;
}

namespace {

void check_input(const ArchConfig& a, const Matrix& x) {
    if (x.rows() != a.D || x.cols() != a.T_in)
        throw ShapeError("input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                         std::to_string(a.D) + "x" + std::to_string(a.T_in));
}

GaussianHead head_value(const net::Head& h, int channels, int steps) {
    return GaussianHead{unflatten(h.mean.value().col(0), channels, steps),
                        unflatten(h.log_var.value().col(0), channels, steps)};
}

}  // namespace

OutputDist q_y(const ModelParams& params, const Matrix& x) {
    check_input(params.arch(), x);
    ad::Tape tape;
    net::Bound b(tape, params, false);
    Var raw = net::q_y_raw(b, tape.constant(flatten(x)));
    return net::to_output(params.arch(), raw.value(), 0);
}

LatentHeads q_latents(const ModelParams& params, const Matrix& x, const Vector& y_encoded) {
    const ArchConfig& a = params.arch();
    check_input(a, x);
    if (y_encoded.size() != a.label_dim()) throw ShapeError("label encoding has the wrong length");
    ad::Tape tape;
    net::Bound b(tape, params, false);
    net::Latents l = net::q_latents(b, tape.constant(flatten(x)), tape.constant(y_encoded));
    return LatentHeads{head_value(l.u_l, a.H_l, a.T_mid), head_value(l.u_g, a.H_g, 1), head_value(l.z, a.H_z, a.T_mid)};
}

GaussianHead p_z(const ModelParams& params, const Matrix& x, const Matrix& u_l, const Vector& u_g) {
    const ArchConfig& a = params.arch();
    check_input(a, x);
    if (u_l.rows() != a.H_l || u_l.cols() != a.T_mid) throw ShapeError("u_l must be H_l x T_mid");
    if (u_g.size() != a.H_g) throw ShapeError("u_g must have H_g entries");
    ad::Tape tape;
    net::Bound b(tape, params, false);
    net::Head h = net::p_z(b, tape.constant(flatten(x)), tape.constant(flatten(u_l)), tape.constant(u_g));
    return head_value(h, a.H_z, a.T_mid);
}

OutputDist p_y(const ModelParams& params, const Matrix& u_l, const Vector& u_g, const Matrix& z) {
    const ArchConfig& a = params.arch();
    if (u_l.rows() != a.H_l || u_l.cols() != a.T_mid) throw ShapeError("u_l must be H_l x T_mid");
    if (u_g.size() != a.H_g) throw ShapeError("u_g must have H_g entries");
    if (z.rows() != a.H_z || z.cols() != a.T_mid) throw ShapeError("z must be H_z x T_mid");
    ad::Tape tape;
    net::Bound b(tape, params, false);
    Var raw = net::p_y_raw(b, tape.constant(flatten(u_l)), tape.constant(u_g), tape.constant(flatten(z)));
    return net::to_output(a, raw.value(), 0);
}

Matrix reparam_sample(const GaussianHead& head, const Matrix& noise) {
    if (noise.rows() != head.mean.rows() || noise.cols() != head.mean.cols())
        throw ShapeError("noise shape does not match head");
    if (head.log_var.rows() != head.mean.rows() || head.log_var.cols() != head.mean.cols())
        throw ShapeError("Gaussian head mean and log_var shapes differ");
    return head.mean + ((0.5 * head.log_var.array()).exp() * noise.array()).matrix();
}

std::vector<Prediction> predict_batch(const ModelParams& params, const Examples& data) {
    const ArchConfig& a = params.arch();
    for (const auto& e : data) check_input(a, e.x);
    std::vector<Prediction> out;
    out.reserve(data.size());
    for (std::size_t begin = 0; begin < data.size(); begin += kPredictChunk) {
        const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(kPredictChunk));
        const Eigen::Index B = static_cast<Eigen::Index>(end - begin);
        ad::Tape tape;
        net::Bound b(tape, params, false);
        Var x = tape.constant(stack_inputs(data, begin, end));
        const Matrix qy = net::q_y_raw(b, x).value();
        Matrix raw;
        if (a.variant == Variant::kPlain) {
            raw = qy;
        } else {
            Matrix enc(a.label_dim(), B);
            for (Eigen::Index c = 0; c < B; ++c) {
                const OutputDist d = net::to_output(a, qy, c);
                enc.col(c) = a.classification() ? encode_label(a, d.argmax(), Vector()) : d.mean();
            }
            net::Latents l = net::q_latents(b, x, tape.constant(enc));
            raw = net::p_y_raw(b, l.u_l.mean, l.u_g.mean, l.z.mean).value();
        }
        for (Eigen::Index c = 0; c < B; ++c) {
            Prediction p;
            p.dist = net::to_output(a, raw, c);
            if (a.classification()) {
                p.label = p.dist.argmax();
            } else {
                p.sequence = p.dist.mean();
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

Prediction predict(const ModelParams& params, const Matrix& x) {
    return predict_batch(params, Examples{Example{x, -1, Vector()}}).front();
}

}  // namespace counts
