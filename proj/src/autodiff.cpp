#include "counts/autodiff.hpp"

#include "counts/error.hpp"

#include <cmath>
#include <string>

namespace counts::ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

Tape& tape_of(const Var& a) { return *a.tape(); }

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, const std::vector<Var>& parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root must be a 1x1 scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (int id = root.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.backward || n.grad.size() == 0) continue;
        // Copy: the closure may append to other nodes' grads, not this one.
        const Matrix g = n.grad;
        n.backward(*this, g);
    }
}

Var operator+(Var a, Var b) {
    require_same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var operator-(Var a, Var b) {
    require_same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var operator*(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value().cwiseProduct(b.value()), {a, b},
                           [ia, ib](Tape& t, const Matrix& g) {
                               t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                               t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                           });
}

Var operator-(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
    const int ia = a.id();
    return tape_of(a).push(a.value() * s, {a},
                           [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
    const int ia = a.id();
    return tape_of(a).push(a.value().array() + s, {a},
                           [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_bias(Var m, Var b) {
    if (b.cols() != 1 || b.rows() != m.rows()) throw ShapeError("add_bias: bias must be rows x 1");
    const int im = m.id(), ib = b.id();
    Matrix out = m.value().colwise() + b.value().col(0);
    return tape_of(m).push(std::move(out), {m, b}, [im, ib](Tape& t, const Matrix& g) {
        t.accumulate(im, g);
        t.accumulate(ib, g.rowwise().sum());
    });
}

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + ")");
    }
    const int ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value();
    return tape_of(a).push(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

Var tanh(Var a) {
    const int ia = a.id();
    Matrix out = a.value().array().tanh().matrix();
    Tape& tape = tape_of(a);
    const int iout = static_cast<int>(tape.size());
    return tape.push(std::move(out), {a}, [ia, iout](Tape& t, const Matrix& g) {
        const Matrix& y = t.value(iout);
        t.accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
    });
}

Var identity(Var a) { return a; }

Var exp(Var a) {
    const int ia = a.id();
    Matrix out = a.value().array().exp().matrix();
    Tape& tape = tape_of(a);
    const int iout = static_cast<int>(tape.size());
    return tape.push(std::move(out), {a}, [ia, iout](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(iout)));
    });
}

Var log(Var a) {
    const int ia = a.id();
    return tape_of(a).push(a.value().array().log().matrix(), {a}, [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, (g.array() / t.value(ia).array()).matrix());
    });
}

Var square(Var a) {
    const int ia = a.id();
    return tape_of(a).push(a.value().array().square().matrix(), {a},
                           [ia](Tape& t, const Matrix& g) {
                               t.accumulate(ia, (2.0 * g.array() * t.value(ia).array()).matrix());
                           });
}

Var clamp(Var a, double lo, double hi) {
    const int ia = a.id();
    Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
    return tape_of(a).push(std::move(out), {a}, [ia, lo, hi](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        Matrix gi = g;
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                if (x(i, j) < lo || x(i, j) > hi) gi(i, j) = 0.0;
        t.accumulate(ia, gi);
    });
}

Var sum(Var a) {
    const int ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return tape_of(a).push(std::move(out), {a}, [ia, r, c](Tape& t, const Matrix& g) {
        t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
    });
}

Var col_sum(Var a) {
    const int ia = a.id();
    const Eigen::Index r = a.rows();
    return tape_of(a).push(a.value().colwise().sum(), {a}, [ia, r](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.replicate(r, 1));
    });
}

Var row_mean(Var a) {
    const int ia = a.id();
    const Eigen::Index c = a.cols();
    return tape_of(a).push(a.value().rowwise().mean(), {a}, [ia, c](Tape& t, const Matrix& g) {
        t.accumulate(ia, (g / static_cast<double>(c)).replicate(1, c));
    });
}

Var log_softmax(Var a) {
    const int ia = a.id();
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mx = x.col(j).maxCoeff();
        const double lse = mx + std::log((x.col(j).array() - mx).exp().sum());
        out.col(j) = x.col(j).array() - lse;
    }
    Tape& tape = tape_of(a);
    const int iout = static_cast<int>(tape.size());
    return tape.push(std::move(out), {a}, [ia, iout](Tape& t, const Matrix& g) {
        const Matrix p = t.value(iout).array().exp().matrix();
        Matrix gi = g;
        for (Eigen::Index j = 0; j < g.cols(); ++j) gi.col(j) -= p.col(j) * g.col(j).sum();
        t.accumulate(ia, gi);
    });
}

Var softmax(Var a) { return exp(log_softmax(a)); }

Var pick(Var a, const std::vector<int>& index) {
    if (static_cast<Eigen::Index>(index.size()) != a.cols()) throw ShapeError("pick: one index per column required");
    for (int k : index)
        if (k < 0 || k >= a.rows()) throw ShapeError("pick: index out of range");
    const int ia = a.id();
    const Eigen::Index r = a.rows();
    Matrix out(1, a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(0, j) = a.value()(index[j], j);
    return tape_of(a).push(std::move(out), {a}, [ia, r, index](Tape& t, const Matrix& g) {
        Matrix gi = Matrix::Zero(r, g.cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) gi(index[j], j) = g(0, j);
        t.accumulate(ia, gi);
    });
}

Var rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("rows: slice out of range");
    const int ia = a.id();
    const Eigen::Index r = a.rows();
    return tape_of(a).push(a.value().middleRows(start, count), {a},
                           [ia, r, start, count](Tape& t, const Matrix& g) {
                               Matrix gi = Matrix::Zero(r, g.cols());
                               gi.middleRows(start, count) = g;
                               t.accumulate(ia, gi);
                           });
}

Var vcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("vcat: no inputs");
    const Eigen::Index c = parts.front().cols();
    Eigen::Index total = 0;
    for (const Var& p : parts) {
        if (p.cols() != c) throw ShapeError("vcat: column counts differ");
        total += p.rows();
    }
    Matrix out(total, c);
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        spans.emplace_back(p.id(), off);
        off += p.rows();
    }
    return tape_of(parts.front()).push(std::move(out), parts, [spans](Tape& t, const Matrix& g) {
        for (const auto& [id, start] : spans) {
            if (!t.requires_grad(id)) continue;
            t.accumulate(id, g.middleRows(start, t.value(id).rows()));
        }
    });
}

Var tile_cols(Var a, int times) {
    const int ia = a.id();
    const Eigen::Index c = a.cols();
    return tape_of(a).push(a.value().replicate(1, times), {a}, [ia, c, times](Tape& t, const Matrix& g) {
        Matrix gi = g.leftCols(c);
        for (int k = 1; k < times; ++k) gi += g.middleCols(k * c, c);
        t.accumulate(ia, gi);
    });
}

Var repeat_cols(Var a, int times) {
    const int ia = a.id();
    const Eigen::Index c = a.cols(), r = a.rows();
    Matrix out(r, c * times);
    for (Eigen::Index j = 0; j < c; ++j)
        for (int k = 0; k < times; ++k) out.col(j * times + k) = a.value().col(j);
    return tape_of(a).push(std::move(out), {a}, [ia, c, r, times](Tape& t, const Matrix& g) {
        Matrix gi = Matrix::Zero(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (int k = 0; k < times; ++k) gi.col(j) += g.col(j * times + k);
        t.accumulate(ia, gi);
    });
}

int conv_out_len(int t_in, int kernel, int stride, int pad) {
    return (t_in + 2 * pad - kernel) / stride + 1;
}

Var conv1d(Var x, Var w, Var b, int c_in, int t_in, int kernel, int stride, int pad) {
    if (x.rows() != static_cast<Eigen::Index>(c_in) * t_in) throw ShapeError("conv1d: input rows != c_in * t_in");
    if (w.cols() != static_cast<Eigen::Index>(c_in) * kernel) throw ShapeError("conv1d: weight cols != c_in * kernel");
    if (b.rows() != w.rows() || b.cols() != 1) throw ShapeError("conv1d: bias must be c_out x 1");
    const int c_out = static_cast<int>(w.rows());
    const int t_out = conv_out_len(t_in, kernel, stride, pad);
    if (t_out < 1) throw ShapeError("conv1d: empty output");
    const Eigen::Index batch = x.cols();

    // Patch for output step s: rows (c * kernel + k) hold x[c, s*stride - pad + k].
    auto patch = [=](const Matrix& xv, int s) {
        Matrix p = Matrix::Zero(static_cast<Eigen::Index>(c_in) * kernel, batch);
        for (int c = 0; c < c_in; ++c) {
            for (int k = 0; k < kernel; ++k) {
                const int src = s * stride - pad + k;
                if (src < 0 || src >= t_in) continue;
                p.row(c * kernel + k) = xv.row(static_cast<Eigen::Index>(c) * t_in + src);
            }
        }
        return p;
    };

    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    Matrix out(static_cast<Eigen::Index>(c_out) * t_out, batch);
    for (int s = 0; s < t_out; ++s) {
        Matrix y = wv * patch(xv, s);
        y.colwise() += b.value().col(0);
        for (int o = 0; o < c_out; ++o) out.row(static_cast<Eigen::Index>(o) * t_out + s) = y.row(o);
    }

    const int ix = x.id(), iw = w.id(), ib = b.id();
    return tape_of(x).push(std::move(out), {x, w, b},
                           [=](Tape& t, const Matrix& g) {
                               const Matrix& xv2 = t.value(ix);
                               const Matrix& wv2 = t.value(iw);
                               const bool need_x = t.requires_grad(ix);
                               const bool need_w = t.requires_grad(iw);
                               Matrix gx = need_x ? Matrix::Zero(xv2.rows(), batch) : Matrix();
                               Matrix gw = need_w ? Matrix::Zero(wv2.rows(), wv2.cols()) : Matrix();
                               Matrix gb = Matrix::Zero(c_out, 1);
                               Matrix gs(c_out, batch);
                               for (int s = 0; s < t_out; ++s) {
                                   for (int o = 0; o < c_out; ++o)
                                       gs.row(o) = g.row(static_cast<Eigen::Index>(o) * t_out + s);
                                   gb += gs.rowwise().sum();
                                   if (need_w) gw.noalias() += gs * patch(xv2, s).transpose();
                                   if (need_x) {
                                       const Matrix gp = wv2.transpose() * gs;
                                       for (int c = 0; c < c_in; ++c) {
                                           for (int k = 0; k < kernel; ++k) {
                                               const int src = s * stride - pad + k;
                                               if (src < 0 || src >= t_in) continue;
                                               gx.row(static_cast<Eigen::Index>(c) * t_in + src) +=
                                                   gp.row(c * kernel + k);
                                           }
                                       }
                                   }
                               }
                               if (need_x) t.accumulate(ix, gx);
                               if (need_w) t.accumulate(iw, gw);
                               t.accumulate(ib, gb);
                           });
}

Var time_mean(Var x, int channels, int t_len) {
    if (x.rows() != static_cast<Eigen::Index>(channels) * t_len) throw ShapeError("time_mean: rows != channels * t");
    const int ix = x.id();
    Matrix out(channels, x.cols());
    for (int c = 0; c < channels; ++c)
        out.row(c) = x.value().middleRows(static_cast<Eigen::Index>(c) * t_len, t_len).colwise().mean();
    return tape_of(x).push(std::move(out), {x}, [ix, channels, t_len](Tape& t, const Matrix& g) {
        Matrix gi(static_cast<Eigen::Index>(channels) * t_len, g.cols());
        for (int c = 0; c < channels; ++c)
            gi.middleRows(static_cast<Eigen::Index>(c) * t_len, t_len) =
                (g.row(c) / static_cast<double>(t_len)).replicate(t_len, 1);
        t.accumulate(ix, gi);
    });
}

Var repeat_time(Var x, int t_len) {
    const int ix = x.id();
    const Eigen::Index channels = x.rows();
    Matrix out(channels * t_len, x.cols());
    for (Eigen::Index c = 0; c < channels; ++c) out.middleRows(c * t_len, t_len) = x.value().row(c).replicate(t_len, 1);
    return tape_of(x).push(std::move(out), {x}, [ix, channels, t_len](Tape& t, const Matrix& g) {
        Matrix gi(channels, g.cols());
        for (Eigen::Index c = 0; c < channels; ++c) gi.row(c) = g.middleRows(c * t_len, t_len).colwise().sum();
        t.accumulate(ix, gi);
    });
}

}  // namespace counts::ad
