#include "frameoracle/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace frameoracle::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Var Tape::push(Matrix value, bool rg, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.rg = rg;
    if (rg) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_ref(int idx) { return nodes_[static_cast<std::size_t>(idx)].grad; }

Var Tape::leaf(Matrix value, bool requires_grad) {
    return push(std::move(value), requires_grad, {});
}

Var Tape::matmul(Var a, Var b) {
    const Matrix& va = val(a);
    const Matrix& vb = val(b);
    if (va.cols() != vb.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(va * vb, rg, {});
    if (rg) {
        nodes_.back().back = [this, a, b, out]() {
            const Matrix& g = grad(out);
            if (requires_grad(a)) grad_ref(a.idx) += g * val(b).transpose();
            if (requires_grad(b)) grad_ref(b.idx) += val(a).transpose() * g;
        };
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(val(a) + val(b), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, b, out]() {
            const Matrix& g = grad(out);
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(b)) grad_ref(b.idx) += g;
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(val(a) - val(b), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, b, out]() {
            const Matrix& g = grad(out);
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(b)) grad_ref(b.idx) -= g;
        };
    }
    return out;
}

Var Tape::add_rowvec(Var a, Var b) {
    const Matrix& va = val(a);
    const Matrix& vb = val(b);
    if (vb.rows() != 1 || vb.cols() != va.cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    Matrix v = va;
    v.rowwise() += vb.row(0);
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(v), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, b, out]() {
            const Matrix& g = grad(out);
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(b)) grad_ref(b.idx).row(0) += g.colwise().sum();
        };
    }
    return out;
}

Var Tape::cmul(Var a, Var b) {
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(val(a).cwiseProduct(val(b)), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, b, out]() {
            const Matrix& g = grad(out);
            if (requires_grad(a)) grad_ref(a.idx) += g.cwiseProduct(val(b));
            if (requires_grad(b)) grad_ref(b.idx) += g.cwiseProduct(val(a));
        };
    }
    return out;
}

Var Tape::cmul_const(Var a, Matrix m) {
    const bool rg = requires_grad(a);
    Var mask = constant(std::move(m));
    Var out = push(val(a).cwiseProduct(val(mask)), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, mask, out]() {
            grad_ref(a.idx) += grad(out).cwiseProduct(val(mask));
        };
    }
    return out;
}

Var Tape::scale(Var a, double s) {
    const bool rg = requires_grad(a);
    Var out = push(val(a) * s, rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out, s]() { grad_ref(a.idx) += grad(out) * s; };
    }
    return out;
}

Var Tape::gelu(Var a) {
    const Matrix& x = val(a);
    Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    const bool rg = requires_grad(a);
    Var out = push(std::move(y), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out]() {
            const Matrix& x = val(a);
            Matrix d = x.unaryExpr([](double v) {
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                return cdf + v * pdf;
            });
            grad_ref(a.idx) += grad(out).cwiseProduct(d);
        };
    }
    return out;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Matrix& vx = val(x);
    const Matrix& vg = val(gamma);
    const Matrix& vb = val(beta);
    if (vg.rows() != 1 || vg.cols() != vx.cols() || vb.rows() != 1 || vb.cols() != vx.cols())
        throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols(x)");
    const auto n = static_cast<double>(vx.cols());
    Eigen::VectorXd mean = vx.rowwise().mean();
    Matrix centered = vx.colwise() - mean;
    Eigen::VectorXd var = centered.array().square().matrix().rowwise().sum() / n;
    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix y = (xhat.array().rowwise() * vg.row(0).array()).rowwise() + vb.row(0).array();
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    // Normalized activations and inverse std are kept for the backward pass;
    // they must be pushed before the output so the closure lands on it.
    Var xhat_c = constant(std::move(xhat));
    Var istd_c = constant(inv_std.transpose());
    Var out = push(std::move(y), rg, {});
    if (rg) {
        nodes_.back().back = [this, x, gamma, beta, out, xhat_c, istd_c, n]() {
            const Matrix& g = grad(out);
            const Matrix& xh = val(xhat_c);
            const Eigen::VectorXd istd = val(istd_c).row(0).transpose();
            const Matrix& vg = val(gamma);
            if (requires_grad(gamma))
                grad_ref(gamma.idx).row(0) += g.cwiseProduct(xh).colwise().sum();
            if (requires_grad(beta)) grad_ref(beta.idx).row(0) += g.colwise().sum();
            if (requires_grad(x)) {
                Matrix gh = g.array().rowwise() * vg.row(0).array();  // dL/dxhat
                Eigen::VectorXd gh_mean = gh.rowwise().mean();
                Eigen::VectorXd ghxh_mean = gh.cwiseProduct(xh).rowwise().sum() / n;
                Matrix dx = gh;
                dx.colwise() -= gh_mean;
                dx -= (xh.array().colwise() * ghxh_mean.array()).matrix();
                dx.array().colwise() *= istd.array();
                grad_ref(x.idx) += dx;
            }
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    const Matrix& x = val(a);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x.row(r).array() - m).exp();
        y.row(r) = e / e.sum();
    }
    const bool rg = requires_grad(a);
    Var out = push(std::move(y), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out]() {
            const Matrix& p = val(out);
            const Matrix& g = grad(out);
            Matrix d(p.rows(), p.cols());
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const double dot = g.row(r).dot(p.row(r));
                d.row(r) = p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
            }
            grad_ref(a.idx) += d;
        };
    }
    return out;
}

Var Tape::transpose(Var a) {
    const bool rg = requires_grad(a);
    Var out = push(val(a).transpose(), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out]() { grad_ref(a.idx) += grad(out).transpose(); };
    }
    return out;
}

Var Tape::col_block(Var a, int start, int n) {
    const Matrix& v = val(a);
    if (start < 0 || n < 0 || start + n > v.cols())
        throw std::invalid_argument("col_block: range out of bounds");
    const bool rg = requires_grad(a);
    Var out = push(v.middleCols(start, n), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out, start, n]() {
            grad_ref(a.idx).middleCols(start, n) += grad(out);
        };
    }
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var p : parts) {
        if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += val(p).cols();
        rg = rg || requires_grad(p);
    }
    Matrix v(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        v.middleCols(c, val(p).cols()) = val(p);
        c += val(p).cols();
    }
    Var out = push(std::move(v), rg, {});
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_.back().back = [this, ps, out]() {
            const Matrix& g = grad(out);
            Eigen::Index c = 0;
            for (Var p : ps) {
                const Eigen::Index w = val(p).cols();
                if (requires_grad(p)) grad_ref(p.idx) += g.middleCols(c, w);
                c += w;
            }
        };
    }
    return out;
}

Var Tape::mean_rows(Var a) {
    const Matrix& v = val(a);
    const double inv_n = 1.0 / static_cast<double>(v.rows());
    Matrix m = v.colwise().mean();
    const bool rg = requires_grad(a);
    Var out = push(std::move(m), rg, {});
    if (rg) {
        nodes_.back().back = [this, a, out, inv_n]() {
            const Matrix& g = grad(out);
            grad_ref(a.idx).rowwise() += (g.row(0) * inv_n).eval();
        };
    }
    return out;
}

void Tape::backward(const std::vector<std::pair<Var, Matrix>>& seeds) {
    if (ran_backward_) throw std::logic_error("Tape::backward called twice");
    ran_backward_ = true;
    for (const auto& [v, g] : seeds) {
        Node& n = nodes_[static_cast<std::size_t>(v.idx)];
        if (!n.rg) continue;
        if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
            throw std::invalid_argument("backward: seed shape mismatch");
        n.grad += g;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->rg && it->back) it->back();
    }
}

}  // namespace frameoracle::ad
