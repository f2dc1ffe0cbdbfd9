#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace frameoracle::ad {

using Matrix = Eigen::MatrixXd;

// Reverse-mode automatic differentiation over dense matrices. A Tape records
// the forward computation; backward() replays it in reverse, accumulating
// gradients into every node that requires them. Handles stay valid for the
// lifetime of the tape.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value, bool requires_grad);
    Var constant(Matrix value) { return leaf(std::move(value), false); }

    const Matrix& val(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
    const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].grad; }
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].rg; }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);          // same-shape elementwise
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var b);   // b is 1 x C, broadcast over rows of a
    Var cmul(Var a, Var b);
    Var cmul_const(Var a, Matrix m);  // elementwise by a constant (dropout mask)
    Var scale(Var a, double s);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // row-wise
    Var softmax_rows(Var a);
    Var transpose(Var a);
    Var col_block(Var a, int start, int n);
    Var concat_cols(const std::vector<Var>& parts);
    Var mean_rows(Var a);  // 1 x C

    // Seeds the given outputs with upstream gradients and runs the reverse
    // sweep. May be called once per tape.
    void backward(const std::vector<std::pair<Var, Matrix>>& seeds);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool rg = false;
        std::function<void()> back;  // empty for leaves/constants
    };

    Var push(Matrix value, bool rg, std::function<void()> back);
    Matrix& grad_ref(int idx);

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace frameoracle::ad
