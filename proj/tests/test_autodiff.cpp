#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "frameoracle/autodiff.hpp"
#include "frameoracle/common.hpp"

using frameoracle::Rng;
using frameoracle::ad::Matrix;
using frameoracle::ad::Tape;
using frameoracle::ad::Var;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.gaussian();
    return m;
}

// Checks analytic gradients of loss = <W, build(inputs)> against central
// finite differences over every input coordinate.
void check_op(std::vector<Matrix> inputs,
              const std::function<Var(Tape&, const std::vector<Var>&)>& build,
              double tol = 5e-7) {
    Rng rng(99);
    // Analytic pass to get output shape and gradients.
    std::vector<Matrix> analytic;
    Matrix weights;
    {
        Tape t;
        std::vector<Var> vars;
        for (const auto& m : inputs) vars.push_back(t.leaf(m, true));
        Var out = build(t, vars);
        weights = random_matrix(rng, static_cast<int>(t.val(out).rows()),
                                static_cast<int>(t.val(out).cols()));
        t.backward({{out, weights}});
        for (Var v : vars) analytic.push_back(t.grad(v));
    }
    auto loss_at = [&](const std::vector<Matrix>& xs) {
        Tape t;
        std::vector<Var> vars;
        for (const auto& m : xs) vars.push_back(t.leaf(m, false));
        Var out = build(t, vars);
        return (t.val(out).cwiseProduct(weights)).sum();
    };
    const double h = 1e-5;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (int r = 0; r < inputs[i].rows(); ++r) {
            for (int c = 0; c < inputs[i].cols(); ++c) {
                std::vector<Matrix> plus = inputs, minus = inputs;
                plus[i](r, c) += h;
                minus[i](r, c) -= h;
                const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
                const double an = analytic[i](r, c);
                const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
                CAPTURE(i);
                CAPTURE(r);
                CAPTURE(c);
                CHECK(err < tol);
            }
        }
    }
}

}  // namespace

TEST_CASE("matmul forward and gradient") {
    Rng rng(1);
    Tape t;
    Var a = t.leaf(random_matrix(rng, 3, 4), true);
    Var b = t.leaf(random_matrix(rng, 4, 2), true);
    Var c = t.matmul(a, b);
    CHECK(t.val(c).rows() == 3);
    CHECK(t.val(c).cols() == 2);
    CHECK((t.val(c) - t.val(a) * t.val(b)).norm() == doctest::Approx(0.0));

    check_op({random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)},
             [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); });
}

TEST_CASE("elementwise ops gradients") {
    Rng rng(2);
    check_op({random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); });
    check_op({random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.sub(v[0], v[1]); });
    check_op({random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.cmul(v[0], v[1]); });
    check_op({random_matrix(rng, 2, 5)},
             [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.7); });
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.add_rowvec(v[0], v[1]); });
}

TEST_CASE("gelu gradient") {
    Rng rng(3);
    check_op({random_matrix(rng, 4, 4)},
             [](Tape& t, const std::vector<Var>& v) { return t.gelu(v[0]); });
}

TEST_CASE("layer norm gradient") {
    Rng rng(4);
    Matrix gamma = random_matrix(rng, 1, 6);
    gamma.array() += 1.5;  // keep away from zero
    check_op({random_matrix(rng, 3, 6), gamma, random_matrix(rng, 1, 6)},
             [](Tape& t, const std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2]); },
             2e-6);
}

TEST_CASE("layer norm normalizes rows") {
    Rng rng(5);
    Tape t;
    Var x = t.leaf(random_matrix(rng, 3, 8), false);
    Var g = t.leaf(Matrix::Ones(1, 8), false);
    Var b = t.leaf(Matrix::Zero(1, 8), false);
    Var y = t.layer_norm(x, g, b);
    for (int r = 0; r < 3; ++r) {
        CHECK(t.val(y).row(r).mean() == doctest::Approx(0.0).epsilon(1e-10));
        const double var = t.val(y).row(r).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("softmax rows: gradient and normalization") {
    Rng rng(6);
    Tape t;
    Var x = t.leaf(random_matrix(rng, 3, 5), false);
    Var p = t.softmax_rows(x);
    for (int r = 0; r < 3; ++r) CHECK(t.val(p).row(r).sum() == doctest::Approx(1.0));

    check_op({random_matrix(rng, 3, 5)},
             [](Tape& t, const std::vector<Var>& v) { return t.softmax_rows(v[0]); });
}

TEST_CASE("shape ops gradients") {
    Rng rng(7);
    check_op({random_matrix(rng, 3, 6)},
             [](Tape& t, const std::vector<Var>& v) { return t.col_block(v[0], 2, 3); });
    check_op({random_matrix(rng, 4, 2), random_matrix(rng, 4, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.concat_cols({v[0], v[1]}); });
    check_op({random_matrix(rng, 5, 3)},
             [](Tape& t, const std::vector<Var>& v) { return t.mean_rows(v[0]); });
    check_op({random_matrix(rng, 3, 4)},
             [](Tape& t, const std::vector<Var>& v) { return t.transpose(v[0]); });
}

TEST_CASE("composite attention-like graph gradient") {
    Rng rng(8);
    check_op(
        {random_matrix(rng, 4, 6), random_matrix(rng, 6, 6), random_matrix(rng, 6, 6),
         random_matrix(rng, 6, 6)},
        [](Tape& t, const std::vector<Var>& v) {
            Var q = t.matmul(v[0], v[1]);
            Var k = t.matmul(v[0], v[2]);
            Var val = t.matmul(v[0], v[3]);
            Var attn = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(6.0)));
            return t.matmul(attn, val);
        },
        2e-6);
}

TEST_CASE("gradient accumulates when a node is reused") {
    Tape t;
    Matrix x(1, 1);
    x << 2.0;
    Var a = t.leaf(x, true);
    Var y = t.cmul(a, a);  // y = a^2, dy/da = 2a = 4
    t.backward({{y, Matrix::Ones(1, 1)}});
    CHECK(t.grad(a)(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("constants collect no gradients and backward runs once") {
    Tape t;
    Var c = t.constant(Matrix::Ones(2, 2));
    Var a = t.leaf(Matrix::Ones(2, 2), true);
    Var y = t.cmul(a, c);
    t.backward({{y, Matrix::Ones(2, 2)}});
    CHECK(t.grad(a).sum() == doctest::Approx(4.0));
    CHECK_THROWS_AS(t.backward({{y, Matrix::Ones(2, 2)}}), std::logic_error);
}

TEST_CASE("dropout mask scales gradients by the mask") {
    Tape t;
    Var a = t.leaf(Matrix::Ones(2, 2), true);
    Matrix mask(2, 2);
    mask << 2.0, 0.0, 0.0, 2.0;
    Var y = t.cmul_const(a, mask);
    t.backward({{y, Matrix::Ones(2, 2)}});
    CHECK(t.grad(a)(0, 0) == doctest::Approx(2.0));
    CHECK(t.grad(a)(0, 1) == doctest::Approx(0.0));
}
