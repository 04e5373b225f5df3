#include <doctest.h>

#include <cmath>

#include "hetmeta/error.hpp"
#include "hetmeta/gradcheck.hpp"
#include "hetmeta/ops.hpp"
#include "hetmeta/tape.hpp"
#include "hetmeta/tensor.hpp"

using namespace hetmeta;

namespace {

Tensor rnd(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Max relative error of reverse-mode vs central finite differences for a
// unary primitive applied to random shapes.
double fd_unary(Tensor (*op)(const Tensor&), Rng& rng, double lo, double hi,
                bool scalar_ok = true) {
    const std::vector<Shape> shapes =
        scalar_ok ? std::vector<Shape>{{}, {5}, {3, 4}} : std::vector<Shape>{{5}, {3, 4}};
    double worst = 0.0;
    for (const Shape& s : shapes) {
        std::vector<Tensor> at = {rnd(s, rng, lo, hi)};
        const gradcheck::LossFn fn = [op](const std::vector<Tensor>& v) {
            Tensor y = op(v[0]);
            return sum_all(mul(y, y));
        };
        worst = std::max(worst, gradcheck::max_grad_discrepancy(fn, at, 1e-6));
    }
    return worst;
}

} // namespace

TEST_CASE("primitive forward examples") {
    // matmul against the identity leaves the matrix unchanged
    Tensor a = Tensor::from_matrix(2, 2, {1, 2, 3, 4});
    Tensor eye = Tensor::from_matrix(2, 2, {1, 0, 0, 1});
    Tensor r = matmul(a, eye);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == doctest::Approx(a[i]));

    CHECK(sigmoid(Tensor::from_vector({0.0}))[0] == doctest::Approx(0.5));

    Tensor sm = softmax(Tensor::from_vector({1.3, 1.3, 1.3}));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(sm[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("shape mismatch diagnostics name the primitive and both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 3});
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[3x3]") != std::string::npos);
    }
    CHECK_THROWS_AS((void)matmul(a, Tensor::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS((void)concat({a, Tensor::zeros({2, 4})}, 0), ShapeError);
    CHECK_THROWS_AS((void)broadcast_to(Tensor::zeros({3}), {3, 4}), ShapeError);
}

TEST_CASE("backward: d(x*x)/dx = 2x") {
    Tape tape;
    Tensor x = Tensor::scalar(3.0);
    tape.watch(x);
    Tensor f = mul(x, x);
    GradMap g = tape.gradient(f, Tensor::scalar(1.0));
    CHECK(g.at(x).value() == doctest::Approx(6.0));
}

TEST_CASE("backward: sigmoid'(0) = 0.25") {
    Tape tape;
    Tensor x = Tensor::scalar(0.0);
    tape.watch(x);
    Tensor f = sigmoid(x);
    GradMap g = tape.gradient(f);
    CHECK(g.at(x).value() == doctest::Approx(0.25));
}

TEST_CASE("backward rejects outputs foreign to the tape") {
    Tape tape;
    Tensor x = Tensor::scalar(1.0);
    tape.watch(x);
    Tensor unrelated = mul(Tensor::scalar(2.0), Tensor::scalar(3.0));
    CHECK_THROWS_AS((void)tape.gradient(unrelated), ValueError);

    Tensor y = mul(x, x);
    CHECK_THROWS_AS((void)tape.gradient(y, Tensor::zeros({2})), ShapeError);
    // non-scalar output without a seed
    Tensor v = add(broadcast_to(x, {3}), Tensor::ones({3}));
    CHECK_THROWS_AS((void)tape.gradient(v), ShapeError);
}

TEST_CASE("cross-entropy values and gradient") {
    // uniform logits: loss = log(n_way)
    Tensor uniform = Tensor::from_vector({0, 0, 0, 0, 0});
    CHECK(cross_entropy_loss(uniform, 2).value() == doctest::Approx(std::log(5.0)));

    // direct 64-bit evaluation oracle for logits [10, 0], label 0
    const double expected = -std::log(1.0 / (1.0 + std::exp(-10.0)));
    CHECK(cross_entropy_loss(Tensor::from_vector({10.0, 0.0}), 0).value() ==
          doctest::Approx(expected).epsilon(1e-12));

    // gradient at uniform logits is softmax - one_hot = 1/N - one_hot
    Tape tape;
    tape.watch(uniform);
    GradMap g = tape.gradient(cross_entropy_loss(uniform, 2));
    const Tensor gu = g.at(uniform);
    for (std::size_t i = 0; i < 5; ++i) {
        const double want = 0.2 - (i == 2 ? 1.0 : 0.0);
        CHECK(gu[i] == doctest::Approx(want).epsilon(1e-12));
    }

    CHECK_THROWS_AS((void)cross_entropy_loss(uniform, 5), ValueError);
}

TEST_CASE("every primitive matches central finite differences") {
    // 20 random shapes per primitive, rel err < 1e-5 (step 1e-6).
    const double tol = 1e-5;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 31);

        CHECK(fd_unary(&sigmoid, rng, -2, 2) < tol);
        CHECK(fd_unary(&hetmeta::tanh, rng, -2, 2) < tol);
        CHECK(fd_unary(&hetmeta::exp, rng, -1, 1) < tol);
        CHECK(fd_unary(&hetmeta::log, rng, 0.5, 2.0) < tol);
        CHECK(fd_unary(&recip, rng, 0.5, 2.0) < tol);
        CHECK(fd_unary(&softmax, rng, -2, 2, /*scalar_ok=*/false) < tol);

        // binary elementwise + scale
        {
            std::vector<Tensor> at = {rnd({3, 4}, rng), rnd({3, 4}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor y = add(mul(v[0], v[1]), scale(sub(v[0], v[1]), 0.7));
                return sum_all(mul(y, y));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
        // matmul / transpose
        {
            std::vector<Tensor> at = {rnd({2, 3}, rng), rnd({3, 4}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor y = matmul(v[0], v[1]);
                return sum_all(mul(y, transpose(transpose(y))));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
        // matvec / dot / outer
        {
            std::vector<Tensor> at = {rnd({3, 4}, rng), rnd({4}, rng), rnd({3}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor y = matvec(v[0], v[1]);
                Tensor o = outer(y, v[1]);
                return add(dot(y, v[2]), sum_all(mul(o, o)));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
        // linear rank-1 and rank-2
        {
            std::vector<Tensor> at = {rnd({4}, rng), rnd({3, 4}, rng), rnd({3}, rng),
                                      rnd({5, 4}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor y1 = linear(v[0], v[1], v[2]);
                Tensor y2 = linear(v[3], v[1], v[2]);
                return add(sum_all(mul(y1, y1)), sum_all(mul(y2, y2)));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
        // reductions and broadcasts
        {
            std::vector<Tensor> at = {rnd({3, 4}, rng), rnd({4}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor a = broadcast_to(v[1], {3, 4});
                Tensor b = broadcast_last(sum_last(v[0]), 4);
                Tensor c = mul(add(a, b), v[0]);
                return add(sum_all(c), mean_all(sum_leading(c, 1)));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
        // concat / slice / stack / index / reshape
        {
            std::vector<Tensor> at = {rnd({3}, rng), rnd({4}, rng), rnd({3}, rng)};
            const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
                Tensor cat = concat({v[0], v[1]}, 0);
                Tensor sl = slice(cat, 0, 2, 3);
                Tensor st = stack({v[0], v[2]});
                Tensor row = index_leading(st, 1);
                Tensor rs = reshape(st, {3, 2});
                return add(sum_all(mul(sl, sl)),
                           add(sum_all(mul(row, row)), sum_all(mul(rs, rs))));
            };
            CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < tol);
        }
    }
}

TEST_CASE("composed network loss matches finite differences") {
    Rng rng(7);
    std::vector<Tensor> at = {rnd({4, 3}, rng), rnd({4}, rng), rnd({2, 4}, rng), rnd({2}, rng),
                              rnd({3}, rng)};
    const gradcheck::LossFn fn = [](const std::vector<Tensor>& v) {
        Tensor h = hetmeta::tanh(linear(v[4], v[0], v[1]));
        Tensor logits = linear(h, v[2], v[3]);
        return cross_entropy_loss(logits, 1);
    };
    CHECK(gradcheck::max_grad_discrepancy(fn, at, 1e-6) < 1e-5);
}

TEST_CASE("second order: grad-of-grad of tanh(xw)^2 w.r.t. w") {
    const double x0 = 0.7;
    const double w0 = 0.3;

    auto first_grad = [&](double wv) {
        Tape t;
        Tensor w = Tensor::scalar(wv);
        t.watch(w);
        Tensor th = hetmeta::tanh(mul(Tensor::scalar(x0), w));
        Tensor f = mul(th, th);
        return t.gradient(f).at(w).value();
    };

    double second_ad = 0.0;
    {
        Tape outer;
        Tensor w = Tensor::scalar(w0);
        outer.watch(w);
        Tensor gw;
        {
            Tape inner;
            inner.watch(w);
            Tensor th = hetmeta::tanh(mul(Tensor::scalar(x0), w));
            Tensor f = mul(th, th);
            gw = inner.gradient(f).at(w);
        }
        second_ad = outer.gradient(gw).at(w).value();
    }

    const double h = 1e-6;
    const double second_fd = (first_grad(w0 + h) - first_grad(w0 - h)) / (2.0 * h);
    CHECK(gradcheck::relative_error(second_ad, second_fd) < 1e-4);

    // analytic cross-check: d/dw [2 x tanh(xw) (1 - tanh^2(xw))]
    const double t = std::tanh(x0 * w0);
    const double analytic = 2.0 * x0 * x0 * (1.0 - t * t) * (1.0 - 3.0 * t * t);
    CHECK(gradcheck::relative_error(second_ad, analytic) < 1e-9);
}

TEST_CASE("disconnected leaves receive exact zeros") {
    Tape tape;
    Tensor x = Tensor::scalar(2.0);
    Tensor y = Tensor::from_vector({1.0, 2.0});
    tape.watch(x);
    tape.watch(y);
    Tensor f = mul(x, x);
    GradMap g = tape.gradient(f);
    const Tensor gy = g.at(y);
    REQUIRE(gy.shape() == Shape{2});
    CHECK(gy[0] == 0.0);
    CHECK(gy[1] == 0.0);
}

TEST_CASE("repeated backward on one tape is bit-identical") {
    Rng rng(11);
    Tape tape;
    Tensor w = rnd({3, 3}, rng);
    Tensor x = rnd({3}, rng);
    tape.watch(w);
    tape.watch(x);
    Tensor f = sum_all(softmax(matvec(w, hetmeta::tanh(x))));
    GradMap a = tape.gradient(f, Tensor::scalar(1.0));
    GradMap b = tape.gradient(f, Tensor::scalar(1.0));
    CHECK(bit_equal(a.at(w), b.at(w)));
    CHECK(bit_equal(a.at(x), b.at(x)));
}

TEST_CASE("detach severs tape linkage") {
    Tape tape;
    Tensor x = Tensor::scalar(1.5);
    tape.watch(x);
    Tensor f = mul(detach(mul(x, x)), x);
    GradMap g = tape.gradient(f);
    // only the direct factor contributes: d/dx [c * x] = c = x^2
    CHECK(g.at(x).value() == doctest::Approx(2.25));
}

TEST_CASE("tensors without tape linkage flow forward only") {
    Tensor a = Tensor::from_vector({1, 2, 3});
    Tensor b = add(a, a);
    CHECK(b[2] == doctest::Approx(6.0));
    CHECK(detail::active_tape_depth() == 0);
}
