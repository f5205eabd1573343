#include "support/gradcheck_cases.hpp"

#include "corrshift/error.hpp"
#include "corrshift/optim.hpp"

#include <doctest.h>

#include <cmath>

using namespace corrshift;
using namespace corrshift::testing;

TEST_CASE("every primitive matches central differences") {
    CounterRng rng(2024, 1);
    for (const GradCase& c : primitive_grad_cases()) {
        std::vector<Tensor> inputs;
        for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng));
        const double err = gradcheck(c.fn, inputs);
        INFO(c.name << " relative error " << err);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
    CHECK(t.ensure_grad().size() == 6);
    CHECK_THROWS_AS(Tensor(Shape{2, 3}).reshaped({4}), ShapeError);
    CHECK(Tensor::matrix(2, 2, {1, 2, 3, 4}).matrix()(1, 0) == 3.0);
}

TEST_CASE("shape errors name the op and both shapes") {
    Tape tape;
    Var a = tape.constant(Tensor(Shape{2, 3}));
    Var b = tape.constant(Tensor(Shape{2, 3}));
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2, 3)") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, tape.constant(Tensor(Shape{3, 2}))), ShapeError);
    CHECK_THROWS_AS(conv2d(a, b, 0), ShapeError);
    CHECK_THROWS_AS(avg_pool2d(tape.constant(Tensor(Shape{1, 1, 3, 3})), 2), ShapeError);
}

TEST_CASE("backward rules: scalar root, consumed tape, leaf accumulation") {
    Tensor x = Tensor::vector({1.0, -2.0, 3.0});
    x.set_requires_grad(true);
    Tape tape;
    Var v = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(v), TapeError);

    Var y = sum_squares(v) + sum(v);  // x used twice: grads must add
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(-3.0));
    CHECK(x.grad()[2] == doctest::Approx(7.0));
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("consumed"), TapeError);

    // A second pass overwrites rather than accumulates across passes.
    Var z = sum(tape.leaf(x));
    tape.backward(z);
    CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("view leaves never receive gradients") {
    Tensor w = Tensor::vector({2.0, 3.0});
    Tensor x = Tensor::vector({1.0, 1.0});
    x.set_requires_grad(true);
    Tape tape;
    Var out = sum(mul(tape.view(w), tape.leaf(x)));
    tape.backward(out);
    CHECK_FALSE(w.has_grad());
    CHECK(x.grad()[1] == 3.0);
}

TEST_CASE("relu subgradient at zero is zero") {
    Tensor x = Tensor::vector({0.0, 1.0, -1.0});
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(relu(tape.leaf(x))));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("conv2d matches a direct loop") {
    CounterRng rng(5, 5);
    Tensor x = random_tensor({2, 3, 5, 4}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tape tape;
    const Tensor out = conv2d(tape.view(x), tape.view(k), 1).value();
    REQUIRE(out.shape() == Shape{2, 4, 5, 4});
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (std::size_t a = 0; a < 3; ++a)
                            for (std::size_t b = 0; b < 3; ++b) {
                                const long r = static_cast<long>(i + a) - 1, s = static_cast<long>(j + b) - 1;
                                if (r < 0 || s < 0 || r >= 5 || s >= 4) continue;
                                acc += x[((n * 3 + c) * 5 + r) * 4 + s] * k[((o * 3 + c) * 3 + a) * 3 + b];
                            }
                    worst = std::max(worst, std::abs(acc - out[((n * 4 + o) * 5 + i) * 4 + j]));
                }
    CHECK(worst < 1e-12);
}

TEST_CASE("softmax cross-entropy is stable for large logits") {
    Tape tape;
    Var l = tape.constant(Tensor::matrix(2, 2, {1000.0, 0.0, 0.0, 1000.0}));
    const std::vector<int> y{0, 0};
    const double v = softmax_cross_entropy(l, y).item();
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(500.0));
    const std::vector<int> bad{0, 2};
    CHECK_THROWS_AS(softmax_cross_entropy(l, bad), ShapeError);
}

TEST_CASE("adam: step count, shape checks, known first step") {
    Tensor p = Tensor::vector({1.0, -1.0});
    p.set_requires_grad(true);
    p.ensure_grad()[0] = 0.5;
    p.grad()[1] = -2.0;
    AdamState st(AdamOptions{.lr = 0.1});
    Tensor* params[] = {&p};
    adam_step(st, params);
    CHECK(st.step_count() == 1);
    // First bias-corrected step moves each coordinate by lr * sign(g).
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(-0.9).epsilon(1e-6));

    Tensor q(Shape{3});
    q.ensure_grad();
    Tensor* two[] = {&p, &q};
    CHECK_THROWS(adam_step(st, two));
    Tensor r(Shape{2});
    Tensor* nograd[] = {&r};
    CHECK_THROWS(adam_step(st, nograd));
}

TEST_CASE("lbfgs solves a convex quadratic") {
    // f = 0.5 x^T A x - b^T x with A = diag(1, 10, 100).
    Tensor x(Shape{3});
    const double a[] = {1.0, 10.0, 100.0}, b[] = {1.0, 2.0, 3.0};
    Tensor* params[] = {&x};
    auto eval = [&] {
        auto g = x.ensure_grad();
        double f = 0.0;
        for (int i = 0; i < 3; ++i) {
            f += 0.5 * a[i] * x[i] * x[i] - b[i] * x[i];
            g[i] = a[i] * x[i] - b[i];
        }
        return f;
    };
    const LbfgsReport rep = lbfgs_minimize(params, eval);
    CHECK(rep.converged);
    for (int i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(b[i] / a[i]).epsilon(1e-9));
}
