// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ndft/gradcheck.hpp"
#include "ndft/losses.hpp"
#include "ndft/rng.hpp"
#include "ndft/tensor.hpp"

using namespace ndft;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

// Direct-summation convolution, independent of the im2col path.
std::vector<double> conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                                   std::size_t pad) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), K = w.dim(2);
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    std::vector<double> out(B * Co * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double s = b.defined() ? b.at(co) : 0.0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t i = 0; i < K; ++i)
                            for (std::size_t j = 0; j < K; ++j) {
                                const long iy = long(oy * stride + i) - long(pad);
                                const long ix = long(ox * stride + j) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                                s += x.at(((n * Ci + ci) * H + iy) * W + ix) * w.at(((co * Ci + ci) * K + i) * K + j);
                            }
                    out[((n * Co + co) * Ho + oy) * Wo + ox] = s;
                }
    return out;
}

// Reduces an op output to a scalar through fixed random weights so every
// output coordinate contributes to the checked gradient.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

void expect_gradcheck(const ScalarFn& fn, const Tensor& point, double tol = 1e-4) {
    const auto report = gradcheck(fn, point, {.step = 1e-5, .tolerance = tol});
    INFO("max rel err " << report.max_rel_error << " at " << report.worst_coordinate);
    CHECK(report.passed);
}

}  // namespace

TEST_CASE("matmul by identity returns the input") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor c = matmul(a, eye);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor p = softmax(Tensor::from({1, 3}, {0, 0, 0}), 1);
    for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax is stable for large logits") {
    Tensor p = softmax(Tensor::from({1, 2}, {1000.0, 0.0}), 1);
    CHECK(p.at(0) == doctest::Approx(1.0));
    CHECK(std::isfinite(p.at(1)));
}

TEST_CASE("conv2d of ones with a ones kernel sums to 9") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, w, Tensor{}, {.stride = 1, .padding = 0});
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d matches direct summation across strides and paddings") {
    Rng rng(11);
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u, 2u}) {
            Tensor x = random_tensor({2, 3, 7, 6}, rng);
            Tensor w = random_tensor({4, 3, 3, 3}, rng);
            Tensor b = random_tensor({4}, rng);
            Tensor y = conv2d(x, w, b, {.stride = stride, .padding = pad});
            const auto ref = conv_reference(x, w, b, stride, pad);
            REQUIRE(y.size() == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("shape errors name the op and both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
    CHECK_THROWS_AS(softmax(a, 2), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor{}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("backward of sum of squares") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("cross-entropy gradient at uniform logits") {
    Tensor logits = Tensor::from({1, 2}, {0, 0}, true);
    const int label = 0;
    backward(cross_entropy(logits, std::span<const int>(&label, 1)));
    CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gradients accumulate over repeated uses of a leaf") {
    Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
    backward(sum(add(add(x, x), mul(x, x))));  // d/dx (2x + x^2) = 2 + 2x
    CHECK(x.grad()[0] == doctest::Approx(5.0));
    CHECK(x.grad()[1] == doctest::Approx(-2.0));
    backward(sum(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
    CHECK_THROWS_AS(backward(sum(Tensor::from({2}, {1, 2}))), ContractError);
}

TEST_CASE("no-grad guard stops recording") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard guard;
    Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node().parents.empty());
}

TEST_CASE("gradcheck on sum of squares is essentially exact") {
    const auto report = gradcheck([](const Tensor& x) { return sum(mul(x, x)); }, Tensor::from({3}, {1, 2, 3}));
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-8);
    CHECK(report.coordinates == 3);
}

TEST_CASE("gradcheck on negative entropy of softmax") {
    const auto report = gradcheck([](const Tensor& x) { return negative_entropy(x); },
                                  Tensor::from({1, 3}, {0.3, -0.1, 0.7}), {.tolerance = 1e-4});
    CHECK(report.passed);
}

TEST_CASE("gradcheck flags an op with a wrong backward rule") {
    auto broken_square = [](const Tensor& x) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * x.at(i);
        return make_op_result("broken_square", x.shape(), std::move(out), {x}, [](Node& self) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.parents[0]->data[i];  // drops 2x
        });
    };
    const auto report = gradcheck([&](const Tensor& x) { return sum(broken_square(x)); }, Tensor::from({3}, {1, 2, 3}));
    CHECK_FALSE(report.passed);
    CHECK(report.max_rel_error > 0.1);
}

TEST_CASE("gradcheck reports the perturbed coordinate when fn throws") {
    auto fn = [](const Tensor& x) {
        if (x.at(1) > 2.0) throw std::runtime_error("domain");
        return sum(mul(x, x));
    };
    try {
        gradcheck(fn, Tensor::from({3}, {0.0, 2.0, 0.0}), {.step = 1e-3});
        FAIL("expected GradcheckError");
    } catch (const GradcheckError& e) {
        CHECK(e.coordinate() == 1);
    }
}

TEST_CASE("every differentiable op passes gradcheck at 20 random points") {
    Rng rng(2026);
    for (int trial = 0; trial < 20; ++trial) {
        const std::uint64_t s = 1000 + trial;
        CAPTURE(trial);
        Tensor other = random_tensor({3, 4}, rng);
        Tensor row = random_tensor({4}, rng);
        Tensor rhs = random_tensor({4, 2}, rng);
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(add(x, other), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(add(other, x), s); }, random_tensor({4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(sub(other, x), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(mul(x, other), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(scale(x, -1.7), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(matmul(x, rhs), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(matmul(other, x), s); }, random_tensor({4, 2}, rng));
        (void)row;

        Tensor img = random_tensor({2, 2, 5, 5}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        const Conv2dOptions co{.stride = 1 + static_cast<std::size_t>(trial % 2), .padding = 1};
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(conv2d(x, w, b, co), s); }, img);
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(conv2d(img, x, b, co), s); }, w);
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(conv2d(img, w, x, co), s); }, b);

        expect_gradcheck([&](const Tensor& x) { return weighted_sum(relu(x), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(max_pool2d(x, 2, 2), s); },
                         random_tensor({2, 2, 4, 6}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(global_avg_pool(x), s); },
                         random_tensor({2, 3, 3, 2}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(reshape(x, {4, 3}), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck(
            [&](const Tensor& x) {
                const Tensor parts[] = {x, other, x};
                return weighted_sum(concat(parts, 1), s);
            },
            random_tensor({3, 4}, rng));
        expect_gradcheck(
            [&](const Tensor& x) {
                const Tensor parts[] = {other, x};
                return weighted_sum(concat(parts, 0), s);
            },
            random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(softmax(x, 1), s); }, random_tensor({3, 4}, rng, -3, 3));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(softmax(x, 0), s); }, random_tensor({3, 4}, rng, -3, 3));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(log_softmax(x, 1), s); },
                         random_tensor({3, 4}, rng, -3, 3));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(log(x), s); }, random_tensor({3, 4}, rng, 0.5, 2.0));
        expect_gradcheck([&](const Tensor& x) { return scale(sum(x), 0.3); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return mean(mul(x, x)); }, random_tensor({3, 4}, rng));
        const std::vector<int> idx{2, 0, 3};
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(pick(x, idx), s); }, random_tensor({3, 4}, rng));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(smooth_l1(x), s); }, random_tensor({3, 4}, rng, -3, 3));
        expect_gradcheck([&](const Tensor& x) { return weighted_sum(standardize_batch(x), s); },
                         random_tensor({5, 3}, rng));
    }
}

TEST_CASE("standardize_batch gives zero-mean unit-variance columns") {
    Tensor x = Tensor::from({4, 2}, {1.0, 10.0, 2.0, 10.0, 3.0, 10.0, 6.0, 10.0});
    Tensor y = standardize_batch(x, 0.0 + 1e-300);
    // column 0: mean 3, biased variance 3.5
    CHECK(y.at(0) == doctest::Approx(-2.0 / std::sqrt(3.5)).epsilon(1e-12));
    CHECK(y.at(6) == doctest::Approx(3.0 / std::sqrt(3.5)).epsilon(1e-12));
    // a constant column maps to zero instead of dividing by zero
    for (std::size_t r = 0; r < 4; ++r) CHECK(y.at(r * 2 + 1) == 0.0);
}

TEST_CASE("grad_reverse flips and scales the gradient") {
    Tensor x = Tensor::from({2}, {1.0, -1.0}, true);
    Tensor y = grad_reverse(x, 0.5);
    CHECK(y.at(0) == 1.0);
    backward(sum(mul(y, y)));
    CHECK(x.grad()[0] == doctest::Approx(-1.0));
    CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("random two-layer conv net matches finite differences for every parameter") {
    Rng rng(77);
    Tensor img = random_tensor({2, 1, 6, 6}, rng);
    std::vector<Tensor> params{random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng),
                               random_tensor({2, 3, 3, 3}, rng), random_tensor({2}, rng)};
    auto net = [&](const std::vector<Tensor>& p) {
        Tensor h = max_pool2d(relu(conv2d(img, p[0], p[1], {.stride = 1, .padding = 1})), 2, 2);
        Tensor o = relu(conv2d(h, p[2], p[3], {.stride = 1, .padding = 1}));
        const std::vector<int> labels{1, 0};
        return cross_entropy(global_avg_pool(o), labels);
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
        CAPTURE(k);
        expect_gradcheck(
            [&](const Tensor& x) {
                auto p = params;
                p[k] = x;
                return net(p);
            },
            params[k]);
    }
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(5);
    Tensor x0 = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 2}, rng);
    auto f = [&](const Tensor& x) { return sum(relu(matmul(x, w))); };
    auto g = [&](const Tensor& x) { return negative_entropy(x); };
    const double a = 0.7, b = -2.3;
    auto grad_of = [&](auto&& fn) {
        Tensor x = x0.clone();
        x.set_requires_grad(true);
        backward(fn(x));
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto gf = grad_of(f);
    const auto gg = grad_of(g);
    const auto gc = grad_of([&](const Tensor& x) { return add(scale(f(x), a), scale(g(x), b)); });
    for (std::size_t i = 0; i < gc.size(); ++i) CHECK(std::abs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
}

TEST_CASE("replaying a graph gives bit-identical outputs and gradients") {
    Rng rng(9);
    Tensor img = random_tensor({2, 1, 6, 6}, rng);
    Tensor w0 = random_tensor({3, 1, 3, 3}, rng);
    auto run = [&]() {
        Tensor w = w0.clone();
        w.set_requires_grad(true);
        Tensor loss = sum(softmax(global_avg_pool(relu(conv2d(img, w, Tensor{}, {.padding = 1}))), 1));
        loss = add(loss, mean(mul(w, w)));
        backward(loss);
        std::vector<double> out{loss.item()};
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    CHECK(run() == run());
}
