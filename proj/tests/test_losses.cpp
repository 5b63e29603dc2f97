// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "ndft/gradcheck.hpp"
#include "ndft/losses.hpp"
#include "ndft/rng.hpp"

using namespace ndft;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

// Closed forms evaluated directly, outside the tensor engine.
double smooth_l1_scalar(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

double negent_of_probs(const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p) s += v > 0.0 ? v * std::log(v) : 0.0;
    return s;
}

}  // namespace

TEST_CASE("cross-entropy at uniform logits is ln 2") {
    const std::vector<int> y{0};
    CHECK(std::abs(cross_entropy(Tensor::from({1, 2}, {0, 0}), y).item() - std::log(2.0)) <= 1e-10);
}

TEST_CASE("smooth-l1 box residuals match the closed form") {
    for (double x : {0.0, 0.5, 2.0, -0.5, -2.0, 0.999, 1.0}) {
        Tensor pred = Tensor::from({1, 4}, {x, 0, 0, 0});
        Tensor target = Tensor::zeros({1, 4});
        const std::vector<int> y{0};
        auto t = task_loss(Tensor::from({1, 2}, {0, 0}), pred, y, target);
        CHECK(std::abs(4.0 * t.box.item() - smooth_l1_scalar(x)) <= 1e-10);
    }
    CHECK(smooth_l1_scalar(0.5) == 0.125);
    CHECK(smooth_l1_scalar(2.0) == 1.5);
}

TEST_CASE("perfect prediction drives the task loss to zero") {
    const std::vector<int> y{1, 0};
    Tensor boxes = Tensor::from({2, 4}, {0.1, 0.2, 0.5, 0.6, 0.3, 0.3, 0.9, 0.8});
    double prev = 1e9;
    for (double margin : {5.0, 10.0, 20.0, 40.0}) {
        Tensor logits = Tensor::from({2, 2}, {0, margin, margin, 0});
        auto t = task_loss(logits, boxes.clone(), y, boxes);
        const double total = t.cls.item() + t.box.item();
        CHECK(total < prev);
        prev = total;
    }
    CHECK(prev < 1e-15);
}

TEST_CASE("labels out of range are rejected") {
    const std::vector<int> bad{3};
    CHECK_THROWS_AS(nuisance_ce(Tensor::zeros({1, 3}), bad), std::out_of_range);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(task_loss(Tensor::zeros({1, 4}), Tensor::zeros({1, 4}), neg, Tensor::zeros({1, 4})),
                    std::out_of_range);
}

TEST_CASE("nuisance cross-entropy oracles") {
    const std::vector<int> y0{0};
    CHECK(std::abs(nuisance_ce(Tensor::zeros({1, 3}), y0).item() - std::log(3.0)) <= 1e-10);
    CHECK(nuisance_ce(Tensor::from({1, 3}, {50, 0, 0}), y0).item() < 1e-20);
    const std::vector<int> y1{1};
    CHECK(std::abs(nuisance_ce(Tensor::from({1, 2}, {1, 0}), y1).item() - std::log(1.0 + std::exp(1.0))) <= 1e-10);
    CHECK(std::log(1.0 + std::exp(1.0)) == doctest::Approx(1.3133).epsilon(1e-4));
}

TEST_CASE("negative entropy oracles") {
    CHECK(std::abs(negative_entropy(Tensor::zeros({1, 3})).item() + std::log(3.0)) <= 1e-10);
    CHECK(std::abs(negative_entropy(Tensor::from({1, 3}, {800.0, 0.0, 0.0})).item()) <= 1e-10);
    // p = [0.5, 0.25, 0.25] from logits ln p
    const double expected = negent_of_probs({0.5, 0.25, 0.25});
    CHECK(expected == doctest::Approx(-1.0397).epsilon(1e-4));
    Tensor logits = Tensor::from({1, 3}, {std::log(0.5), std::log(0.25), std::log(0.25)});
    CHECK(std::abs(negative_entropy(logits).item() - expected) <= 1e-10);
}

TEST_CASE("negative entropy is bounded by -ln(levels) and 0") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t levels = 2 + static_cast<std::size_t>(trial % 4);
        Tensor logits = random_tensor({5, levels}, rng, -10, 10);
        const double v = negative_entropy(logits).item();
        CHECK(v <= 0.0);
        CHECK(v >= -std::log(static_cast<double>(levels)) - 1e-12);
    }
}

TEST_CASE("negative entropy gradient vanishes at uniform logits") {
    for (double c : {0.0, 1.5, -4.0}) {
        Tensor logits = Tensor::full({3, 4}, c, true);
        backward(negative_entropy(logits));
        for (double g : logits.grad()) CHECK(std::abs(g) <= 1e-10);
    }
}

TEST_CASE("loss gradients pass gradcheck") {
    Rng rng(4);
    const std::vector<int> y{0, 2, 1};
    Tensor boxes = random_tensor({3, 4}, rng, 0, 1);
    Tensor logits = random_tensor({3, 3}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        auto ne = gradcheck([](const Tensor& x) { return negative_entropy(x); }, random_tensor({3, 3}, rng));
        CHECK(ne.passed);
        auto ce = gradcheck([&](const Tensor& x) { return nuisance_ce(x, y); }, random_tensor({3, 3}, rng));
        CHECK(ce.passed);
        auto box = gradcheck(
            [&](const Tensor& x) {
                auto t = task_loss(logits, x, y, boxes);
                return add(t.cls, t.box);
            },
            random_tensor({3, 4}, rng, -1.5, 2.5));
        CHECK(box.passed);
    }
}

TEST_CASE("compose reduces to baseline at gamma = 0 bit-exactly") {
    Rng rng(5);
    const std::vector<int> y{0, 1, 3};
    Tensor logits = random_tensor({3, 4}, rng);
    Tensor box = random_tensor({3, 4}, rng, 0, 1);
    Tensor target = random_tensor({3, 4}, rng, 0, 1);
    Tensor n1 = random_tensor({3, 3}, rng);
    Tensor n2 = random_tensor({3, 2}, rng);
    LossParts parts{task_loss(logits, box, y, target), {negative_entropy(n1), negative_entropy(n2)}, {}, {0.0, 0.0}};
    const double ndft_total = compose(LossMode::ndft, parts).total.item();
    const double base_total = compose(LossMode::baseline, parts).total.item();
    CHECK(ndft_total == base_total);
}

TEST_CASE("uniform nuisance predictions reach the entropy lower bound") {
    const std::vector<int> y{0, 1};
    LossParts parts{task_loss(Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), y, Tensor::zeros({2, 4})),
                    {negative_entropy(Tensor::zeros({2, 3})), negative_entropy(Tensor::zeros({2, 2}))},
                    {},
                    {0.5, 2.0}};
    auto b = compose(LossMode::ndft, parts);
    const double bound = 0.5 * -std::log(3.0) + 2.0 * -std::log(2.0);
    CHECK(std::abs(b.total.item() - (b.l_task_cls + b.l_task_box) - bound) <= 1e-12);
}

TEST_CASE("auxiliary and ndft totals differ by sum gamma (L_N - L_ne)") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<int> y{0, 1, 2, 3};
        const std::vector<int> ya{2, 0, 1, 1}, yb{1, 0, 0, 1};
        Tensor n1 = random_tensor({4, 3}, rng), n2 = random_tensor({4, 2}, rng);
        const std::vector<double> gammas{rng.uniform(0, 1), rng.uniform(0, 1)};
        LossParts parts{task_loss(random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), y, random_tensor({4, 4}, rng)),
                        {negative_entropy(n1), negative_entropy(n2)},
                        {nuisance_ce(n1, ya), nuisance_ce(n2, yb)},
                        gammas};
        const auto nd = compose(LossMode::ndft, parts);
        const auto al = compose(LossMode::auxiliary, parts);
        // oracle: closed-form per-row sums, no tensor engine
        double expected = 0.0;
        for (std::size_t k = 0; k < 2; ++k) {
            const Tensor& n = k == 0 ? n1 : n2;
            const auto& lab = k == 0 ? ya : yb;
            const std::size_t C = n.dim(1);
            double ce = 0.0, ne = 0.0;
            for (std::size_t r = 0; r < 4; ++r) {
                double z = 0.0;
                for (std::size_t c = 0; c < C; ++c) z += std::exp(n.at(r * C + c));
                std::vector<double> p(C);
                for (std::size_t c = 0; c < C; ++c) p[c] = std::exp(n.at(r * C + c)) / z;
                ce += -std::log(p[static_cast<std::size_t>(lab[r])]);
                ne += negent_of_probs(p);
            }
            expected += gammas[k] * (ce / 4.0 - ne / 4.0);
        }
        CHECK(std::abs((al.total.item() - nd.total.item()) - expected) <= 1e-12);
    }
}

TEST_CASE("compose checks part counts against gammas and ignores unused parts") {
    const std::vector<int> y{0};
    LossParts parts{task_loss(Tensor::zeros({1, 2}), Tensor::zeros({1, 4}), y, Tensor::zeros({1, 4})),
                    {negative_entropy(Tensor::zeros({1, 3}))},
                    {},
                    {0.1}};
    CHECK_NOTHROW(compose(LossMode::ndft, parts));
    CHECK_THROWS_AS(compose(LossMode::auxiliary, parts), ContractError);
    CHECK_NOTHROW(compose(LossMode::baseline, parts));
    // labels supplied in ndft mode: recorded, never used
    parts.nuisance_ce.push_back(Tensor::scalar(123.0));
    const auto b = compose(LossMode::ndft, parts);
    CHECK(b.l_n.size() == 1);
    CHECK(std::abs(b.total.item() - (std::log(2.0) - 0.1 * std::log(3.0))) <= 1e-12);
}

TEST_CASE("compose does not mutate its inputs") {
    Tensor p = Tensor::from({1, 3}, {0.1, 0.2, 0.3}, true);
    const std::vector<int> y{0};
    LossParts parts{task_loss(Tensor::zeros({1, 2}), Tensor::zeros({1, 4}), y, Tensor::zeros({1, 4})),
                    {negative_entropy(p)},
                    {},
                    {1.0}};
    compose(LossMode::ndft, parts);
    CHECK(p.at(0) == 0.1);
    CHECK_FALSE(p.has_grad());
}
