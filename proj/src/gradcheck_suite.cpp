// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "ndft/gradcheck.hpp"
#include "ndft/losses.hpp"
#include "ndft/rng.hpp"

namespace ndft {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

// Contracts an op output with fixed random weights so every output
// coordinate reaches the checked gradient.
Tensor weighted_sum(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

struct Case {
    std::string name;
    // Builds the function and the point for one trial.
    std::function<std::pair<ScalarFn, Tensor>(Rng&)> make;
    double expected_factor = 1.0;
};

std::vector<Case> cases() {
    std::vector<Case> out;
    auto unary = [&out](std::string name, Shape shape, double lo, double hi, std::function<Tensor(const Tensor&)> op) {
        out.push_back({std::move(name), [=](Rng& rng) {
                           Tensor x = random_tensor(shape, rng, lo, hi);
                           Tensor w = random_tensor(op(x).shape(), rng);
                           return std::pair<ScalarFn, Tensor>{[=](const Tensor& t) { return weighted_sum(op(t), w); }, x};
                       }});
    };
    auto binary = [&out](std::string name, Shape a_shape, Shape b_shape, bool wrt_first,
                         std::function<Tensor(const Tensor&, const Tensor&)> op) {
        out.push_back({std::move(name), [=](Rng& rng) {
                           Tensor a = random_tensor(a_shape, rng);
                           Tensor b = random_tensor(b_shape, rng);
                           Tensor w = random_tensor(op(a, b).shape(), rng);
                           if (wrt_first) {
                               return std::pair<ScalarFn, Tensor>{
                                   [=](const Tensor& t) { return weighted_sum(op(t, b), w); }, a};
                           }
                           return std::pair<ScalarFn, Tensor>{[=](const Tensor& t) { return weighted_sum(op(a, t), w); },
                                                              b};
                       }});
    };
    binary("add", {3, 4}, {3, 4}, true, [](const Tensor& a, const Tensor& b) { return add(a, b); });
    binary("add(broadcast)", {3, 4}, {4}, false, [](const Tensor& a, const Tensor& b) { return add(a, b); });
    binary("sub", {3, 4}, {3, 4}, false, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    binary("mul", {3, 4}, {3, 4}, true, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    unary("scale", {3, 4}, -1, 1, [](const Tensor& x) { return scale(x, -1.7); });
    binary("matmul(lhs)", {3, 4}, {4, 2}, true, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
    binary("matmul(rhs)", {3, 4}, {4, 2}, false, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
    for (std::size_t stride : {1, 2}) {
        const Conv2dOptions co{.stride = stride, .padding = 1};
        const std::string tag = "(stride " + std::to_string(stride) + ")";
        out.push_back({"conv2d input" + tag, [co](Rng& rng) {
                           Tensor x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng),
                                  b = random_tensor({3}, rng);
                           Tensor m = random_tensor(conv2d(x, w, b, co).shape(), rng);
                           return std::pair<ScalarFn, Tensor>{
                               [=](const Tensor& t) { return weighted_sum(conv2d(t, w, b, co), m); }, x};
                       }});
        out.push_back({"conv2d weight" + tag, [co](Rng& rng) {
                           Tensor x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng),
                                  b = random_tensor({3}, rng);
                           Tensor m = random_tensor(conv2d(x, w, b, co).shape(), rng);
                           return std::pair<ScalarFn, Tensor>{
                               [=](const Tensor& t) { return weighted_sum(conv2d(x, t, b, co), m); }, w};
                       }});
        out.push_back({"conv2d bias" + tag, [co](Rng& rng) {
                           Tensor x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng),
                                  b = random_tensor({3}, rng);
                           Tensor m = random_tensor(conv2d(x, w, b, co).shape(), rng);
                           return std::pair<ScalarFn, Tensor>{
                               [=](const Tensor& t) { return weighted_sum(conv2d(x, w, t, co), m); }, b};
                       }});
    }
    unary("relu", {3, 4}, -1, 1, [](const Tensor& x) { return relu(x); });
    unary("max_pool2d", {2, 2, 4, 6}, -1, 1, [](const Tensor& x) { return max_pool2d(x, 2, 2); });
    unary("global_avg_pool", {2, 3, 3, 2}, -1, 1, [](const Tensor& x) { return global_avg_pool(x); });
    unary("reshape", {3, 4}, -1, 1, [](const Tensor& x) { return reshape(x, {4, 3}); });
    out.push_back({"concat", [](Rng& rng) {
                       Tensor x = random_tensor({3, 4}, rng), other = random_tensor({3, 2}, rng);
                       Tensor m = random_tensor({3, 10}, rng);
                       return std::pair<ScalarFn, Tensor>{[=](const Tensor& t) {
                                                              const Tensor parts[] = {t, other, t};
                                                              return weighted_sum(concat(parts, 1), m);
                                                          },
                                                          x};
                   }});
    unary("softmax", {3, 4}, -3, 3, [](const Tensor& x) { return softmax(x, 1); });
    unary("log_softmax", {3, 4}, -3, 3, [](const Tensor& x) { return log_softmax(x, 1); });
    unary("log", {3, 4}, 0.5, 2, [](const Tensor& x) { return log(x); });
    unary("sum", {3, 4}, -1, 1, [](const Tensor& x) { return sum(x); });
    unary("mean", {3, 4}, -1, 1, [](const Tensor& x) { return mean(mul(x, x)); });
    unary("pick", {3, 4}, -1, 1, [](const Tensor& x) { return pick(x, std::vector<int>{2, 0, 3}); });
    unary("smooth_l1", {3, 4}, -3, 3, [](const Tensor& x) { return smooth_l1(x); });
    unary("standardize_batch", {5, 3}, -1, 1, [](const Tensor& x) { return standardize_batch(x); });
    unary("grad_reverse", {3, 4}, -1, 1, [](const Tensor& x) { return grad_reverse(x, 0.7); });
    out.back().expected_factor = -0.7;

    const std::vector<int> labels{1, 0, 3, 2};
    unary("loss: cross_entropy", {4, 4}, -3, 3, [labels](const Tensor& x) { return cross_entropy(x, labels); });
    unary("loss: nuisance_ce", {4, 3}, -3, 3,
          [](const Tensor& x) { return nuisance_ce(x, std::vector<int>{2, 0, 1, 1}); });
    unary("loss: negative_entropy", {4, 3}, -3, 3, [](const Tensor& x) { return negative_entropy(x); });
    out.push_back({"loss: task box", [labels](Rng& rng) {
                       Tensor logits = random_tensor({4, 4}, rng), target = random_tensor({4, 4}, rng, 0, 1);
                       return std::pair<ScalarFn, Tensor>{
                           [=](const Tensor& t) { return task_loss(logits, t, labels, target).box; },
                           random_tensor({4, 4}, rng, -1, 2)};
                   }});
    for (LossMode mode : {LossMode::baseline, LossMode::ndft, LossMode::auxiliary, LossMode::grad_reversal}) {
        out.push_back({"loss: compose " + to_string(mode), [mode, labels](Rng& rng) {
                           Tensor box = random_tensor({4, 4}, rng), target = random_tensor({4, 4}, rng, 0, 1);
                           Tensor n2 = random_tensor({4, 2}, rng, -3, 3);
                           ScalarFn fn = [=](const Tensor& t) {
                               // t plays the class logits and the first nuisance head's logits.
                               const Tensor heads[] = {reshape(t, {4, 4}), n2};
                               LossParts parts;
                               parts.task = task_loss(t, box, labels, target);
                               parts.gammas = {0.3, 0.7};
                               const std::vector<int> y1{3, 1, 0, 2}, y2{1, 0, 0, 1};
                               parts.negative_entropy = {negative_entropy(heads[0]), negative_entropy(heads[1])};
                               parts.nuisance_ce = {nuisance_ce(heads[0], y1), nuisance_ce(heads[1], y2)};
                               return compose(mode, parts).total;
                           };
                           return std::pair<ScalarFn, Tensor>{fn, random_tensor({4, 4}, rng, -3, 3)};
                       }});
    }
    return out;
}

}  // namespace

std::vector<SuiteEntry> gradcheck_suite(std::size_t points, std::uint64_t seed, GradcheckOptions opts) {
    std::vector<SuiteEntry> out;
    for (const auto& c : cases()) {
        Rng rng = Rng::stream(seed, "gradcheck/" + c.name);
        SuiteEntry e;
        e.name = c.name;
        e.points = points;
        e.worst.passed = true;
        for (std::size_t p = 0; p < points; ++p) {
            auto [fn, x] = c.make(rng);
            GradcheckOptions o = opts;
            o.expected_factor = c.expected_factor;
            const auto r = gradcheck(fn, x, o);
            if (p == 0 || r.max_rel_error > e.worst.max_rel_error) e.worst = r;
            if (!r.passed) e.worst.passed = false;
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace ndft
