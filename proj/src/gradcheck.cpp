// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ndft {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<double>& values, const Shape& shape, std::size_t coordinate) {
    try {
        NoGradGuard guard;
        return fn(Tensor::from(shape, values)).item();
    } catch (const GradcheckError&) {
        throw;
    } catch (const std::exception& e) {
        throw GradcheckError(coordinate, e.what());
    }
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& fn, const Tensor& point, GradcheckOptions opts) {
    for (double v : point.data()) {
        if (!std::isfinite(v)) throw ContractError("gradcheck: point must be finite");
    }
    Tensor x = Tensor::from(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
    Tensor out = fn(x);
    if (out.size() != 1) throw ContractError("gradcheck: fn must return a scalar, got " + to_string(out.shape()));
    backward(out);
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    GradcheckReport report;
    report.coordinates = x.size();
    std::vector<double> probe(x.data().begin(), x.data().end());
    double total = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + opts.step;
        const double up = evaluate(fn, probe, x.shape(), i);
        probe[i] = orig - opts.step;
        const double down = evaluate(fn, probe, x.shape(), i);
        probe[i] = orig;
        const double numeric = opts.expected_factor * (up - down) / (2.0 * opts.step);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opts.floor});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        total += rel;
        if (rel > report.max_rel_error || i == 0) {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
        }
    }
    report.mean_rel_error = probe.empty() ? 0.0 : total / static_cast<double>(probe.size());
    report.passed = report.max_rel_error <= opts.tolerance;
    return report;
}

}  // namespace ndft
