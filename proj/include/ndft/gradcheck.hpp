// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndft/tensor.hpp"

namespace ndft {

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradcheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor for the relative error, so that exact zeros compare
    // on an absolute scale instead of dividing by zero.
    double floor = 1e-6;
    // The tape gradient is compared with this multiple of the central
    // difference. Only gradient reversal uses a value other than 1.
    double expected_factor = 1.0;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t coordinates = 0;
    bool passed = false;
};

/// Raised when `fn` throws while evaluated at a perturbed point.
class GradcheckError : public std::runtime_error {
public:
    GradcheckError(std::size_t coordinate, const std::string& what)
        : std::runtime_error("gradcheck: evaluation failed at coordinate " + std::to_string(coordinate) + ": " +
                             what),
          coordinate_(coordinate) {}
    std::size_t coordinate() const { return coordinate_; }

private:
    std::size_t coordinate_;
};

/// Compares the tape gradient of scalar `fn` at `point` with central
/// differences, coordinate by coordinate.
GradcheckReport gradcheck(const ScalarFn& fn, const Tensor& point, GradcheckOptions opts = {});

struct SuiteEntry {
    std::string name;
    std::size_t points = 0;
    GradcheckReport worst;  // the point with the largest relative error
};

/// Every differentiable op and every loss, each at `points` random points.
std::vector<SuiteEntry> gradcheck_suite(std::size_t points, std::uint64_t seed, GradcheckOptions opts = {});

}  // namespace ndft
