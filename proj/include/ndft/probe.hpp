// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Leakage probes: a freshly initialized nuisance head trained on frozen
// features, scored on held-out samples.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "ndft/nn.hpp"
#include "ndft/synthgen.hpp"

namespace ndft {

struct ProbeOptions {
    std::size_t train_samples = 2000;
    std::size_t test_samples = 1000;
    std::size_t hidden = 16;
    std::size_t batch_size = 64;
    std::size_t max_steps = 3000;
    double learning_rate = 0.01;  // 0.05 diverges on raw 1024-pixel inputs
    double momentum = 0.9;
    // Inputs are z-scored with training statistics so that a trunk cannot
    // hide information by shrinking feature scale.
    bool standardize = true;

    friend bool operator==(const ProbeOptions&, const ProbeOptions&) = default;
};

struct ProbeResult {
    std::size_t nuisance = 0;
    double accuracy = 0.0;
    double chance = 0.0;
    double leakage = 0.0;  // accuracy - chance
    std::size_t steps = 0;
    double final_loss = 0.0;
    bool non_convergent = false;
};

/// Maps images [B, 1, H, W] to probe inputs [B, D, h, w]. The probe head
/// global-average-pools, so [B, D, 1, 1] gives a plain MLP over D inputs.
using FeatureFn = std::function<Tensor(const Tensor& images)>;

FeatureFn trunk_features(const NdftModel& model);
/// Pixels rearranged as channels: no transform at all.
FeatureFn identity_features();
/// An uninformative map of the given width.
FeatureFn constant_features(std::size_t width);

/// Probe samples are drawn uniformly over every level combination, so the
/// majority-class rate equals chance exactly in expectation.
std::vector<ProbeResult> probe_features(const FeatureFn& features, const DatasetConfig& data, std::uint64_t seed,
                                        const ProbeOptions& opts = {});

ProbeResult probe_nuisance(const NdftModel& model, std::size_t nuisance, const DatasetConfig& data,
                           std::uint64_t seed, const ProbeOptions& opts = {});
std::vector<ProbeResult> probe_all(const NdftModel& model, const DatasetConfig& data, std::uint64_t seed,
                                   const ProbeOptions& opts = {});

}  // namespace ndft
