// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ndft/nn.hpp"
#include "ndft/synthgen.hpp"

namespace ndft {

struct DomainMetric {
    std::size_t combination = 0;
    std::string levels;  // e.g. "low/side/night"
    std::size_t count = 0;
    double metric = 0.0;

    friend bool operator==(const DomainMetric&, const DomainMetric&) = default;
};

/// One evaluation snapshot on one partition. The task metric is the fraction
/// of samples with the correct class AND box IoU >= the threshold.
struct MetricsRecord {
    std::size_t iteration = 0;
    std::string mode;
    std::vector<double> gammas;
    std::string partition;
    std::size_t samples = 0;
    double overall = 0.0;
    double class_accuracy = 0.0;
    double mean_iou = 0.0;
    std::vector<DomainMetric> per_domain;
    std::vector<std::vector<double>> per_level;  // [factor][level]
    std::vector<double> nuisance_accuracy;       // model's own heads, [factor]
    double l_task_cls = 0.0;
    double l_task_box = 0.0;
    std::vector<double> l_ne;
    std::vector<double> l_n;
    double wall_clock_s = 0.0;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct EvalOptions {
    std::size_t samples = 512;
    double iou_threshold = 0.5;
    std::size_t chunk = 128;  // forward batch size
};

/// Fixed evaluation set: a pure function of (config, split, partition, seed).
std::vector<Sample> evaluation_samples(const DatasetConfig& data, const DomainSplit& split, Partition partition,
                                       std::size_t count, std::uint64_t seed);

MetricsRecord evaluate_samples(const NdftModel& model, const DatasetConfig& data, std::span<const Sample> samples,
                               double iou_threshold = 0.5, std::size_t chunk = 128);

MetricsRecord evaluate(const NdftModel& model, const DatasetConfig& data, const DomainSplit& split,
                       Partition partition, std::uint64_t seed, const EvalOptions& opts = {});

/// Argmax per row of a [B, C] tensor.
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace ndft
