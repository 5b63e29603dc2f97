// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-run experiments: the nuisance-subset ablation grid and frozen-trunk
// transfer to a shifted scene generator.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ndft/metrics.hpp"
#include "ndft/train.hpp"

namespace ndft {

/// Samples from val-seen and val-unseen together, partition "val-all".
MetricsRecord evaluate_all(const NdftModel& model, const DatasetConfig& data, const DomainSplit& split,
                           std::uint64_t seed, const EvalOptions& opts = {});

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Ablation grid.

struct GridRun {
    std::uint64_t seed = 0;
    TrainConfig config;  // exactly what was trained
    bool failed = false;
    std::string error;
    MetricsRecord val_seen;
    MetricsRecord val_unseen;
    MetricsRecord val_all;
};

struct GridCell {
    std::vector<std::size_t> subset;  // nuisance indices with gamma > 0
    std::string label;                // e.g. "{A,V}" or "{}"
    std::vector<GridRun> runs;
    bool failed = false;
    // Medians over the successful seeds.
    double seen = 0.0;
    double unseen = 0.0;
    double overall = 0.0;                        // val-all
    std::vector<std::vector<double>> per_level;  // val-all, [factor][level]
};

struct GridTable {
    std::vector<std::string> factor_names;
    std::vector<std::vector<std::string>> level_names;
    std::vector<GridCell> cells;
};

/// Every subset of {0..k-1} ordered by size, then lexicographically: the
/// empty set, the singletons, the pairs, ..., the full set.
std::vector<std::vector<std::size_t>> all_subsets(std::size_t k);

/// Short cell label from the first letter of each factor name, e.g. "{A,W}".
std::string subset_label(const DatasetConfig& data, const std::vector<std::size_t>& subset);

/// The config for one cell: the empty subset is a baseline run; otherwise
/// the base mode with gamma on the subset and 0 elsewhere.
TrainConfig cell_config(const TrainConfig& base, const std::vector<std::size_t>& subset, double gamma,
                        std::uint64_t seed);

struct GridOptions {
    std::vector<std::vector<std::size_t>> subsets;  // empty = all_subsets(k)
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double gamma = 0.01;
    // Called after each run; lets callers log or reuse trained models.
    std::function<void(const GridCell&, const GridRun&, const TrainResult*)> on_run;
};

GridTable ablation_grid(const TrainConfig& base, const GridOptions& opts);

/// Aligned plain-text table: one row per subset with per-level and overall
/// val-all metrics and the seen/unseen overall metrics, in percent.
std::string format_grid(const GridTable& table);

// ---------------------------------------------------------------------------
// Transfer.

struct TransferOptions {
    DatasetConfig target;  // typically the shifted scene variant
    std::size_t iterations = 1000;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double box_weight = 10.0;
    std::uint64_t seed = 1;
    EvalOptions eval;
};

struct TransferResult {
    MetricsRecord metrics;  // val-all on the target
    std::uint64_t trunk_hash_before = 0;
    std::uint64_t trunk_hash_after = 0;
    std::size_t trained_parameters = 0;
};

/// Freezes f_T, redraws f_O and trains only f_O on the target generator.
TransferResult transfer(const NdftModel& source, const TransferOptions& opts);

/// A fresh model trained end to end on the target for the same budget.
TransferResult train_from_scratch(const ArchConfig& arch, const TransferOptions& opts);

TransferOptions default_transfer(const TrainConfig& source);

}  // namespace ndft
