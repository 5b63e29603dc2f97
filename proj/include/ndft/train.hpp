// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// The alternating schedule: pretraining, one f_T/f_O step per iteration on
// the mode's composed loss, bounded adversary strengthening on the same
// minibatch, and periodic adversary restarts.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ndft/losses.hpp"
#include "ndft/metrics.hpp"
#include "ndft/nn.hpp"
#include "ndft/rng.hpp"
#include "ndft/synthgen.hpp"

namespace ndft {

struct OptimConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double head_learning_rate = 0.05;  // nuisance heads and probes
    std::size_t decay_at = 3500;       // 0 = never
    double decay_factor = 0.1;

    friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

struct TrainConfig {
    LossMode mode = LossMode::ndft;
    std::vector<double> gammas;  // empty = default_gamma for every nuisance
    double default_gamma = 0.01;
    double box_weight = 10.0;
    std::size_t batch_size = 32;
    std::size_t iterations = 5000;
    std::size_t pretrain_iterations = 1000;
    std::size_t head_pretrain_cap = 500;
    double tau = 0.9;
    std::size_t strengthen_cap = 200;
    double strengthen_ema = 0.0;  // 0 = guard on the raw minibatch accuracy
    std::size_t restart_period = 1000;
    std::size_t restart_retrain_steps = 300;
    bool restart_repretrain = false;
    double grl_factor = 1.0;
    OptimConfig optim;
    std::size_t eval_interval = 500;
    EvalOptions eval;
    bool wall_clock = false;  // off keeps metrics byte-reproducible
    std::uint64_t seed = 1;
    DatasetConfig data;
    ArchConfig arch;  // level counts, classes and image size follow `data`

    /// gammas resolved to one entry per nuisance.
    std::vector<double> resolved_gammas() const;
    /// arch with the data-dependent fields filled in.
    ArchConfig resolved_arch() const;
    void validate() const;
};

struct RngStreams {
    Rng data;
    Rng init;
    Rng restart;
    Rng eval;

    static RngStreams from_seed(std::uint64_t seed);
    friend bool operator==(const RngStreams&, const RngStreams&) = default;
};

struct StrengthReport {
    std::vector<double> accuracy;     // final minibatch accuracy per head
    std::vector<std::size_t> steps;   // SGD steps taken per head
    std::size_t inner_steps = 0;      // loop iterations used
    bool cap_exhausted = false;
};

struct TrainState {
    std::size_t iteration = 0;
    std::vector<SgdState> optim;  // aligned with model.groups()
    std::size_t restart_clock = 0;
    std::size_t restarts = 0;
    std::vector<std::size_t> restart_iterations;
    StrengthReport last_strength;
    std::vector<double> accuracy_ema;
    RngStreams rng;
    DomainSplit split;
    std::vector<std::string> warnings;
};

struct StepReport {
    std::size_t iteration = 0;
    LossBreakdown losses;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(std::size_t iteration, const std::string& what);
    std::size_t iteration() const { return iteration_; }

private:
    std::size_t iteration_;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

struct TrainResult;

/// Fresh model (from the init stream) and state: split, RNG streams and
/// zero-velocity optimizers.
TrainResult initialize(const TrainConfig& config);

/// f_T and f_O on the task loss, then each head with f_T frozen until its
/// minibatch accuracy reaches tau or the cap. Independent of the mode.
void pretrain(NdftModel& model, TrainState& state, const TrainConfig& config);

/// One SGD step on f_T and f_O. In auxiliary mode the heads are part of the
/// jointly minimized objective and take the same step.
StepReport main_step(NdftModel& model, TrainState& state, const Batch& batch, const TrainConfig& config);

StrengthReport strengthen_adversaries(NdftModel& model, TrainState& state, const Batch& batch,
                                      const TrainConfig& config);

void restart_adversaries(NdftModel& model, TrainState& state, const TrainConfig& config);

/// Runs the outer loop from state.iteration up to config.iterations.
void run_training(NdftModel& model, TrainState& state, const TrainConfig& config, const MetricsSink& sink,
                  const std::function<void(const NdftModel&, const TrainState&)>& on_iteration = {});

struct TrainResult {
    NdftModel model;
    TrainState state;
    std::vector<MetricsRecord> records;
};

TrainResult train(const TrainConfig& config, const MetricsSink& sink = {});

/// Snapshot records (val-seen, then val-unseen) for the current model.
std::vector<MetricsRecord> snapshot(const NdftModel& model, const TrainState& state, const TrainConfig& config);

bool uses_adversaries(LossMode mode);

}  // namespace ndft
