// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace ndft {

namespace {

// Indices into TrainState::optim, matching NdftModel::groups().
constexpr std::size_t kTrunk = 0;
constexpr std::size_t kTask = 1;
constexpr std::size_t head_slot(std::size_t i) { return 2 + i; }

std::vector<SgdState> fresh_optimizers(const NdftModel& model, const TrainConfig& config) {
    std::vector<SgdState> out;
    for (const auto& g : model.groups()) {
        const bool head = g.name != trunk_group_name() && g.name != task_group_name();
        out.push_back(make_sgd_state(g, head ? config.optim.head_learning_rate : config.optim.learning_rate,
                                     config.optim.momentum));
    }
    return out;
}

void task_step(NdftModel& model, TrainState& state, const Batch& batch, double box_weight) {
    auto t = model.task_head(model.trunk(batch.images));
    auto loss = task_loss(t.class_logits, t.box, batch.labels, batch.boxes, box_weight);
    backward(add(loss.cls, loss.box));
    auto trunk = model.group(trunk_group_name());
    auto task = model.group(task_group_name());
    sgd_step(state.optim[kTrunk], trunk);
    sgd_step(state.optim[kTask], task);
}

Tensor frozen_features(const NdftModel& model, const Tensor& images) {
    NoGradGuard no_grad;
    return model.trunk(images);
}

double head_accuracy(const NdftModel& model, std::size_t i, const Tensor& features, std::span<const int> labels) {
    NoGradGuard no_grad;
    return accuracy(model.nuisance_head(i, features), labels);
}

void head_step(NdftModel& model, TrainState& state, std::size_t i, const Tensor& features,
               std::span<const int> labels) {
    backward(nuisance_ce(model.nuisance_head(i, features), labels));
    auto g = model.nuisance_group(i);
    sgd_step(state.optim[head_slot(i)], g);
}

/// Trains every head on frozen features until each reaches tau on its
/// minibatch or `cap` steps. Returns the final per-head accuracy.
std::vector<double> fit_heads(NdftModel& model, TrainState& state, const TrainConfig& config, Rng& rng,
                              std::size_t cap, std::vector<std::string>* warnings) {
    const std::size_t k = model.num_nuisances();
    std::vector<double> acc(k, 0.0);
    std::vector<char> done(k, 0);
    // accuracy history sampled every `every` steps, for the no-improvement warning
    const std::size_t every = std::max<std::size_t>(1, cap / 10);
    std::vector<std::vector<double>> history(k);
    std::vector<double> window(k, 0.0);
    for (std::size_t step = 0; step < cap; ++step) {
        bool all_done = true;
        for (std::size_t i = 0; i < k; ++i) all_done = all_done && done[i];
        if (all_done) break;
        const Batch b = draw_batch(config.data, state.split, Partition::train, config.batch_size, rng);
        const Tensor f = frozen_features(model, b.images);
        for (std::size_t i = 0; i < k; ++i) {
            if (done[i]) continue;
            acc[i] = head_accuracy(model, i, f, b.nuisance[i]);
            window[i] += acc[i];
            if ((step + 1) % every == 0) {
                history[i].push_back(window[i] / static_cast<double>(every));
                window[i] = 0.0;
            }
            if (acc[i] >= config.tau) {
                done[i] = 1;
                continue;
            }
            head_step(model, state, i, f, b.nuisance[i]);
        }
    }
    if (warnings) {
        for (std::size_t i = 0; i < k; ++i) {
            if (done[i]) continue;
            const auto& h = history[i];
            bool improved = true;
            if (h.size() >= 4) {
                const double before = h[h.size() - 4];
                improved = false;
                for (std::size_t j = h.size() - 3; j < h.size(); ++j) improved = improved || h[j] > before;
            }
            std::ostringstream msg;
            msg << nuisance_group_name(i + 1) << ": step cap " << cap << " reached at minibatch accuracy " << acc[i];
            if (!improved) msg << " with no improvement over the last 3 evaluations";
            if (!improved) warnings->push_back(msg.str());
        }
    }
    return acc;
}

std::string describe(const LossBreakdown& l) {
    std::ostringstream os;
    os.precision(17);
    os << "l_task_cls=" << l.l_task_cls << " l_task_box=" << l.l_task_box;
    for (std::size_t i = 0; i < l.l_ne.size(); ++i) os << " l_ne[" << i + 1 << "]=" << l.l_ne[i];
    for (std::size_t i = 0; i < l.l_n.size(); ++i) os << " l_n[" << i + 1 << "]=" << l.l_n[i];
    for (std::size_t i = 0; i < l.gammas.size(); ++i) os << " gamma[" << i + 1 << "]=" << l.gammas[i];
    return os.str();
}

}  // namespace

std::vector<double> TrainConfig::resolved_gammas() const {
    if (!gammas.empty()) return gammas;
    return std::vector<double>(data.num_nuisances(), default_gamma);
}

ArchConfig TrainConfig::resolved_arch() const {
    ArchConfig a = arch;
    a.image_size = data.image_size;
    a.in_channels = 1;
    a.num_classes = data.num_classes;
    a.nuisance_levels = data.level_counts();
    return a;
}

void TrainConfig::validate() const {
    data.validate();
    resolved_arch().validate();
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("train.tau must lie in (0, 1]");
    if (restart_period < 1) throw ConfigError("train.restart_period must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!gammas.empty() && gammas.size() != data.num_nuisances()) {
        throw ConfigError("train.gammas needs one entry per nuisance");
    }
    for (double g : resolved_gammas()) {
        if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("train.gammas entries must be finite and >= 0");
    }
    if (!(box_weight > 0.0) || !std::isfinite(box_weight)) throw ConfigError("train.box_weight must be finite and > 0");
    if (!(strengthen_ema >= 0.0 && strengthen_ema < 1.0)) throw ConfigError("train.strengthen_ema must lie in [0, 1)");
    if (!(optim.learning_rate > 0.0) || !(optim.head_learning_rate > 0.0)) {
        throw ConfigError("optim learning rates must be positive");
    }
    if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0, 1)");
    if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) {
        throw ConfigError("eval.iou_threshold must lie in (0, 1]");
    }
}

RngStreams RngStreams::from_seed(std::uint64_t seed) {
    return {Rng::stream(seed, "data"), Rng::stream(seed, "init"), Rng::stream(seed, "restart"),
            Rng::stream(seed, "eval")};
}

TrainingError::TrainingError(std::size_t iteration, const std::string& what)
    : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}

bool uses_adversaries(LossMode mode) { return mode == LossMode::ndft || mode == LossMode::grad_reversal; }

TrainResult initialize(const TrainConfig& config) {
    config.validate();
    TrainState state;
    state.rng = RngStreams::from_seed(config.seed);
    state.split = make_split(config.data, config.data.holdout, config.seed);
    NdftModel model(config.resolved_arch(), state.rng.init);
    state.optim = fresh_optimizers(model, config);
    state.accuracy_ema.assign(model.num_nuisances(), 0.0);
    return {std::move(model), std::move(state), {}};
}

void pretrain(NdftModel& model, TrainState& state, const TrainConfig& config) {
    for (std::size_t it = 0; it < config.pretrain_iterations; ++it) {
        const Batch b = draw_batch(config.data, state.split, Partition::train, config.batch_size, state.rng.data);
        task_step(model, state, b, config.box_weight);
    }
    fit_heads(model, state, config, state.rng.data, config.head_pretrain_cap, &state.warnings);
}

StepReport main_step(NdftModel& model, TrainState& state, const Batch& batch, const TrainConfig& config) {
    const std::size_t k = model.num_nuisances();
    const Tensor features = model.trunk(batch.images);
    const TaskOutputs t = model.task_head(features);
    LossParts parts;
    parts.task = task_loss(t.class_logits, t.box, batch.labels, batch.boxes, config.box_weight);
    parts.gammas = config.resolved_gammas();
    switch (config.mode) {
        case LossMode::baseline:
            break;
        case LossMode::ndft:
            for (std::size_t i = 0; i < k; ++i) {
                parts.negative_entropy.push_back(negative_entropy(model.nuisance_head(i, features)));
            }
            break;
        case LossMode::auxiliary:
            for (std::size_t i = 0; i < k; ++i) {
                parts.nuisance_ce.push_back(nuisance_ce(model.nuisance_head(i, features), batch.nuisance[i]));
            }
            break;
        case LossMode::grad_reversal: {
            const Tensor reversed = grad_reverse(features, config.grl_factor);
            for (std::size_t i = 0; i < k; ++i) {
                parts.nuisance_ce.push_back(nuisance_ce(model.nuisance_head(i, reversed), batch.nuisance[i]));
            }
            break;
        }
    }
    StepReport report;
    report.iteration = state.iteration + 1;
    report.losses = compose(config.mode, parts);
    const double total = report.losses.total.item();
    if (!std::isfinite(total)) {
        throw TrainingError(report.iteration, "non-finite loss (" + describe(report.losses) + ")");
    }
    backward(report.losses.total);
    auto trunk = model.group(trunk_group_name());
    auto task = model.group(task_group_name());
    sgd_step(state.optim[kTrunk], trunk);
    sgd_step(state.optim[kTask], task);
    for (std::size_t i = 0; i < k; ++i) {
        auto g = model.nuisance_group(i);
        if (config.mode == LossMode::auxiliary) {
            sgd_step(state.optim[head_slot(i)], g);
        } else {
            g.zero_grad();
        }
    }
    state.iteration = report.iteration;
    return report;
}

StrengthReport strengthen_adversaries(NdftModel& model, TrainState& state, const Batch& batch,
                                      const TrainConfig& config) {
    const std::size_t k = model.num_nuisances();
    StrengthReport report;
    report.steps.assign(k, 0);
    report.accuracy.assign(k, 0.0);
    if (k == 0) return report;
    const Tensor f = frozen_features(model, batch.images);
    std::vector<char> weak(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
        report.accuracy[i] = head_accuracy(model, i, f, batch.nuisance[i]);
        double guard = report.accuracy[i];
        if (config.strengthen_ema > 0.0) {
            state.accuracy_ema[i] = config.strengthen_ema * state.accuracy_ema[i] +
                                    (1.0 - config.strengthen_ema) * report.accuracy[i];
            guard = state.accuracy_ema[i];
        }
        weak[i] = guard <= config.tau;
    }
    while (report.inner_steps < config.strengthen_cap) {
        bool any = false;
        for (std::size_t i = 0; i < k; ++i) {
            if (!weak[i]) continue;
            any = true;
            head_step(model, state, i, f, batch.nuisance[i]);
            ++report.steps[i];
            report.accuracy[i] = head_accuracy(model, i, f, batch.nuisance[i]);
            weak[i] = report.accuracy[i] <= config.tau;
        }
        if (!any) break;
        ++report.inner_steps;
    }
    for (std::size_t i = 0; i < k; ++i) report.cap_exhausted = report.cap_exhausted || weak[i];
    state.last_strength = report;
    return report;
}

void restart_adversaries(NdftModel& model, TrainState& state, const TrainConfig& config) {
    const std::size_t k = model.num_nuisances();
    for (std::size_t i = 0; i < k; ++i) {
        model.reinit_group(nuisance_group_name(i + 1), state.rng.restart);
        auto g = model.nuisance_group(i);
        state.optim[head_slot(i)] = make_sgd_state(g, state.optim[head_slot(i)].learning_rate, config.optim.momentum);
    }
    if (config.restart_repretrain) {
        model.reinit_group(trunk_group_name(), state.rng.restart);
        model.reinit_group(task_group_name(), state.rng.restart);
        for (std::size_t slot : {kTrunk, kTask}) {
            auto g = model.groups()[slot];
            state.optim[slot] = make_sgd_state(g, state.optim[slot].learning_rate, config.optim.momentum);
        }
        for (std::size_t it = 0; it < config.pretrain_iterations; ++it) {
            task_step(model, state,
                      draw_batch(config.data, state.split, Partition::train, config.batch_size, state.rng.restart),
                      config.box_weight);
        }
    }
    fit_heads(model, state, config, state.rng.restart, config.restart_retrain_steps, nullptr);
    state.restart_clock = 0;
    ++state.restarts;
    state.restart_iterations.push_back(state.iteration);
}

std::vector<MetricsRecord> snapshot(const NdftModel& model, const TrainState& state, const TrainConfig& config) {
    std::vector<MetricsRecord> out;
    for (Partition p : {Partition::val_seen, Partition::val_unseen}) {
        MetricsRecord r = evaluate(model, config.data, state.split, p, config.seed, config.eval);
        r.iteration = state.iteration;
        r.mode = to_string(config.mode);
        r.gammas = config.resolved_gammas();
        out.push_back(std::move(r));
    }
    return out;
}

void run_training(NdftModel& model, TrainState& state, const TrainConfig& config, const MetricsSink& sink,
                  const std::function<void(const NdftModel&, const TrainState&)>& on_iteration) {
    const auto start = std::chrono::steady_clock::now();
    const bool adversarial = uses_adversaries(config.mode) && model.num_nuisances() > 0;
    const double base_lr = config.optim.learning_rate;
    while (state.iteration < config.iterations) {
        const Batch b = draw_batch(config.data, state.split, Partition::train, config.batch_size, state.rng.data);
        main_step(model, state, b, config);
        if (adversarial) {
            strengthen_adversaries(model, state, b, config);
            if (++state.restart_clock == config.restart_period) restart_adversaries(model, state, config);
        }
        if (config.optim.decay_at > 0) {
            const double lr = state.iteration >= config.optim.decay_at ? base_lr * config.optim.decay_factor : base_lr;
            state.optim[kTrunk].learning_rate = lr;
            state.optim[kTask].learning_rate = lr;
        }
        if (on_iteration) on_iteration(model, state);
        const bool due = config.eval_interval > 0 && state.iteration % config.eval_interval == 0;
        if (sink && (due || state.iteration == config.iterations)) {
            const double elapsed =
                config.wall_clock
                    ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
                    : 0.0;
            for (auto& r : snapshot(model, state, config)) {
                r.wall_clock_s = elapsed;
                sink(r);
            }
        }
    }
}

TrainResult train(const TrainConfig& config, const MetricsSink& sink) {
    TrainResult r = initialize(config);
    pretrain(r.model, r.state, config);
    run_training(r.model, r.state, config, [&](const MetricsRecord& m) {
        r.records.push_back(m);
        if (sink) sink(m);
    });
    return r;
}

}  // namespace ndft
