// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

namespace ndft {

MetricsRecord evaluate_all(const NdftModel& model, const DatasetConfig& data, const DomainSplit& split,
                           std::uint64_t seed, const EvalOptions& opts) {
    auto samples = evaluation_samples(data, split, Partition::val_seen, opts.samples, seed);
    if (!split.unseen.empty()) {
        auto unseen = evaluation_samples(data, split, Partition::val_unseen, opts.samples, seed);
        samples.insert(samples.end(), std::make_move_iterator(unseen.begin()), std::make_move_iterator(unseen.end()));
    }
    MetricsRecord rec = evaluate_samples(model, data, samples, opts.iou_threshold, opts.chunk);
    rec.partition = "val-all";
    return rec;
}

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::vector<std::size_t>> all_subsets(std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
        std::vector<std::size_t> s;
        for (std::size_t i = 0; i < k; ++i) {
            if (mask & (std::size_t{1} << i)) s.push_back(i);
        }
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
    return out;
}

std::string subset_label(const DatasetConfig& data, const std::vector<std::size_t>& subset) {
    std::string s = "{";
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) s += ',';
        const std::string& name = data.nuisances.at(subset[i]).name;
        s += name.empty() ? '?' : static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    }
    return s + "}";
}

TrainConfig cell_config(const TrainConfig& base, const std::vector<std::size_t>& subset, double gamma,
                        std::uint64_t seed) {
    TrainConfig c = base;
    c.seed = seed;
    c.gammas.assign(base.data.num_nuisances(), 0.0);
    if (subset.empty()) {
        c.mode = LossMode::baseline;
    } else {
        for (std::size_t i : subset) c.gammas.at(i) = gamma;
    }
    return c;
}

GridTable ablation_grid(const TrainConfig& base, const GridOptions& opts) {
    GridTable table;
    for (const auto& spec : base.data.nuisances) {
        table.factor_names.push_back(spec.name);
        table.level_names.push_back(spec.levels);
    }
    const auto subsets = opts.subsets.empty() ? all_subsets(base.data.num_nuisances()) : opts.subsets;
    for (const auto& subset : subsets) {
        GridCell cell;
        cell.subset = subset;
        cell.label = subset_label(base.data, subset);
        for (std::uint64_t seed : opts.seeds) {
            GridRun run;
            run.seed = seed;
            run.config = cell_config(base, subset, opts.gamma, seed);
            std::optional<TrainResult> result;
            try {
                result.emplace(train(run.config));
                const auto snap = snapshot(result->model, result->state, run.config);
                run.val_seen = snap[0];
                run.val_unseen = snap[1];
                run.val_all = evaluate_all(result->model, run.config.data, result->state.split, seed, run.config.eval);
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
                result.reset();
            }
            cell.failed = cell.failed || run.failed;
            cell.runs.push_back(std::move(run));
            if (opts.on_run) opts.on_run(cell, cell.runs.back(), result ? &*result : nullptr);
        }
        std::vector<double> seen, unseen, overall;
        std::vector<std::vector<std::vector<double>>> levels;  // [factor][level][run]
        for (const auto& r : cell.runs) {
            if (r.failed) continue;
            seen.push_back(r.val_seen.overall);
            unseen.push_back(r.val_unseen.overall);
            overall.push_back(r.val_all.overall);
            levels.resize(r.val_all.per_level.size());
            for (std::size_t f = 0; f < r.val_all.per_level.size(); ++f) {
                levels[f].resize(r.val_all.per_level[f].size());
                for (std::size_t l = 0; l < r.val_all.per_level[f].size(); ++l) {
                    levels[f][l].push_back(r.val_all.per_level[f][l]);
                }
            }
        }
        cell.seen = median(seen);
        cell.unseen = median(unseen);
        cell.overall = median(overall);
        for (const auto& f : levels) {
            std::vector<double> row;
            for (const auto& l : f) row.push_back(median(l));
            cell.per_level.push_back(std::move(row));
        }
        table.cells.push_back(std::move(cell));
    }
    return table;
}

std::string format_grid(const GridTable& table) {
    std::vector<std::string> header{"subset"};
    for (std::size_t f = 0; f < table.factor_names.size(); ++f) {
        for (const auto& l : table.level_names[f]) header.push_back(table.factor_names[f] + ":" + l);
    }
    header.insert(header.end(), {"overall", "val-seen", "val-unseen"});

    std::vector<std::vector<std::string>> rows;
    auto pct = [](double v) {
        if (std::isnan(v)) return std::string("-");
        std::ostringstream os;
        os << std::fixed << std::setprecision(2) << 100.0 * v;
        return os.str();
    };
    for (const auto& c : table.cells) {
        std::vector<std::string> row{c.label};
        std::size_t filled = 1;
        if (!c.failed) {
            for (const auto& f : c.per_level) {
                for (double v : f) row.push_back(pct(v));
            }
            row.insert(row.end(), {pct(c.overall), pct(c.seen), pct(c.unseen)});
            filled = row.size();
        }
        while (row.size() < header.size()) row.push_back(filled == 1 ? "failed" : "-");
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) {
        width[i] = header[i].size();
        for (const auto& r : rows) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) os << "  ";
            if (i == 0) {
                os << std::left << std::setw(static_cast<int>(width[i])) << r[i];
            } else {
                os << std::right << std::setw(static_cast<int>(width[i])) << r[i];
            }
        }
        os << '\n';
    };
    line(header);
    std::size_t total = 2 * (header.size() - 1);
    for (std::size_t w : width) total += w;
    os << std::string(total, '-') << '\n';
    for (const auto& r : rows) line(r);
    return os.str();
}

// ---------------------------------------------------------------------------

namespace {

void fit_task(NdftModel& model, const TransferOptions& opts, bool frozen_trunk, TransferResult& out) {
    const DomainSplit split = make_split(opts.target, opts.target.holdout, opts.seed);
    Rng data = Rng::stream(opts.seed, "transfer/data");
    auto trunk = model.group(trunk_group_name());
    auto task = model.group(task_group_name());
    SgdState task_sgd = make_sgd_state(task, opts.learning_rate, opts.momentum);
    SgdState trunk_sgd = make_sgd_state(trunk, opts.learning_rate, opts.momentum);
    out.trunk_hash_before = hash_group(trunk);
    out.trained_parameters = task.parameter_count() + (frozen_trunk ? 0 : trunk.parameter_count());
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const Batch b = draw_batch(opts.target, split, Partition::train, opts.batch_size, data);
        Tensor features;
        if (frozen_trunk) {
            NoGradGuard no_grad;
            features = model.trunk(b.images);
        } else {
            features = model.trunk(b.images);
        }
        const auto t = model.task_head(features);
        const auto loss = task_loss(t.class_logits, t.box, b.labels, b.boxes, opts.box_weight);
        backward(add(loss.cls, loss.box));
        sgd_step(task_sgd, task);
        if (!frozen_trunk) sgd_step(trunk_sgd, trunk);
    }
    out.trunk_hash_after = hash_group(trunk);
    out.metrics = evaluate_all(model, opts.target, split, opts.seed, opts.eval);
}

}  // namespace

TransferResult transfer(const NdftModel& source, const TransferOptions& opts) {
    NdftModel model = source.clone();
    Rng init = Rng::stream(opts.seed, "transfer/init");
    model.reinit_group(task_group_name(), init);
    TransferResult out;
    fit_task(model, opts, true, out);
    return out;
}

TransferResult train_from_scratch(const ArchConfig& arch, const TransferOptions& opts) {
    Rng init = Rng::stream(opts.seed, "transfer/init");
    NdftModel model(arch, init);
    TransferResult out;
    fit_task(model, opts, false, out);
    return out;
}

TransferOptions default_transfer(const TrainConfig& source) {
    TransferOptions t;
    t.target = source.data;
    t.target.variant = SceneVariant::shifted;
    t.batch_size = source.batch_size;
    t.learning_rate = source.optim.learning_rate;
    t.momentum = source.optim.momentum;
    t.box_weight = source.box_weight;
    t.seed = source.seed;
    t.eval = source.eval;
    return t;
}

}  // namespace ndft
