// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 success, 1 unexpected failure,
// 2 usage, 3 invalid configuration, 4 file I/O or checkpoint format,
// 5 numerical failure (non-finite loss, failed gradient check).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ndft/experiments.hpp"
#include "ndft/gradcheck.hpp"
#include "ndft/io.hpp"
#include "ndft/metrics.hpp"
#include "ndft/probe.hpp"
#include "ndft/synthgen.hpp"
#include "ndft/train.hpp"

namespace fs = std::filesystem;
using namespace ndft;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3, kIo = 4, kNumerical = 5 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;  // section.key=value
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "Run configuration file");
    cmd->add_option("--seed", c.seed, "Global seed; overrides train.seed");
    cmd->add_option("--set", c.overrides, "Override one field, e.g. --set train.iterations=200")->take_all();
}

RunConfig resolve(const Common& c) {
    RunConfig config = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    for (const auto& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError(o + ": expected section.key=value");
        set_config_value(config, o.substr(0, eq), o.substr(eq + 1));
    }
    if (c.seed) config.train.seed = *c.seed;
    config.train.validate();
    return config;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw IoError("cannot write " + path.string());
}

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void print_record(const MetricsRecord& r) {
    std::printf("  iter %6zu  %-10s task %.4f  class %.4f  iou %.4f\n", r.iteration, r.partition.c_str(), r.overall,
                r.class_accuracy, r.mean_iou);
}

void print_probes(const std::vector<ProbeResult>& results, const DatasetConfig& data) {
    for (const auto& p : results) {
        std::printf("  probe %-10s accuracy %.4f  chance %.4f  leakage %+.4f%s\n",
                    data.nuisances.at(p.nuisance).name.c_str(), p.accuracy, p.chance, p.leakage,
                    p.non_convergent ? "  (non-convergent)" : "");
    }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string out = "run";
    std::string resume;
    std::vector<std::size_t> checkpoint_at;
    bool probe = false;
    bool force = false;
};

int cmd_train(const TrainArgs& a) {
    RunConfig config;
    TrainResult run = [&] {
        if (a.resume.empty()) {
            config = resolve(a.common);
            return initialize(config.train);
        }
        if (!a.common.config_path.empty() || a.common.seed) {
            throw ConfigError("--resume: the checkpoint carries the config and seed");
        }
        Checkpoint ck = load_checkpoint(a.resume);
        config = ck.config;
        // Only the budget may change on resume.
        for (const auto& o : a.common.overrides) {
            if (o.rfind("train.iterations=", 0) != 0) throw ConfigError(o + ": only train.iterations may be set on resume");
            set_config_value(config, "train.iterations", o.substr(17));
        }
        return TrainResult{std::move(ck.model), std::move(ck.state), {}};
    }();
    NdftModel& model = run.model;
    TrainState& state = run.state;

    const fs::path dir = a.out;
    prepare_dir(dir);
    const fs::path manifest = dir / "manifest.json";
    if (a.force) fs::remove(manifest);
    std::vector<std::string> outputs{(dir / "metrics.jsonl").string(), (dir / "metrics.csv").string(),
                                     (dir / "final.ckpt").string()};
    for (std::size_t n : a.checkpoint_at) outputs.push_back((dir / ("iter-" + std::to_string(n) + ".ckpt")).string());
    if (a.probe) outputs.push_back((dir / "probe.jsonl").string());
    write_manifest(manifest, make_manifest(config, outputs));

    MetricsLog log(dir / "metrics.jsonl");
    std::vector<MetricsRecord> records;
    auto sink = [&](const MetricsRecord& r) {
        log.write(r);
        records.push_back(r);
        print_record(r);
    };
    if (a.resume.empty()) {
        std::printf("pretraining (%zu task steps)\n", config.train.pretrain_iterations);
        pretrain(model, state, config.train);
        for (const auto& w : state.warnings) std::printf("  warning: %s\n", w.c_str());
    } else {
        std::printf("resuming at iteration %zu\n", state.iteration);
    }
    std::printf("training %s for %zu iterations\n", to_string(config.train.mode).c_str(), config.train.iterations);
    run_training(model, state, config.train, sink, [&](const NdftModel& m, const TrainState& s) {
        for (std::size_t n : a.checkpoint_at) {
            if (s.iteration == n) save_checkpoint(dir / ("iter-" + std::to_string(n) + ".ckpt"), config, m, s);
        }
    });
    save_checkpoint(dir / "final.ckpt", config, model, state);
    write_file(dir / "metrics.csv", metrics_csv(records));
    std::printf("restarts: %zu\n", state.restarts);
    if (a.probe) {
        const auto probes = probe_all(model, config.train.data, config.train.seed, config.probe);
        write_file(dir / "probe.jsonl", probe_json(probes, config.train.data));
        print_probes(probes, config.train.data);
    }
    return kOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string partition = "val-unseen";
    std::optional<std::size_t> samples;
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    EvalOptions opts = ck.config.train.eval;
    if (a.samples) opts.samples = *a.samples;
    const auto& t = ck.config.train;
    MetricsRecord r;
    if (a.partition == "val-all") {
        r = evaluate_all(ck.model, t.data, ck.state.split, t.seed, opts);
    } else {
        Partition p;
        try {
            p = parse_partition(a.partition);
        } catch (const std::invalid_argument&) {
            throw ConfigError("--partition: expected train, val-seen, val-unseen or val-all");
        }
        r = evaluate(ck.model, t.data, ck.state.split, p, t.seed, opts);
    }
    r.iteration = ck.state.iteration;
    r.mode = to_string(t.mode);
    r.gammas = t.resolved_gammas();
    print_record(r);
    if (!a.out.empty()) write_file(a.out, to_json_line(r) + "\n");
    return kOk;
}

struct ProbeArgs {
    std::string checkpoint;
    std::string fixture;  // identity | constant, instead of a checkpoint
    Common common;
    std::optional<std::size_t> nuisance;
    std::string out;
};

int cmd_probe(const ProbeArgs& a) {
    RunConfig config;
    std::optional<Checkpoint> ck;
    FeatureFn features;
    if (!a.checkpoint.empty()) {
        ck.emplace(load_checkpoint(a.checkpoint));
        config = ck->config;
        if (a.common.seed) config.train.seed = *a.common.seed;
        features = trunk_features(ck->model);
    } else if (a.fixture == "identity") {
        config = resolve(a.common);
        features = identity_features();
    } else if (a.fixture == "constant") {
        config = resolve(a.common);
        features = constant_features(config.train.resolved_arch().feature_size());
    } else {
        throw CLI::ValidationError("probe", "give --checkpoint or --fixture identity|constant");
    }
    auto results = probe_features(features, config.train.data, config.train.seed, config.probe);
    if (a.nuisance) {
        if (*a.nuisance >= results.size()) throw ConfigError("--nuisance: index out of range");
        results = {results[*a.nuisance]};
    }
    print_probes(results, config.train.data);
    if (!a.out.empty()) write_file(a.out, probe_json(results, config.train.data));
    return kOk;
}

struct GridArgs {
    Common common;
    std::string subsets = "all";
    std::size_t seeds = 5;
    std::optional<double> gamma;
    std::string out = "grid";
};

std::vector<std::vector<std::size_t>> parse_subsets(const std::string& text, const DatasetConfig& data) {
    if (text == "all") return all_subsets(data.num_nuisances());
    // Semicolon-separated subsets of factor initials, e.g. "-;A;A,V,W" ("-" is the empty set).
    std::vector<std::vector<std::size_t>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        std::vector<std::size_t> subset;
        if (item != "-" && !item.empty()) {
            std::stringstream is(item);
            std::string letter;
            while (std::getline(is, letter, ',')) {
                std::size_t found = data.num_nuisances();
                for (std::size_t i = 0; i < data.num_nuisances(); ++i) {
                    if (subset_label(data, {i}) == "{" + letter + "}") found = i;
                }
                if (found == data.num_nuisances()) throw ConfigError("--subsets: unknown factor '" + letter + "'");
                subset.push_back(found);
            }
        }
        std::sort(subset.begin(), subset.end());
        out.push_back(subset);
    }
    return out;
}

int cmd_grid(const GridArgs& a) {
    const RunConfig config = resolve(a.common);
    GridOptions opts;
    opts.subsets = parse_subsets(a.subsets, config.train.data);
    opts.gamma = a.gamma.value_or(config.grid_gamma);
    opts.seeds.clear();
    for (std::size_t i = 0; i < a.seeds; ++i) opts.seeds.push_back(config.train.seed + i);
    opts.on_run = [](const GridCell& cell, const GridRun& run, const TrainResult*) {
        if (run.failed) {
            std::printf("  %-8s seed %llu failed: %s\n", cell.label.c_str(), static_cast<unsigned long long>(run.seed),
                        run.error.c_str());
        } else {
            std::printf("  %-8s seed %llu  seen %.4f  unseen %.4f\n", cell.label.c_str(),
                        static_cast<unsigned long long>(run.seed), run.val_seen.overall, run.val_unseen.overall);
        }
        std::fflush(stdout);
    };
    const fs::path dir = a.out;
    prepare_dir(dir);
    write_manifest(dir / "manifest.json",
                   make_manifest(config, {(dir / "grid.txt").string(), (dir / "grid.jsonl").string()}));
    const GridTable table = ablation_grid(config.train, opts);
    const std::string text = format_grid(table);
    write_file(dir / "grid.txt", text);
    write_file(dir / "grid.jsonl", grid_jsonl(table));
    std::printf("\n%s", text.c_str());
    return kOk;
}

struct TransferArgs {
    std::string checkpoint;
    std::optional<std::size_t> iterations;
    bool scratch = false;
    std::string out;
};

int cmd_transfer(const TransferArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    TransferOptions opts = default_transfer(ck.config.train);
    opts.iterations = a.iterations.value_or(ck.config.transfer.iterations);
    opts.learning_rate = ck.config.transfer.learning_rate;
    std::string lines;
    const TransferResult frozen = transfer(ck.model, opts);
    std::printf("frozen trunk: task %.4f (%zu trained parameters, trunk %s)\n", frozen.metrics.overall,
                frozen.trained_parameters,
                frozen.trunk_hash_before == frozen.trunk_hash_after ? "unchanged" : "CHANGED");
    lines += transfer_json("frozen", frozen);
    if (a.scratch) {
        const TransferResult s = train_from_scratch(ck.config.train.resolved_arch(), opts);
        std::printf("from scratch: task %.4f (%zu trained parameters)\n", s.metrics.overall, s.trained_parameters);
        lines += transfer_json("scratch", s);
    }
    if (!a.out.empty()) write_file(a.out, lines);
    return kOk;
}

struct GradcheckArgs {
    std::size_t points = 20;
    std::uint64_t seed = 1;
    double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    GradcheckOptions opts;
    opts.tolerance = a.tolerance;
    const auto suite = gradcheck_suite(a.points, a.seed, opts);
    double worst = 0.0;
    bool ok = true;
    for (const auto& e : suite) {
        std::printf("  %-32s points %3zu  max rel error %.3e  %s\n", e.name.c_str(), e.points, e.worst.max_rel_error,
                    e.worst.passed ? "ok" : "FAIL");
        worst = std::max(worst, e.worst.max_rel_error);
        ok = ok && e.worst.passed;
    }
    std::printf("%zu checks, max relative error %.3e (tolerance %.1e): %s\n", suite.size(), worst, a.tolerance,
                ok ? "pass" : "FAIL");
    return ok ? kOk : kNumerical;
}

struct ExportArgs {
    Common common;
    std::string partition = "train";
    std::size_t count = 1000;
    std::string out = "data";
};

int cmd_export(const ExportArgs& a) {
    const RunConfig config = resolve(a.common);
    const auto& t = config.train;
    Partition p;
    try {
        p = parse_partition(a.partition);
    } catch (const std::invalid_argument&) {
        throw ConfigError("--partition: expected train, val-seen or val-unseen");
    }
    const DomainSplit split = make_split(t.data, t.data.holdout, t.seed);
    Rng rng = Rng::stream(t.seed, "export/" + a.partition);
    const auto samples = draw_samples(t.data, split, p, a.count, rng);
    try {
        export_dataset(a.out, samples, t.data);
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
    std::printf("exported %zu %s samples to %s\n", samples.size(), a.partition.c_str(), a.out.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"ndft: nuisance-disentangled feature training on synthetic scenes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Pretrain and train one model");
    add_common(train_cmd, train_args.common);
    train_cmd->add_option("--out", train_args.out, "Output directory");
    train_cmd->add_option("--resume", train_args.resume, "Continue from a checkpoint");
    train_cmd->add_option("--checkpoint-at", train_args.checkpoint_at, "Save a checkpoint after these iterations");
    train_cmd->add_flag("--probe", train_args.probe, "Probe the final trunk for every nuisance");
    train_cmd->add_flag("--force", train_args.force, "Replace an existing manifest in --out");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one partition");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--partition", eval_args.partition, "train, val-seen, val-unseen or val-all");
    eval_cmd->add_option("--samples", eval_args.samples, "Evaluation samples; default eval.samples");
    eval_cmd->add_option("--out", eval_args.out, "Write the record as one JSON line");

    ProbeArgs probe_args;
    auto* probe_cmd = app.add_subcommand("probe", "Train fresh nuisance probes on frozen features");
    probe_cmd->add_option("--checkpoint", probe_args.checkpoint, "Checkpoint whose trunk is probed");
    probe_cmd->add_option("--fixture", probe_args.fixture, "identity or constant features instead of a model")
        ->check(CLI::IsMember({"identity", "constant"}));
    add_common(probe_cmd, probe_args.common);
    probe_cmd->add_option("--nuisance", probe_args.nuisance, "Zero-based factor index");
    probe_cmd->add_option("--out", probe_args.out);

    GridArgs grid_args;
    auto* grid_cmd = app.add_subcommand("grid", "Nuisance-subset ablation grid");
    add_common(grid_cmd, grid_args.common);
    grid_cmd->add_option("--subsets", grid_args.subsets, "'all' or e.g. '-;A;A,V,W'");
    grid_cmd->add_option("--seeds", grid_args.seeds, "Number of seeds, starting at --seed")
        ->check(CLI::PositiveNumber);
    grid_cmd->add_option("--gamma", grid_args.gamma, "Gamma on the active nuisances; default run.grid_gamma");
    grid_cmd->add_option("--out", grid_args.out, "Output directory");

    TransferArgs transfer_args;
    auto* transfer_cmd = app.add_subcommand("transfer", "Retrain f_O on the shifted generator with f_T frozen");
    transfer_cmd->add_option("--checkpoint", transfer_args.checkpoint, "Source model")->required();
    transfer_cmd->add_option("--iterations", transfer_args.iterations, "Task-head steps; default transfer.iterations");
    transfer_cmd->add_flag("--scratch", transfer_args.scratch, "Also train a fresh model end to end");
    transfer_cmd->add_option("--out", transfer_args.out);

    GradcheckArgs gc_args;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
    gc_cmd->add_option("--points", gc_args.points, "Random points per op")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--seed", gc_args.seed);
    gc_cmd->add_option("--tolerance", gc_args.tolerance, "Maximum relative error");

    ExportArgs export_args;
    auto* export_cmd = app.add_subcommand("export-data", "Write generated samples to a flat dataset directory");
    add_common(export_cmd, export_args.common);
    export_cmd->add_option("--partition", export_args.partition, "train, val-seen, val-unseen or val-all");
    export_cmd->add_option("--count", export_args.count, "Number of samples");
    export_cmd->add_option("--out", export_args.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*probe_cmd) return cmd_probe(probe_args);
        if (*grid_cmd) return cmd_grid(grid_args);
        if (*transfer_cmd) return cmd_transfer(transfer_args);
        if (*gc_cmd) return cmd_gradcheck(gc_args);
        if (*export_cmd) return cmd_export(export_args);
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n%s", e.what(), app.help().c_str());
        return kUsage;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kNumerical;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kUsage;
}
