// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Persistence: the sectioned key=value run configuration, binary
// checkpoints, line-delimited metrics logs with a CSV exporter, and the run
// manifest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ndft/experiments.hpp"
#include "ndft/metrics.hpp"
#include "ndft/probe.hpp"
#include "ndft/train.hpp"

namespace ndft {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration.

struct TransferSettings {
    std::size_t iterations = 1000;
    double learning_rate = 0.01;

    friend bool operator==(const TransferSettings&, const TransferSettings&) = default;
};

struct RunConfig {
    TrainConfig train;
    ProbeOptions probe;
    TransferSettings transfer;
    double grid_gamma = 0.01;
};

/// Parses the sectioned key=value format. Unknown sections or keys and
/// malformed values raise ConfigError naming the key.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Sets one field addressed as "section.key" (or "nuisance.NAME.key" for an
/// existing factor), then revalidates.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Every field, fully resolved; parse_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr char kCheckpointMagic[8] = {'N', 'D', 'F', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public IoError {
public:
    CheckpointError(std::string record, const std::string& what);
    const std::string& record() const { return record_; }

private:
    std::string record_;
};

struct Checkpoint {
    RunConfig config;
    NdftModel model;
    TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const NdftModel& model,
                     const TrainState& state);
std::vector<std::uint8_t> encode_checkpoint(const RunConfig& config, const NdftModel& model, const TrainState& state);

/// Reads and validates every record before building anything, so a bad
/// file never yields a partial model.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Metrics.

std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_metrics_line(std::string_view line);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Appends one line per record and flushes; a failed write flushes what it
/// can and raises IoError.
class MetricsLog {
public:
    explicit MetricsLog(const std::filesystem::path& path, bool append = false);
    void write(const MetricsRecord& record);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// One row per record; columns are the union over the stream.
std::string metrics_csv(const std::vector<MetricsRecord>& records);

/// One JSON object per line; the data config supplies the factor names.
std::string probe_json(const std::vector<ProbeResult>& results, const DatasetConfig& data);
std::string grid_jsonl(const GridTable& table);
std::string transfer_json(const std::string& label, const TransferResult& result);

// ---------------------------------------------------------------------------
// Manifest.

struct RunManifest {
    std::string config_text;
    std::uint64_t seed = 0;
    std::uint64_t dataset_seed = 0;
    std::string code_version;
    std::string start_time;  // UTC, ISO 8601
    std::vector<std::string> outputs;
};

std::string version_string();
RunManifest make_manifest(const RunConfig& config, std::vector<std::string> outputs);
std::string to_json(const RunManifest& manifest);
/// Refuses to overwrite an existing manifest.
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace ndft
