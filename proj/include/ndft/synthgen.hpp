// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic single-object scenes with labeled nuisance factors.
//
// A scene is one of C elongated shapes placed on a cluttered background. Each
// nuisance factor changes both the object (scale, rotation, contrast) and the
// scene as a whole (haze, illumination ramp, base level), the way flying
// altitude, camera view and weather change an aerial frame. A fine-grained
// domain is one combination of nuisance levels; DomainSplit holds some
// combinations out of training.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndft/rng.hpp"
#include "ndft/tensor.hpp"

namespace ndft {

enum class NuisanceEffect { scale, rotation, brightness };

std::string to_string(NuisanceEffect effect);
NuisanceEffect parse_effect(std::string_view text);

struct NuisanceSpec {
    std::string name;
    std::vector<std::string> levels;
    NuisanceEffect effect = NuisanceEffect::scale;
    // Per-level parameter: object length as a fraction of the image (scale),
    // degrees (rotation), or object contrast (brightness).
    std::vector<double> centers;
    // Half-width of the uniform within-level variation around each center.
    double jitter = 0.0;
    // Amplitude of the scene-level cue for this factor.
    double scene_strength = 0.0;

    std::size_t level_count() const { return levels.size(); }
    void validate() const;
};

/// altitude {low, medium, high}, view {front, side, bird}, weather {day, night}.
std::vector<NuisanceSpec> default_nuisances();

enum class SceneVariant { source, shifted };

struct DatasetConfig {
    std::size_t image_size = 32;
    std::size_t num_classes = 4;
    std::vector<NuisanceSpec> nuisances = default_nuisances();
    std::size_t holdout = 4;  // number of unseen level combinations
    std::size_t clutter_blobs = 3;
    double clutter_contrast = 0.12;
    double noise_day = 0.03;
    double noise_night = 0.07;
    double min_box_area = 0.01;  // normalized
    SceneVariant variant = SceneVariant::source;

    std::size_t num_nuisances() const { return nuisances.size(); }
    std::vector<std::size_t> level_counts() const;
    std::size_t combination_count() const;
    void validate() const;
};

using Box = std::array<double, 4>;  // x_min, y_min, x_max, y_max in [0, 1]

double box_area(const Box& b);
double iou(const Box& a, const Box& b);

struct Sample {
    std::vector<double> image;  // H*W, row-major, values in [0, 1]
    int label = 0;
    Box box{};
    std::vector<int> nuisance;  // one level per factor
};

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Draws one scene. Within-level jitter, placement and clutter come from
/// `rng`; placement is redrawn a bounded number of times if the object would
/// leave the frame or fall below the minimum box area.
Sample render(const DatasetConfig& config, int label, std::span<const int> levels, Rng& rng);

// ---------------------------------------------------------------------------
// Domains and partitions.

std::vector<int> decode_combination(const DatasetConfig& config, std::size_t index);
std::size_t encode_combination(const DatasetConfig& config, std::span<const int> levels);

struct DomainSplit {
    std::vector<std::size_t> seen;    // sorted combination indices
    std::vector<std::size_t> unseen;  // sorted combination indices
};

/// Holds out `holdout` combinations chosen by `seed`, keeping every level of
/// every factor represented among the seen combinations.
DomainSplit make_split(const DatasetConfig& config, std::size_t holdout, std::uint64_t seed);

enum class Partition { train, val_seen, val_unseen };

std::string to_string(Partition p);
Partition parse_partition(std::string_view text);

struct Batch {
    Tensor images;  // [B, 1, H, W]
    std::vector<int> labels;
    Tensor boxes;  // [B, 4]
    std::vector<std::vector<int>> nuisance;  // [k][B]
    std::vector<std::size_t> combination;   // [B]

    std::size_t size() const { return labels.size(); }
};

Batch stack(std::span<const Sample> samples, const DatasetConfig& config);

/// One uniformly drawn combination of the partition and a uniform class per sample.
std::vector<Sample> draw_samples(const DatasetConfig& config, const DomainSplit& split, Partition partition,
                                 std::size_t count, Rng& rng);
Batch draw_batch(const DatasetConfig& config, const DomainSplit& split, Partition partition, std::size_t batch_size,
                 Rng& rng);

/// Endless batch source over one partition.
class BatchStream {
public:
    BatchStream(DatasetConfig config, DomainSplit split, Partition partition, std::size_t batch_size, Rng rng);
    Batch next();
    const Rng& rng() const { return rng_; }

private:
    DatasetConfig config_;
    DomainSplit split_;
    Partition partition_;
    std::size_t batch_size_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Flat dataset container: images.f32 (little-endian float32 planes) and
// index.txt (one line per sample with label, box and nuisance levels).

void export_dataset(const std::filesystem::path& dir, std::span<const Sample> samples, const DatasetConfig& config);
std::vector<Sample> import_dataset(const std::filesystem::path& dir);

}  // namespace ndft
