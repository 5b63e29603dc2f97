// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layers, SGD with momentum, and the three-part network: a shared trunk f_T,
// a task head f_O (class logits + one box), and k nuisance heads f_N[i].
// Parameters are partitioned into disjoint groups so that training can do
// coordinate descent between {f_T, f_O} and each f_N[i].

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ndft/rng.hpp"
#include "ndft/tensor.hpp"

namespace ndft {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ArchConfig {
    std::size_t image_size = 32;
    std::size_t in_channels = 1;
    std::size_t num_classes = 4;
    std::vector<std::size_t> nuisance_levels{3, 3, 2};
    // One conv(3x3, pad 1) -> relu block per entry; the first
    // `pooled_blocks` blocks end in a 2x2 max pool.
    std::vector<std::size_t> trunk_channels{8, 16, 16};
    std::size_t pooled_blocks = 3;
    std::size_t head_channels = 16;
    std::size_t nuisance_hidden = 16;

    std::size_t num_nuisances() const { return nuisance_levels.size(); }
    /// Spatial extent of the trunk output.
    std::size_t feature_size() const;
    void validate() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Kaiming-style uniform bound sqrt(6 / fan_in).
double init_bound(std::size_t fan_in);

struct Conv2d {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    std::size_t padding = 1;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t padding, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void init(Rng& rng);
    Conv2d clone() const;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void init(Rng& rng);
    Linear clone() const;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct ParamGroup {
    std::string name;
    std::vector<NamedParam> params;

    std::size_t parameter_count() const;
    void zero_grad();
};

/// GAP -> batch standardization -> linear -> relu -> linear over the shared
/// feature map. The standardization has no parameters; it stops the trunk
/// from silencing a head by shrinking or shifting the pooled features.
struct NuisanceHead {
    Linear hidden;
    Linear out;

    Tensor forward(const Tensor& features) const;
};

struct TaskOutputs {
    Tensor class_logits;  // [B, C]
    Tensor box;           // [B, 4]
};

struct ForwardOutputs {
    Tensor features;
    Tensor class_logits;
    Tensor box;
    std::vector<Tensor> nuisance_logits;
};

std::string trunk_group_name();
std::string task_group_name();
/// 1-based, matching the f_N[1..k] naming.
std::string nuisance_group_name(std::size_t one_based);

class NdftModel {
public:
    NdftModel(ArchConfig config, Rng& init_rng);

    const ArchConfig& config() const { return config_; }
    std::size_t num_nuisances() const { return nuisance_heads_.size(); }

    ForwardOutputs forward(const Tensor& images) const;
    Tensor trunk(const Tensor& images) const;
    TaskOutputs task_head(const Tensor& features) const;
    /// Zero-based head index.
    Tensor nuisance_head(std::size_t index, const Tensor& features) const;

    /// Groups in the order f_T, f_O, f_N[1..k]; handles share storage with the model.
    std::vector<ParamGroup> groups() const;
    ParamGroup group(std::string_view name) const;
    ParamGroup nuisance_group(std::size_t index) const { return group(nuisance_group_name(index + 1)); }
    std::vector<NamedParam> parameters() const;

    /// Redraws one group's tensors (weights uniform, biases zero) in place.
    void reinit_group(std::string_view name, Rng& rng);

    /// Deep copy with no shared storage.
    NdftModel clone() const;

private:
    NdftModel() = default;

    ArchConfig config_;
    std::vector<Conv2d> trunk_;
    Conv2d task_conv_;
    Linear class_fc_;
    Linear box_fc_;
    std::vector<NuisanceHead> nuisance_heads_;
};

/// FNV-1a over the raw bytes of every tensor in the group.
std::uint64_t hash_group(const ParamGroup& group);

struct SgdState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::vector<std::vector<double>> velocity;  // aligned with the group's params
};

SgdState make_sgd_state(const ParamGroup& group, double learning_rate, double momentum);

/// v <- mu v + g; p <- p - lr v; then clears the group's gradients.
void sgd_step(SgdState& state, ParamGroup& group);

}  // namespace ndft
