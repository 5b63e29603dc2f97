// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/nn.hpp"

#include <cmath>
#include <cstring>

namespace ndft {

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng) {
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

void fill_zero(Tensor& t) {
    for (double& v : t.data()) v = 0.0;
}

Tensor clone_param(const Tensor& t) {
    Tensor c = t.detach();
    c.set_requires_grad(true);
    return c;
}

}  // namespace

std::size_t ArchConfig::feature_size() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < pooled_blocks && i < trunk_channels.size(); ++i) s /= 2;
    return s;
}

void ArchConfig::validate() const {
    if (image_size == 0 || in_channels == 0) throw ConfigError("arch: image_size and in_channels must be positive");
    if (num_classes < 2) throw ConfigError("arch: num_classes must be at least 2");
    if (trunk_channels.empty()) throw ConfigError("arch: trunk needs at least one block");
    for (std::size_t c : trunk_channels) {
        if (c == 0) throw ConfigError("arch: trunk channel widths must be positive");
    }
    if (pooled_blocks > trunk_channels.size()) throw ConfigError("arch: pooled_blocks exceeds the trunk depth");
    if (head_channels == 0 || nuisance_hidden == 0) throw ConfigError("arch: head widths must be positive");
    for (std::size_t i = 0; i < nuisance_levels.size(); ++i) {
        if (nuisance_levels[i] < 1) {
            throw ConfigError("arch: nuisance " + std::to_string(i + 1) + " has nonpositive level count");
        }
    }
    if (feature_size() == 0) throw ConfigError("arch: image_size too small for the trunk depth");
}

double init_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad, Rng& rng)
    : weight(Tensor::zeros({out, in, kernel, kernel}, true)), bias(Tensor::zeros({out}, true)), padding(pad) {
    init(rng);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, {.stride = 1, .padding = padding}); }

void Conv2d::init(Rng& rng) {
    const std::size_t fan_in = weight.dim(1) * weight.dim(2) * weight.dim(3);
    fill_uniform(weight, init_bound(fan_in), rng);
    fill_zero(bias);
}

Conv2d Conv2d::clone() const {
    Conv2d c;
    c.weight = clone_param(weight);
    c.bias = clone_param(bias);
    c.padding = padding;
    return c;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::zeros({in, out}, true)), bias(Tensor::zeros({out}, true)) {
    init(rng);
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::init(Rng& rng) {
    fill_uniform(weight, init_bound(weight.dim(0)), rng);
    fill_zero(bias);
}

Linear Linear::clone() const {
    Linear c;
    c.weight = clone_param(weight);
    c.bias = clone_param(bias);
    return c;
}

std::size_t ParamGroup::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

void ParamGroup::zero_grad() {
    for (auto& p : params) p.tensor.zero_grad();
}

Tensor NuisanceHead::forward(const Tensor& features) const {
    return out.forward(relu(hidden.forward(standardize_batch(global_avg_pool(features)))));
}

std::string trunk_group_name() { return "f_T"; }
std::string task_group_name() { return "f_O"; }
std::string nuisance_group_name(std::size_t one_based) { return "f_N[" + std::to_string(one_based) + "]"; }

NdftModel::NdftModel(ArchConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    std::size_t ch = config_.in_channels;
    for (std::size_t width : config_.trunk_channels) {
        trunk_.emplace_back(ch, width, 3, 1, rng);
        ch = width;
    }
    task_conv_ = Conv2d(ch, config_.head_channels, 3, 1, rng);
    const std::size_t fs = config_.feature_size();
    const std::size_t flat = config_.head_channels * fs * fs;
    class_fc_ = Linear(flat, config_.num_classes, rng);
    box_fc_ = Linear(flat, 4, rng);
    for (std::size_t levels : config_.nuisance_levels) {
        NuisanceHead head;
        head.hidden = Linear(ch, config_.nuisance_hidden, rng);
        head.out = Linear(config_.nuisance_hidden, levels, rng);
        nuisance_heads_.push_back(std::move(head));
    }
}

Tensor NdftModel::trunk(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.image_size ||
        images.dim(3) != config_.image_size) {
        throw ShapeError("forward: images of shape " + to_string(images.shape()) + " do not match configured [B," +
                         std::to_string(config_.in_channels) + "," + std::to_string(config_.image_size) + "," +
                         std::to_string(config_.image_size) + "]");
    }
    Tensor x = images;
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        x = relu(trunk_[i].forward(x));
        if (i < config_.pooled_blocks) x = max_pool2d(x, 2, 2);
    }
    return x;
}

TaskOutputs NdftModel::task_head(const Tensor& features) const {
    Tensor h = relu(task_conv_.forward(features));
    h = reshape(h, {h.dim(0), h.size() / h.dim(0)});
    return {class_fc_.forward(h), box_fc_.forward(h)};
}

Tensor NdftModel::nuisance_head(std::size_t index, const Tensor& features) const {
    return nuisance_heads_.at(index).forward(features);
}

ForwardOutputs NdftModel::forward(const Tensor& images) const {
    ForwardOutputs out;
    out.features = trunk(images);
    auto task = task_head(out.features);
    out.class_logits = task.class_logits;
    out.box = task.box;
    for (std::size_t i = 0; i < nuisance_heads_.size(); ++i) out.nuisance_logits.push_back(nuisance_head(i, out.features));
    return out;
}

std::vector<ParamGroup> NdftModel::groups() const {
    std::vector<ParamGroup> gs;
    ParamGroup trunk{trunk_group_name(), {}};
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        trunk.params.push_back({"conv" + std::to_string(i + 1) + ".weight", trunk_[i].weight});
        trunk.params.push_back({"conv" + std::to_string(i + 1) + ".bias", trunk_[i].bias});
    }
    gs.push_back(std::move(trunk));
    gs.push_back({task_group_name(),
                  {{"conv.weight", task_conv_.weight},
                   {"conv.bias", task_conv_.bias},
                   {"cls.weight", class_fc_.weight},
                   {"cls.bias", class_fc_.bias},
                   {"box.weight", box_fc_.weight},
                   {"box.bias", box_fc_.bias}}});
    for (std::size_t i = 0; i < nuisance_heads_.size(); ++i) {
        const auto& h = nuisance_heads_[i];
        gs.push_back({nuisance_group_name(i + 1),
                      {{"hidden.weight", h.hidden.weight},
                       {"hidden.bias", h.hidden.bias},
                       {"out.weight", h.out.weight},
                       {"out.bias", h.out.bias}}});
    }
    return gs;
}

ParamGroup NdftModel::group(std::string_view name) const {
    for (auto& g : groups()) {
        if (g.name == name) return g;
    }
    throw std::out_of_range("unknown parameter group '" + std::string(name) + "'");
}

std::vector<NamedParam> NdftModel::parameters() const {
    std::vector<NamedParam> all;
    for (auto& g : groups()) {
        for (auto& p : g.params) all.push_back({g.name + "." + p.name, p.tensor});
    }
    return all;
}

void NdftModel::reinit_group(std::string_view name, Rng& rng) {
    if (name == trunk_group_name()) {
        for (auto& c : trunk_) c.init(rng);
        return;
    }
    if (name == task_group_name()) {
        task_conv_.init(rng);
        class_fc_.init(rng);
        box_fc_.init(rng);
        return;
    }
    for (std::size_t i = 0; i < nuisance_heads_.size(); ++i) {
        if (name == nuisance_group_name(i + 1)) {
            nuisance_heads_[i].hidden.init(rng);
            nuisance_heads_[i].out.init(rng);
            return;
        }
    }
    throw std::out_of_range("unknown parameter group '" + std::string(name) + "'");
}

NdftModel NdftModel::clone() const {
    NdftModel m;
    m.config_ = config_;
    for (const auto& c : trunk_) m.trunk_.push_back(c.clone());
    m.task_conv_ = task_conv_.clone();
    m.class_fc_ = class_fc_.clone();
    m.box_fc_ = box_fc_.clone();
    for (const auto& h : nuisance_heads_) m.nuisance_heads_.push_back({h.hidden.clone(), h.out.clone()});
    return m;
}

std::uint64_t hash_group(const ParamGroup& group) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : group.params) {
        for (double v : p.tensor.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

SgdState make_sgd_state(const ParamGroup& group, double learning_rate, double momentum) {
    SgdState s;
    s.learning_rate = learning_rate;
    s.momentum = momentum;
    for (const auto& p : group.params) s.velocity.emplace_back(p.tensor.size(), 0.0);
    return s;
}

void sgd_step(SgdState& state, ParamGroup& group) {
    if (state.velocity.size() != group.params.size()) {
        throw ContractError("sgd_step: optimizer state does not match group " + group.name);
    }
    for (std::size_t i = 0; i < group.params.size(); ++i) {
        const auto& p = group.params[i];
        if (!p.tensor.has_grad()) {
            throw ContractError("sgd_step: " + group.name + "." + p.name + " has no gradient");
        }
        if (state.velocity[i].size() != p.tensor.size()) {
            throw ContractError("sgd_step: velocity shape mismatch for " + group.name + "." + p.name);
        }
    }
    for (std::size_t i = 0; i < group.params.size(); ++i) {
        Tensor t = group.params[i].tensor;
        auto& v = state.velocity[i];
        auto data = t.data();
        auto g = t.grad();
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j];
            data[j] -= state.learning_rate * v[j];
        }
        t.zero_grad();
    }
}

}  // namespace ndft
