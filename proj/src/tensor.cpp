// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ndft {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

#ifdef NDFT_CHECK_FINITE
void check_finite(const char* op, std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string(op) + ": non-finite " + what);
        }
    }
}
#endif

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
    }
    std::vector<double> data(numel(shape), value);
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
    }
    if (numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item: tensor of shape " + to_string(shape()) + " is not scalar");
    return node_->data[0];
}

Tensor Tensor::clone() const {
    return Tensor(new_node(node_->shape, node_->data, node_->requires_grad && node_->parents.empty()));
}

Tensor Tensor::detach() const {
    return Tensor(new_node(node_->shape, node_->data, false));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs, BackwardFn backward) {
#ifdef NDFT_CHECK_FINITE
    for (const auto& in : inputs) check_finite(op, in.data(), "input");
    check_finite(op, data, "output");
#endif
    bool record = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) record = record || in.requires_grad();
    }
    auto node = new_node(std::move(shape), std::move(data), record);
    node->op = op;
    if (record) {
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.ptr());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not on the tape (no input requires grad)");
    }

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{&loss.node()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

    loss.node().grad_buffer()[0] += 1.0;
    for (Node* n : order) {
        if (n->parents.empty() || !n->has_grad()) continue;
        n->backward(*n);
        n->grad.clear();  // interior gradients are consumed once
    }
}

}  // namespace ndft
