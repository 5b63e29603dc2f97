// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense fp64 tensors with a reverse-mode differentiation graph.
//
// Every tensor is a shared handle onto a Node. An op whose inputs require
// gradients records its inputs and a backward rule on the output node; node
// ids are drawn from a monotone counter, so sorting reachable nodes by id
// yields a valid topological order (the tape).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndft {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Incompatible operand shapes. The message names the op and both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf detected where finite values are required.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated an API precondition (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    BackwardFn backward;

    bool has_grad() const { return !grad.empty(); }
    std::vector<double>& grad_buffer();  // allocates zeros on first use
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double item() const;
    double at(std::size_t flat) const { return node_->data.at(flat); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->has_grad(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    /// Deep copy of the values, detached from the graph.
    Tensor clone() const;
    /// Copies values into a fresh leaf that does not require grad.
    Tensor detach() const;

    Node& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }

private:
    NodePtr node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS, which otherwise costs a page fault per touched page on every step.
/// Call once at program start; a no-op outside glibc.
void tune_allocator();

/// Builds an op output. When recording is enabled and any input requires a
/// gradient, the node keeps its inputs and the backward rule. Exposed so that
/// tests can register ops with hand-written rules.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs, BackwardFn backward);

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Forward ops.

Tensor add(const Tensor& a, const Tensor& b);  // b may match a's trailing dims
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// x [B,Cin,H,W], weight [Cout,Cin,K,K], bias [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

Tensor relu(const Tensor& x);
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor global_avg_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// out[b] = x[b, index[b]] for x [B,C].
Tensor pick(const Tensor& x, std::span<const int> index);

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise, elementwise.
Tensor smooth_l1(const Tensor& x);

/// Column-wise (x - mean) / sqrt(var + eps) over the batch axis of x [B, D],
/// using the biased batch variance.
Tensor standardize_batch(const Tensor& x, double eps = 1e-5);

/// Identity forward; backward multiplies the incoming gradient by -factor.
Tensor grad_reverse(const Tensor& x, double factor);

}  // namespace ndft
