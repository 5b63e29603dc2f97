// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ndft/tensor.hpp"

namespace ndft {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(x.shape()));
    }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const char* op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

bool is_trailing(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
        return make_op_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        });
    }
    if (!is_trailing(a.shape(), b.shape())) shape_mismatch("add", a.shape(), b.shape());
    const std::size_t n = b.size();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i % n);
    return make_op_result("add", a.shape(), std::move(out), {a, b}, [n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return make_op_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
    return make_op_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
    return make_op_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        ConstMapMat g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            MapMat(pa.grad_buffer().data(), m, k).noalias() += g * ConstMapMat(pb.data.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MapMat(pb.grad_buffer().data(), k, n).noalias() += ConstMapMat(pa.data.data(), m, k).transpose() * g;
        }
    });
}

namespace {

// Output positions o with o * stride + k - pad inside [0, in).
struct Span {
    std::size_t lo = 0, hi = 0;
};

Span valid_span(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out) {
    Span s;
    s.lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    s.hi = in + pad < k + 1 ? 0 : std::min(out, (in - 1 + pad - k) / stride + 1);
    if (s.lo > s.hi) s.lo = s.hi;
    return s;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", weight, 4);
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) shape_mismatch("conv2d", x.shape(), weight.shape());
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
        shape_mismatch("conv2d(bias)", weight.shape(), bias.shape());
    }
    const std::size_t stride = opts.stride, pad = opts.padding;
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (h + 2 * pad < kh || w + 2 * pad < kw) shape_mismatch("conv2d", x.shape(), weight.shape());
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    const std::size_t rows = cin * kh * kw;
    const std::size_t plane = ho * wo;
    const std::size_t cols_n = batch * plane;

    // im2col: cols[(c,i,j), (b,oy,ox)]; every entry is written exactly once.
    auto cols = std::make_shared<std::vector<double>>(rows * cols_n);
    const double* xd = x.data().data();
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
            const Span ys = valid_span(i, pad, stride, h, ho);
            for (std::size_t j = 0; j < kw; ++j) {
                const Span xs = valid_span(j, pad, stride, w, wo);
                double* row = cols->data() + ((c * kh + i) * kw + j) * cols_n;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = xd + (b * cin + c) * h * w;
                    double* dst = row + b * plane;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        double* d = dst + oy * wo;
                        if (oy < ys.lo || oy >= ys.hi) {
                            std::fill(d, d + wo, 0.0);
                            continue;
                        }
                        const double* line = src + (oy * stride + i - pad) * w;
                        std::fill(d, d + xs.lo, 0.0);
                        for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) d[ox] = line[ox * stride + j - pad];
                        std::fill(d + xs.hi, d + wo, 0.0);
                    }
                }
            }
        }
    }

    RowMat prod(cout, cols_n);
    prod.noalias() = ConstMapMat(weight.data().data(), cout, rows) * ConstMapMat(cols->data(), rows, cols_n);
    std::vector<double> out(batch * cout * plane);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const double bv = bias.defined() ? bias.at(co) : 0.0;
            const double* src = prod.data() + co * cols_n + b * plane;
            double* dst = out.data() + (b * cout + co) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
        }
    }

    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_op_result(
        "conv2d", {batch, cout, ho, wo}, std::move(out), std::move(inputs),
        [=](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            RowMat g(cout, cols_n);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* src = self.grad.data() + (b * cout + co) * plane;
                    std::copy(src, src + plane, g.data() + co * cols_n + b * plane);
                }
            }
            if (has_bias && self.parents[2]->requires_grad) {
                auto& gb = self.parents[2]->grad_buffer();
                for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(static_cast<Eigen::Index>(co)).sum();
            }
            if (pw.requires_grad) {
                MapMat(pw.grad_buffer().data(), cout, rows).noalias() +=
                    g * ConstMapMat(cols->data(), rows, cols_n).transpose();
            }
            if (px.requires_grad) {
                RowMat dcols = ConstMapMat(pw.data.data(), cout, rows).transpose() * g;
                auto& gx = px.grad_buffer();
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t i = 0; i < kh; ++i) {
                        const Span ys = valid_span(i, pad, stride, h, ho);
                        for (std::size_t j = 0; j < kw; ++j) {
                            const Span xs = valid_span(j, pad, stride, w, wo);
                            const double* row = dcols.data() + ((c * kh + i) * kw + j) * cols_n;
                            for (std::size_t b = 0; b < batch; ++b) {
                                double* dst = gx.data() + (b * cin + c) * h * w;
                                const double* src = row + b * plane;
                                for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
                                    double* line = dst + (oy * stride + i - pad) * w;
                                    const double* s = src + oy * wo;
                                    for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) line[ox * stride + j - pad] += s[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* xd = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    return make_op_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (p.data[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
    require_rank("max_pool2d", x, 4);
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
        throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " invalid for shape " +
                         to_string(x.shape()));
    }
    const std::size_t ho = (h - kernel) / stride + 1;
    const std::size_t wo = (w - kernel) / stride + 1;
    std::vector<double> out(batch * ch * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const double* xd = x.data().data();
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const std::size_t base = bc * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
                std::size_t best = base + oy * stride * w + ox * stride;
                for (std::size_t i = 0; i < kernel; ++i) {
                    for (std::size_t j = 0; j < kernel; ++j) {
                        const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
                        if (xd[idx] > xd[best]) best = idx;
                    }
                }
                out[o] = xd[best];
                (*argmax)[o] = best;
            }
        }
    }
    return make_op_result("max_pool2d", {batch, ch, ho, wo}, std::move(out), {x}, [argmax](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*argmax)[i]] += self.grad[i];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank("global_avg_pool", x, 4);
    const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(batch * ch);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += x.at(bc * plane + p);
        out[bc] = s * inv;
    }
    return make_op_result("global_avg_pool", {batch, ch}, std::move(out), {x}, [plane, inv](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t bc = 0; bc < self.grad.size(); ++bc) {
            const double v = self.grad[bc] * inv;
            for (std::size_t p = 0; p < plane; ++p) g[bc * plane + p] += v;
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape);
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    axis_view("concat", first, axis);
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) shape_mismatch("concat", first, p.shape());
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != axis && p.dim(d) != first[d]) shape_mismatch("concat", first, p.shape());
        }
        extents.push_back(p.dim(axis));
        out_shape[axis] += p.dim(axis);
    }
    const AxisView v = axis_view("concat", out_shape, axis);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t span = extents[k] * v.inner;
        for (std::size_t o = 0; o < v.outer; ++o) {
            const double* src = parts[k].data().data() + o * span;
            std::copy(src, src + span, out.data() + o * v.extent * v.inner + offset);
        }
        offset += span;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_op_result("concat", out_shape, std::move(out), std::move(inputs), [v, extents](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const std::size_t span = extents[k] * v.inner;
            if (self.parents[k]->requires_grad) {
                auto& g = self.parents[k]->grad_buffer();
                for (std::size_t o = 0; o < v.outer; ++o) {
                    const double* src = self.grad.data() + o * v.extent * v.inner + off;
                    for (std::size_t i = 0; i < span; ++i) g[o * span + i] += src[i];
                }
            }
            off += span;
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view("softmax", x.shape(), axis);
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < v.extent; ++c) mx = std::max(mx, x.at(base + c * v.inner));
            double z = 0.0;
            for (std::size_t c = 0; c < v.extent; ++c) {
                const double e = std::exp(x.at(base + c * v.inner) - mx);
                out[base + c * v.inner] = e;
                z += e;
            }
            for (std::size_t c = 0; c < v.extent; ++c) out[base + c * v.inner] /= z;
        }
    }
    return make_op_result("softmax", x.shape(), std::move(out), {x}, [v](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.extent * v.inner + in;
                double dot = 0.0;
                for (std::size_t c = 0; c < v.extent; ++c) {
                    const std::size_t i = base + c * v.inner;
                    dot += self.grad[i] * self.data[i];
                }
                for (std::size_t c = 0; c < v.extent; ++c) {
                    const std::size_t i = base + c * v.inner;
                    g[i] += self.data[i] * (self.grad[i] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view("log_softmax", x.shape(), axis);
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < v.extent; ++c) mx = std::max(mx, x.at(base + c * v.inner));
            double z = 0.0;
            for (std::size_t c = 0; c < v.extent; ++c) z += std::exp(x.at(base + c * v.inner) - mx);
            const double lse = mx + std::log(z);
            for (std::size_t c = 0; c < v.extent; ++c) out[base + c * v.inner] = x.at(base + c * v.inner) - lse;
        }
    }
    return make_op_result("log_softmax", x.shape(), std::move(out), {x}, [v](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.extent * v.inner + in;
                double gsum = 0.0;
                for (std::size_t c = 0; c < v.extent; ++c) gsum += self.grad[base + c * v.inner];
                for (std::size_t c = 0; c < v.extent; ++c) {
                    const std::size_t i = base + c * v.inner;
                    g[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
                }
            }
        }
    });
}

Tensor log(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.at(i));
    return make_op_result("log", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p.data[i];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op_result("sum", {1}, {s}, {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    return make_op_result("mean", {1}, {s * inv}, {x}, [inv](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (double& v : g) v += self.grad[0] * inv;
    });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
    require_rank("pick", x, 2);
    const std::size_t rows = x.dim(0), cls = x.dim(1);
    if (index.size() != rows) {
        throw ShapeError("pick: " + std::to_string(index.size()) + " indices for shape " + to_string(x.shape()));
    }
    std::vector<std::size_t> flat(rows);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= cls) {
            throw std::out_of_range("pick: index " + std::to_string(index[r]) + " out of range [0," +
                                    std::to_string(cls) + ")");
        }
        flat[r] = r * cls + static_cast<std::size_t>(index[r]);
        out[r] = x.at(flat[r]);
    }
    return make_op_result("pick", {rows}, std::move(out), {x}, [flat = std::move(flat)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < flat.size(); ++r) g[flat[r]] += self.grad[r];
    });
}

Tensor smooth_l1(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double a = std::abs(x.at(i));
        out[i] = a < 1.0 ? 0.5 * a * a : a - 0.5;
    }
    return make_op_result("smooth_l1", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.data[i];
            const double d = std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0);
            g[i] += self.grad[i] * d;
        }
    });
}

Tensor standardize_batch(const Tensor& x, double eps) {
    require_rank("standardize_batch", x, 2);
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const double* xd = x.data().data();
    const double n = static_cast<double>(rows);
    std::vector<double> inv_sd(cols, 0.0);
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < cols; ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < rows; ++r) m += xd[r * cols + c];
        m /= n;
        double v = 0.0;
        for (std::size_t r = 0; r < rows; ++r) v += (xd[r * cols + c] - m) * (xd[r * cols + c] - m);
        inv_sd[c] = 1.0 / std::sqrt(v / n + eps);
        for (std::size_t r = 0; r < rows; ++r) out[r * cols + c] = (xd[r * cols + c] - m) * inv_sd[c];
    }
    std::vector<double> y = out;  // kept for backward
    return make_op_result(
        "standardize_batch", x.shape(), std::move(out), {x},
        [rows, cols, n, inv_sd = std::move(inv_sd), y = std::move(y)](Node& self) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t c = 0; c < cols; ++c) {
                double mg = 0.0, mgy = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    mg += self.grad[r * cols + c];
                    mgy += self.grad[r * cols + c] * y[r * cols + c];
                }
                mg /= n;
                mgy /= n;
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t i = r * cols + c;
                    g[i] += inv_sd[c] * (self.grad[i] - mg - y[i] * mgy);
                }
            }
        });
}

Tensor grad_reverse(const Tensor& x, double factor) {
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op_result("grad_reverse", x.shape(), std::move(out), {x}, [factor](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= factor * self.grad[i];
    });
}

}  // namespace ndft
