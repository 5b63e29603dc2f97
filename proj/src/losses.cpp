// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/losses.hpp"

#include <stdexcept>

namespace ndft {

std::string to_string(LossMode mode) {
    switch (mode) {
        case LossMode::baseline: return "baseline";
        case LossMode::ndft: return "ndft";
        case LossMode::auxiliary: return "auxiliary";
        case LossMode::grad_reversal: return "grad-reversal";
    }
    return "?";
}

LossMode parse_loss_mode(std::string_view text) {
    if (text == "baseline") return LossMode::baseline;
    if (text == "ndft") return LossMode::ndft;
    if (text == "auxiliary" || text == "al") return LossMode::auxiliary;
    if (text == "grad-reversal") return LossMode::grad_reversal;
    throw std::invalid_argument("unknown mode '" + std::string(text) + "'");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B,C], got " + to_string(logits.shape()));
    const int classes = static_cast<int>(logits.dim(1));
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0," +
                                    std::to_string(classes) + ")");
        }
    }
    return scale(mean(pick(log_softmax(logits, 1), labels)), -1.0);
}

TaskLoss task_loss(const Tensor& class_logits, const Tensor& box_pred, std::span<const int> labels,
                   const Tensor& boxes, double box_weight) {
    if (box_pred.shape() != boxes.shape() || box_pred.rank() != 2 || box_pred.dim(1) != 4) {
        throw ShapeError("task_loss: box prediction " + to_string(box_pred.shape()) + " vs target " +
                         to_string(boxes.shape()));
    }
    if (class_logits.dim(0) != box_pred.dim(0)) {
        throw ShapeError("task_loss: logits " + to_string(class_logits.shape()) + " vs boxes " +
                         to_string(box_pred.shape()));
    }
    Tensor box = mean(smooth_l1(sub(box_pred, boxes)));
    if (box_weight != 1.0) box = scale(box, box_weight);
    return {cross_entropy(class_logits, labels), box};
}

Tensor nuisance_ce(const Tensor& logits, std::span<const int> labels) { return cross_entropy(logits, labels); }

Tensor negative_entropy(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("negative_entropy: logits must be [B,C], got " + to_string(logits.shape()));
    }
    // p * log_softmax stays finite where p underflows, giving 0 ln 0 = 0.
    Tensor p = softmax(logits, 1);
    Tensor logp = log_softmax(logits, 1);
    return scale(sum(mul(p, logp)), 1.0 / static_cast<double>(logits.dim(0)));
}

LossBreakdown compose(LossMode mode, const LossParts& parts) {
    LossBreakdown out;
    out.l_task_cls = parts.task.cls.item();
    out.l_task_box = parts.task.box.item();
    out.gammas = parts.gammas;
    for (const auto& t : parts.negative_entropy) out.l_ne.push_back(t.item());
    for (const auto& t : parts.nuisance_ce) out.l_n.push_back(t.item());

    Tensor total = add(parts.task.cls, parts.task.box);
    const std::vector<Tensor>* terms = nullptr;
    switch (mode) {
        case LossMode::baseline: break;
        case LossMode::ndft: terms = &parts.negative_entropy; break;
        case LossMode::auxiliary:
        case LossMode::grad_reversal: terms = &parts.nuisance_ce; break;
    }
    if (terms) {
        if (terms->size() != parts.gammas.size()) {
            throw ContractError("compose(" + to_string(mode) + "): " + std::to_string(terms->size()) +
                                " nuisance terms for " + std::to_string(parts.gammas.size()) + " gammas");
        }
        for (std::size_t i = 0; i < terms->size(); ++i) total = add(total, scale((*terms)[i], parts.gammas[i]));
    }
    out.total = total;
    return out;
}

}  // namespace ndft
