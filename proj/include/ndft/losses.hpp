// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task loss (softmax cross-entropy + smooth-l1 box regression), nuisance
// cross-entropy, and the negative-entropy adversarial loss, plus the
// per-mode composition of the f_T/f_O objective.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndft/tensor.hpp"

namespace ndft {

enum class LossMode { baseline, ndft, auxiliary, grad_reversal };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct TaskLoss {
    Tensor cls;
    Tensor box;
};

/// Mean softmax cross-entropy over the batch. Labels must lie in [0, C).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// boxes is [B, 4] in normalized coordinates; l_box averages all 4B residuals
/// and is multiplied by `box_weight`.
TaskLoss task_loss(const Tensor& class_logits, const Tensor& box_pred, std::span<const int> labels,
                   const Tensor& boxes, double box_weight = 1.0);

Tensor nuisance_ce(const Tensor& logits, std::span<const int> labels);

/// Batch mean of sum_c p_c ln p_c with p = softmax(logits); 0 ln 0 = 0.
Tensor negative_entropy(const Tensor& logits);

struct LossBreakdown {
    Tensor total;
    double l_task_cls = 0.0;
    double l_task_box = 0.0;
    std::vector<double> l_ne;  // empty when not supplied
    std::vector<double> l_n;   // empty when not supplied
    std::vector<double> gammas;
};

/// Parts for the f_T/f_O objective. `negative_entropy` feeds ndft mode and
/// `nuisance_ce` feeds auxiliary and grad-reversal modes; in grad-reversal
/// mode the caller computes the cross-entropy on logits whose features passed
/// through grad_reverse. Parts a mode does not use are recorded but ignored,
/// so ndft mode never consumes nuisance labels.
struct LossParts {
    TaskLoss task;
    std::vector<Tensor> negative_entropy;
    std::vector<Tensor> nuisance_ce;
    std::vector<double> gammas;
};

/// ndft:          L_O + sum_i gamma_i L_ne^i
/// auxiliary:     L_O + sum_i gamma_i L_N^i
/// grad_reversal: L_O + sum_i gamma_i L_N^i (reversed features)
/// baseline:      L_O
LossBreakdown compose(LossMode mode, const LossParts& parts);

}  // namespace ndft
