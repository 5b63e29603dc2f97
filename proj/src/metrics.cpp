// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/metrics.hpp"

#include <algorithm>
#include <map>

#include "ndft/losses.hpp"

namespace ndft {

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            if (logits.at(r * cols + c) > logits.at(r * cols + best)) best = c;
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
    const auto pred = argmax_rows(logits);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
    return pred.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(pred.size());
}

std::vector<Sample> evaluation_samples(const DatasetConfig& data, const DomainSplit& split, Partition partition,
                                       std::size_t count, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "eval/" + to_string(partition));
    return draw_samples(data, split, partition, count, rng);
}

MetricsRecord evaluate_samples(const NdftModel& model, const DatasetConfig& data, std::span<const Sample> samples,
                               double iou_threshold, std::size_t chunk) {
    NoGradGuard no_grad;
    const std::size_t k = model.num_nuisances();
    const std::size_t n = samples.size();
    MetricsRecord rec;
    rec.samples = n;
    if (n == 0) return rec;

    std::vector<char> correct(n, 0);
    std::vector<char> class_ok(n, 0);
    double iou_sum = 0.0, cls_sum = 0.0, box_sum = 0.0;
    std::vector<double> ne_sum(k, 0.0), ce_sum(k, 0.0), nacc(k, 0.0);

    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t end = std::min(n, start + chunk);
        const Batch b = stack(samples.subspan(start, end - start), data);
        const auto out = model.forward(b.images);
        const auto pred = argmax_rows(out.class_logits);
        const auto t = task_loss(out.class_logits, out.box, b.labels, b.boxes);
        const double w = static_cast<double>(end - start);
        cls_sum += t.cls.item() * w;
        box_sum += t.box.item() * w;
        for (std::size_t i = 0; i < end - start; ++i) {
            const Box pb{out.box.at(i * 4), out.box.at(i * 4 + 1), out.box.at(i * 4 + 2), out.box.at(i * 4 + 3)};
            const double overlap = iou(pb, samples[start + i].box);
            iou_sum += overlap;
            class_ok[start + i] = pred[i] == b.labels[i];
            correct[start + i] = class_ok[start + i] && overlap >= iou_threshold;
        }
        for (std::size_t f = 0; f < k && f < b.nuisance.size(); ++f) {
            ne_sum[f] += negative_entropy(out.nuisance_logits[f]).item() * w;
            ce_sum[f] += nuisance_ce(out.nuisance_logits[f], b.nuisance[f]).item() * w;
            nacc[f] += accuracy(out.nuisance_logits[f], b.nuisance[f]) * w;
        }
    }

    const double nd = static_cast<double>(n);
    std::size_t hits = 0, cls_hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        hits += correct[i];
        cls_hits += class_ok[i];
    }
    rec.overall = static_cast<double>(hits) / nd;
    rec.class_accuracy = static_cast<double>(cls_hits) / nd;
    rec.mean_iou = iou_sum / nd;
    rec.l_task_cls = cls_sum / nd;
    rec.l_task_box = box_sum / nd;
    for (std::size_t f = 0; f < k; ++f) {
        rec.l_ne.push_back(ne_sum[f] / nd);
        rec.l_n.push_back(ce_sum[f] / nd);
        rec.nuisance_accuracy.push_back(nacc[f] / nd);
    }

    std::map<std::size_t, std::pair<std::size_t, std::size_t>> by_domain;  // combo -> (hits, count)
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> by_level;
    for (const auto& spec : data.nuisances) by_level.emplace_back(spec.level_count(), std::pair<std::size_t, std::size_t>{});
    for (std::size_t i = 0; i < n; ++i) {
        auto& d = by_domain[encode_combination(data, samples[i].nuisance)];
        d.first += correct[i];
        d.second += 1;
        for (std::size_t f = 0; f < by_level.size(); ++f) {
            auto& l = by_level[f][static_cast<std::size_t>(samples[i].nuisance[f])];
            l.first += correct[i];
            l.second += 1;
        }
    }
    for (const auto& [combo, hc] : by_domain) {
        DomainMetric dm;
        dm.combination = combo;
        const auto lv = decode_combination(data, combo);
        for (std::size_t f = 0; f < lv.size(); ++f) {
            if (f) dm.levels += '/';
            dm.levels += data.nuisances[f].levels[static_cast<std::size_t>(lv[f])];
        }
        dm.count = hc.second;
        dm.metric = static_cast<double>(hc.first) / static_cast<double>(hc.second);
        rec.per_domain.push_back(std::move(dm));
    }
    for (const auto& levels : by_level) {
        std::vector<double> row;
        for (const auto& [h, c] : levels) row.push_back(c ? static_cast<double>(h) / static_cast<double>(c) : 0.0);
        rec.per_level.push_back(std::move(row));
    }
    return rec;
}

MetricsRecord evaluate(const NdftModel& model, const DatasetConfig& data, const DomainSplit& split,
                       Partition partition, std::uint64_t seed, const EvalOptions& opts) {
    const auto samples = evaluation_samples(data, split, partition, opts.samples, seed);
    MetricsRecord rec = evaluate_samples(model, data, samples, opts.iou_threshold, opts.chunk);
    rec.partition = to_string(partition);
    return rec;
}

}  // namespace ndft
