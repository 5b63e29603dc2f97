// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndft/losses.hpp"
#include "ndft/metrics.hpp"

namespace ndft {

namespace {

DomainSplit all_combinations(const DatasetConfig& data) {
    DomainSplit s;
    s.seen.resize(data.combination_count());
    std::iota(s.seen.begin(), s.seen.end(), std::size_t{0});
    return s;
}

// Pooled features [N, D] for a sample set, computed in chunks without a tape.
std::vector<double> pooled(const FeatureFn& features, std::span<const Sample> samples, const DatasetConfig& data,
                           std::size_t& width) {
    NoGradGuard no_grad;
    std::vector<double> out;
    constexpr std::size_t chunk = 128;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t n = std::min(chunk, samples.size() - start);
        const Batch b = stack(samples.subspan(start, n), data);
        const Tensor f = global_avg_pool(features(b.images));
        width = f.dim(1);
        out.insert(out.end(), f.data().begin(), f.data().end());
    }
    return out;
}

struct Standardizer {
    std::vector<double> mean, scale;

    Standardizer(const std::vector<double>& x, std::size_t width, bool enabled)
        : mean(width, 0.0), scale(width, 1.0) {
        if (!enabled) return;
        const std::size_t n = x.size() / width;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < width; ++d) mean[d] += x[i * width + d];
        }
        for (double& m : mean) m /= static_cast<double>(n);
        std::vector<double> var(width, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < width; ++d) {
                const double c = x[i * width + d] - mean[d];
                var[d] += c * c;
            }
        }
        for (std::size_t d = 0; d < width; ++d) {
            const double sd = std::sqrt(var[d] / static_cast<double>(n));
            scale[d] = sd > 1e-12 ? 1.0 / sd : 1.0;
        }
    }

    void apply(std::vector<double>& x) const {
        const std::size_t w = mean.size();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean[i % w]) * scale[i % w];
    }
};

Tensor rows(const std::vector<double>& x, std::size_t width, std::span<const std::size_t> idx) {
    std::vector<double> v(idx.size() * width);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                    v.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    return Tensor::from({idx.size(), width, 1, 1}, std::move(v));
}

double full_loss(const NuisanceHead& head, const Tensor& x, std::span<const int> labels) {
    NoGradGuard no_grad;
    return nuisance_ce(head.forward(x), labels).item();
}

ProbeResult fit_probe(std::size_t nuisance, std::size_t levels, const std::vector<double>& xtr,
                      const std::vector<int>& ytr, const std::vector<double>& xte, const std::vector<int>& yte,
                      std::size_t width, Rng& rng, const ProbeOptions& opts) {
    NuisanceHead head{Linear(width, opts.hidden, rng), Linear(opts.hidden, levels, rng)};
    ParamGroup g{"probe",
                 {{"hidden.weight", head.hidden.weight},
                  {"hidden.bias", head.hidden.bias},
                  {"out.weight", head.out.weight},
                  {"out.bias", head.out.bias}}};
    SgdState sgd = make_sgd_state(g, opts.learning_rate, opts.momentum);

    const std::size_t n = ytr.size();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Tensor xall = rows(xtr, width, all);

    std::vector<std::size_t> order = all;
    std::size_t cursor = n;
    std::vector<double> checks;
    constexpr std::size_t check_every = 100;
    ProbeResult res;
    res.nuisance = nuisance;
    res.chance = 1.0 / static_cast<double>(levels);
    bool converged = false;
    while (res.steps < opts.max_steps) {
        if (cursor + opts.batch_size > n) {
            for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cursor = 0;
        }
        std::span<const std::size_t> idx(order.data() + cursor, std::min(opts.batch_size, n));
        cursor += idx.size();
        std::vector<int> y(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) y[r] = ytr[idx[r]];
        backward(nuisance_ce(head.forward(rows(xtr, width, idx)), y));
        sgd_step(sgd, g);
        ++res.steps;
        if (res.steps % check_every == 0) {
            checks.push_back(full_loss(head, xall, ytr));
            // converged: three consecutive checks without a 0.1% improvement
            if (checks.size() >= 4) {
                const double ref = checks[checks.size() - 4];
                bool flat = true;
                for (std::size_t j = checks.size() - 3; j < checks.size(); ++j) {
                    flat = flat && checks[j] > ref * (1.0 - 1e-3);
                }
                if (flat) {
                    converged = true;
                    break;
                }
            }
        }
    }
    res.final_loss = full_loss(head, xall, ytr);
    std::vector<std::size_t> test_idx(yte.size());
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
    {
        NoGradGuard no_grad;
        res.accuracy = accuracy(head.forward(rows(xte, width, test_idx)), yte);
    }
    res.leakage = res.accuracy - res.chance;
    const bool still_decreasing = !converged && checks.size() >= 2 && checks.back() < checks[checks.size() - 2];
    res.non_convergent = res.accuracy < res.chance + 0.02 && still_decreasing;
    return res;
}

}  // namespace

FeatureFn trunk_features(const NdftModel& model) {
    return [&model](const Tensor& images) { return model.trunk(images); };
}

FeatureFn identity_features() {
    return [](const Tensor& images) {
        return reshape(images, {images.dim(0), images.size() / images.dim(0), 1, 1});
    };
}

FeatureFn constant_features(std::size_t width) {
    return [width](const Tensor& images) { return Tensor::zeros({images.dim(0), width, 1, 1}); };
}

std::vector<ProbeResult> probe_features(const FeatureFn& features, const DatasetConfig& data, std::uint64_t seed,
                                        const ProbeOptions& opts) {
    const DomainSplit everything = all_combinations(data);
    Rng train_rng = Rng::stream(seed, "probe/train");
    Rng test_rng = Rng::stream(seed, "probe/test");
    const auto train = draw_samples(data, everything, Partition::train, opts.train_samples, train_rng);
    const auto test = draw_samples(data, everything, Partition::train, opts.test_samples, test_rng);
    std::size_t width = 0;
    std::vector<double> xtr = pooled(features, train, data, width);
    std::vector<double> xte = pooled(features, test, data, width);
    const Standardizer z(xtr, width, opts.standardize);
    z.apply(xtr);
    z.apply(xte);

    std::vector<ProbeResult> out;
    for (std::size_t f = 0; f < data.num_nuisances(); ++f) {
        std::vector<int> ytr, yte;
        for (const auto& s : train) ytr.push_back(s.nuisance[f]);
        for (const auto& s : test) yte.push_back(s.nuisance[f]);
        Rng rng = Rng::stream(seed, "probe/head/" + std::to_string(f));
        out.push_back(fit_probe(f, data.nuisances[f].level_count(), xtr, ytr, xte, yte, width, rng, opts));
    }
    return out;
}

std::vector<ProbeResult> probe_all(const NdftModel& model, const DatasetConfig& data, std::uint64_t seed,
                                   const ProbeOptions& opts) {
    return probe_features(trunk_features(model), data, seed, opts);
}

ProbeResult probe_nuisance(const NdftModel& model, std::size_t nuisance, const DatasetConfig& data,
                           std::uint64_t seed, const ProbeOptions& opts) {
    if (nuisance >= data.num_nuisances()) throw std::out_of_range("probe_nuisance: no such nuisance");
    return probe_all(model, data, seed, opts).at(nuisance);
}

}  // namespace ndft
