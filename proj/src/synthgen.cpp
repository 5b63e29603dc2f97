// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/synthgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ndft/nn.hpp"

namespace ndft {

namespace {

constexpr int kPlacementRetries = 32;
constexpr int kSupersample = 4;
constexpr double kHalfWidth = 0.6;  // shape half-width relative to half-length

// Shape membership in local coordinates: u along the long axis in [-1, 1].
bool inside_shape(int label, double u, double v, double w) {
    if (std::abs(u) > 1.0 || std::abs(v) > w) return false;
    switch (label) {
        case 0: return true;                                         // bar
        case 1: return u * u + (v / w) * (v / w) <= 1.0;             // ellipse
        case 2: return std::abs(v) <= w * (1.0 - u) / 2.0;           // wedge pointing along +u
        default: return std::abs(v) <= 0.22 || std::abs(u) <= 0.3;  // cross
    }
}

const NuisanceSpec* find_effect(const DatasetConfig& c, NuisanceEffect e, int* index) {
    for (std::size_t i = 0; i < c.nuisances.size(); ++i) {
        if (c.nuisances[i].effect == e) {
            *index = static_cast<int>(i);
            return &c.nuisances[i];
        }
    }
    return nullptr;
}

double level_fraction(int level, std::size_t count) {
    return count > 1 ? static_cast<double>(level) / static_cast<double>(count - 1) : 0.0;
}

void write_f32_le(std::ostream& os, float f) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("dataset: images.f32 truncated");
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                               (std::uint32_t(b[3]) << 24);
    return std::bit_cast<float>(bits);
}

}  // namespace

std::string to_string(NuisanceEffect effect) {
    switch (effect) {
        case NuisanceEffect::scale: return "scale";
        case NuisanceEffect::rotation: return "rotation";
        case NuisanceEffect::brightness: return "brightness";
    }
    return "?";
}

NuisanceEffect parse_effect(std::string_view text) {
    if (text == "scale") return NuisanceEffect::scale;
    if (text == "rotation") return NuisanceEffect::rotation;
    if (text == "brightness") return NuisanceEffect::brightness;
    throw ConfigError("unknown nuisance effect '" + std::string(text) + "'");
}

void NuisanceSpec::validate() const {
    if (levels.size() < 2) throw ConfigError("nuisance " + name + ": needs at least 2 levels");
    if (centers.size() != levels.size()) {
        throw ConfigError("nuisance " + name + ": " + std::to_string(centers.size()) + " centers for " +
                          std::to_string(levels.size()) + " levels");
    }
    if (jitter < 0.0) throw ConfigError("nuisance " + name + ": jitter must be nonnegative");
    std::vector<double> sorted = centers;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i] - sorted[i - 1] <= 2.0 * jitter) {
            throw ConfigError("nuisance " + name + ": jitter ranges of adjacent levels overlap");
        }
    }
    if (effect == NuisanceEffect::scale) {
        for (double c : centers) {
            if (c - jitter <= 0.0 || c + jitter > 0.95) throw ConfigError("nuisance " + name + ": scale out of (0, 0.95]");
        }
    }
    if (effect == NuisanceEffect::brightness) {
        for (double c : centers) {
            if (c - jitter <= 0.0) throw ConfigError("nuisance " + name + ": contrast must stay positive");
        }
    }
}

std::vector<NuisanceSpec> default_nuisances() {
    return {
        {"altitude", {"low", "medium", "high"}, NuisanceEffect::scale, {0.60, 0.44, 0.31}, 0.04, 0.16},
        {"view", {"front", "side", "bird"}, NuisanceEffect::rotation, {0.0, 45.0, 90.0}, 10.0, 0.12},
        {"weather", {"day", "night"}, NuisanceEffect::brightness, {1.0, 0.45}, 0.05, 0.30},
    };
}

std::vector<std::size_t> DatasetConfig::level_counts() const {
    std::vector<std::size_t> out;
    for (const auto& n : nuisances) out.push_back(n.level_count());
    return out;
}

std::size_t DatasetConfig::combination_count() const {
    std::size_t n = 1;
    for (const auto& s : nuisances) n *= s.level_count();
    return n;
}

void DatasetConfig::validate() const {
    if (image_size < 16) throw ConfigError("data: image_size must be at least 16");
    if (num_classes < 2 || num_classes > 4) throw ConfigError("data: num_classes must be in [2, 4]");
    for (const auto& n : nuisances) n.validate();
    for (auto e : {NuisanceEffect::scale, NuisanceEffect::rotation, NuisanceEffect::brightness}) {
        int count = 0;
        for (const auto& n : nuisances) count += n.effect == e;
        if (count > 1) throw ConfigError("data: effect " + to_string(e) + " used by more than one nuisance");
    }
    if (noise_day < 0.0 || noise_night < 0.0 || clutter_contrast < 0.0) {
        throw ConfigError("data: noise and clutter must be nonnegative");
    }
    if (holdout >= combination_count()) {
        throw ConfigError("data: holdout " + std::to_string(holdout) + " leaves no seen combination out of " +
                          std::to_string(combination_count()));
    }
}

double box_area(const Box& b) { return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]); }

double iou(const Box& a, const Box& b) {
    const Box inter{std::max(a[0], b[0]), std::max(a[1], b[1]), std::min(a[2], b[2]), std::min(a[3], b[3])};
    const double i = box_area(inter);
    const double u = box_area(a) + box_area(b) - i;
    return u > 0.0 ? i / u : 0.0;
}

Sample render(const DatasetConfig& config, int label, std::span<const int> levels, Rng& rng) {
    if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
        throw RenderError("render: class " + std::to_string(label) + " out of range");
    }
    if (levels.size() != config.nuisances.size()) {
        throw RenderError("render: expected " + std::to_string(config.nuisances.size()) + " nuisance levels, got " +
                          std::to_string(levels.size()));
    }
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] < 0 || static_cast<std::size_t>(levels[i]) >= config.nuisances[i].level_count()) {
            throw RenderError("render: level " + std::to_string(levels[i]) + " invalid for nuisance " +
                              config.nuisances[i].name);
        }
    }

    const std::size_t S = config.image_size;
    const double Sd = static_cast<double>(S);

    // Object parameters from each factor's level plus within-level jitter.
    double length = 0.45, angle_deg = 0.0, contrast = 1.0;
    int idx = -1;
    double haze = 0.0, ramp = 0.0, ramp_angle = 0.0, base = 0.3, noise = config.noise_day;
    if (const auto* s = find_effect(config, NuisanceEffect::scale, &idx)) {
        const int lv = levels[static_cast<std::size_t>(idx)];
        length = s->centers[static_cast<std::size_t>(lv)] + rng.uniform(-s->jitter, s->jitter);
        haze = s->scene_strength * level_fraction(lv, s->level_count());
    }
    if (const auto* s = find_effect(config, NuisanceEffect::rotation, &idx)) {
        const int lv = levels[static_cast<std::size_t>(idx)];
        const double center = s->centers[static_cast<std::size_t>(lv)];
        angle_deg = center + rng.uniform(-s->jitter, s->jitter);
        ramp = s->scene_strength;
        ramp_angle = center * std::numbers::pi / 180.0;
    }
    if (const auto* s = find_effect(config, NuisanceEffect::brightness, &idx)) {
        const int lv = levels[static_cast<std::size_t>(idx)];
        contrast = s->centers[static_cast<std::size_t>(lv)] + rng.uniform(-s->jitter, s->jitter);
        base = s->scene_strength * contrast;
        noise = config.noise_day + (config.noise_night - config.noise_day) * level_fraction(lv, s->level_count());
    }

    const double theta = angle_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double a = 0.5 * length * Sd;  // half-length in pixels
    const double w = kHalfWidth;
    const double hx = std::abs(a * ct) + std::abs(a * w * st);
    const double hy = std::abs(a * st) + std::abs(a * w * ct);

    std::vector<double> coverage(S * S, 0.0);
    Box box{};
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
        const double lo_x = hx + 1.0, hi_x = Sd - 1.0 - hx;
        const double lo_y = hy + 1.0, hi_y = Sd - 1.0 - hy;
        if (hi_x < lo_x || hi_y < lo_y) break;
        const double cx = rng.uniform(lo_x, hi_x);
        const double cy = rng.uniform(lo_y, hi_y);
        std::fill(coverage.begin(), coverage.end(), 0.0);
        long x0 = long(S), y0 = long(S), x1 = -1, y1 = -1;
        const long px_lo = std::max(0L, static_cast<long>(std::floor(cx - hx)) - 1);
        const long px_hi = std::min(long(S) - 1, static_cast<long>(std::ceil(cx + hx)) + 1);
        const long py_lo = std::max(0L, static_cast<long>(std::floor(cy - hy)) - 1);
        const long py_hi = std::min(long(S) - 1, static_cast<long>(std::ceil(cy + hy)) + 1);
        for (long py = py_lo; py <= py_hi; ++py) {
            for (long px = px_lo; px <= px_hi; ++px) {
                int hits = 0;
                for (int sy = 0; sy < kSupersample; ++sy) {
                    for (int sx = 0; sx < kSupersample; ++sx) {
                        const double x = double(px) + (sx + 0.5) / kSupersample - cx;
                        const double y = double(py) + (sy + 0.5) / kSupersample - cy;
                        const double u = (x * ct + y * st) / a;
                        const double v = (-x * st + y * ct) / a;
                        hits += inside_shape(label, u, v, w);
                    }
                }
                if (hits == 0) continue;
                coverage[std::size_t(py) * S + std::size_t(px)] =
                    double(hits) / double(kSupersample * kSupersample);
                x0 = std::min(x0, px);
                y0 = std::min(y0, py);
                x1 = std::max(x1, px);
                y1 = std::max(y1, py);
            }
        }
        if (x1 < 0) continue;
        box = {double(x0) / Sd, double(y0) / Sd, double(x1 + 1) / Sd, double(y1 + 1) / Sd};
        placed = box_area(box) >= config.min_box_area;
    }
    if (!placed) {
        throw RenderError("render: could not place class " + std::to_string(label) + " at length " +
                          std::to_string(length) + " within " + std::to_string(kPlacementRetries) + " retries");
    }

    Sample s;
    s.label = label;
    s.box = box;
    s.nuisance.assign(levels.begin(), levels.end());
    s.image.assign(S * S, 0.0);

    const bool shifted = config.variant == SceneVariant::shifted;
    const double rc = std::cos(ramp_angle), rs = std::sin(ramp_angle);
    const double mid = 0.5 * (Sd - 1.0);
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const double nx = (double(x) - mid) / mid;  // [-1, 1]
            const double ny = (double(y) - mid) / mid;
            const double r2 = 0.5 * (nx * nx + ny * ny);
            s.image[y * S + x] = base + haze * r2 + ramp * 0.5 * (rc * nx + rs * ny);
        }
    }
    const std::size_t blobs = shifted ? 2 * config.clutter_blobs : config.clutter_blobs;
    for (std::size_t b = 0; b < blobs; ++b) {
        const double bx = rng.uniform(0.0, Sd), by = rng.uniform(0.0, Sd);
        const double radius = rng.uniform(1.0, 2.5);
        const double amp = config.clutter_contrast * contrast * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double dx = double(x) - bx, dy = double(y) - by;
                const double d2 = (dx * dx + dy * dy) / (radius * radius);
                if (d2 < 9.0) s.image[y * S + x] += amp * std::exp(-0.5 * d2);
            }
        }
    }
    const double object = 0.6 * contrast;
    for (std::size_t i = 0; i < S * S; ++i) {
        if (coverage[i] == 0.0) continue;
        double texture = 1.0;
        if (shifted) {
            const double x = double(i % S), y = double(i / S);
            texture = 0.6 + 0.4 * std::cos(2.0 * std::numbers::pi * (x + y) / 4.0);
        }
        s.image[i] += object * texture * coverage[i];
    }
    for (double& px : s.image) px = std::clamp(px + noise * rng.normal(), 0.0, 1.0);
    return s;
}

std::vector<int> decode_combination(const DatasetConfig& config, std::size_t index) {
    std::vector<int> levels(config.nuisances.size());
    for (std::size_t i = config.nuisances.size(); i-- > 0;) {
        const std::size_t n = config.nuisances[i].level_count();
        levels[i] = static_cast<int>(index % n);
        index /= n;
    }
    return levels;
}

std::size_t encode_combination(const DatasetConfig& config, std::span<const int> levels) {
    std::size_t index = 0;
    for (std::size_t i = 0; i < config.nuisances.size(); ++i) {
        index = index * config.nuisances[i].level_count() + static_cast<std::size_t>(levels[i]);
    }
    return index;
}

DomainSplit make_split(const DatasetConfig& config, std::size_t holdout, std::uint64_t seed) {
    const std::size_t total = config.combination_count();
    if (holdout >= total) {
        throw ConfigError("data: holdout " + std::to_string(holdout) + " leaves no seen combination out of " +
                          std::to_string(total));
    }
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng = Rng::stream(seed, "split");
    for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    // coverage[f][level] = seen combinations carrying that level
    std::vector<std::vector<std::size_t>> coverage;
    for (const auto& n : config.nuisances) coverage.emplace_back(n.level_count(), total / n.level_count());

    std::vector<bool> held(total, false);
    std::size_t taken = 0;
    for (std::size_t c : order) {
        if (taken == holdout) break;
        const auto lv = decode_combination(config, c);
        bool ok = true;
        for (std::size_t f = 0; f < lv.size(); ++f) ok = ok && coverage[f][std::size_t(lv[f])] > 1;
        if (!ok) continue;
        for (std::size_t f = 0; f < lv.size(); ++f) --coverage[f][std::size_t(lv[f])];
        held[c] = true;
        ++taken;
    }
    if (taken < holdout) {
        throw ConfigError("data: holdout " + std::to_string(holdout) + " cannot keep every level in the seen set");
    }
    DomainSplit split;
    for (std::size_t c = 0; c < total; ++c) (held[c] ? split.unseen : split.seen).push_back(c);
    return split;
}

std::string to_string(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::val_seen: return "val-seen";
        case Partition::val_unseen: return "val-unseen";
    }
    return "?";
}

Partition parse_partition(std::string_view text) {
    if (text == "train") return Partition::train;
    if (text == "val-seen") return Partition::val_seen;
    if (text == "val-unseen") return Partition::val_unseen;
    throw std::invalid_argument("unknown partition '" + std::string(text) + "'");
}

Batch stack(std::span<const Sample> samples, const DatasetConfig& config) {
    if (samples.empty()) throw ContractError("stack: empty sample set");
    const std::size_t S = config.image_size, B = samples.size();
    std::vector<double> images;
    images.reserve(B * S * S);
    std::vector<double> boxes;
    boxes.reserve(B * 4);
    Batch batch;
    batch.nuisance.assign(config.nuisances.size(), std::vector<int>(B));
    for (std::size_t b = 0; b < B; ++b) {
        const Sample& s = samples[b];
        if (s.image.size() != S * S) throw ShapeError("stack: sample image size does not match the configuration");
        images.insert(images.end(), s.image.begin(), s.image.end());
        boxes.insert(boxes.end(), s.box.begin(), s.box.end());
        batch.labels.push_back(s.label);
        for (std::size_t f = 0; f < s.nuisance.size(); ++f) batch.nuisance[f][b] = s.nuisance[f];
        batch.combination.push_back(encode_combination(config, s.nuisance));
    }
    batch.images = Tensor::from({B, 1, S, S}, std::move(images));
    batch.boxes = Tensor::from({B, 4}, std::move(boxes));
    return batch;
}

std::vector<Sample> draw_samples(const DatasetConfig& config, const DomainSplit& split, Partition partition,
                                 std::size_t count, Rng& rng) {
    const auto& combos = partition == Partition::val_unseen ? split.unseen : split.seen;
    if (combos.empty()) throw ConfigError("data: partition " + to_string(partition) + " has no combinations");
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t combo = combos[rng.below(combos.size())];
        const int label = rng.index(static_cast<int>(config.num_classes));
        const auto levels = decode_combination(config, combo);
        out.push_back(render(config, label, levels, rng));
    }
    return out;
}

Batch draw_batch(const DatasetConfig& config, const DomainSplit& split, Partition partition, std::size_t batch_size,
                 Rng& rng) {
    if (batch_size == 0) throw ContractError("draw_batch: batch_size must be at least 1");
    const auto samples = draw_samples(config, split, partition, batch_size, rng);
    return stack(samples, config);
}

BatchStream::BatchStream(DatasetConfig config, DomainSplit split, Partition partition, std::size_t batch_size, Rng rng)
    : config_(std::move(config)), split_(std::move(split)), partition_(partition), batch_size_(batch_size), rng_(rng) {
    if (batch_size_ == 0) throw ContractError("BatchStream: batch_size must be at least 1");
}

Batch BatchStream::next() { return draw_batch(config_, split_, partition_, batch_size_, rng_); }

void export_dataset(const std::filesystem::path& dir, std::span<const Sample> samples, const DatasetConfig& config) {
    std::filesystem::create_directories(dir);
    std::ofstream img(dir / "images.f32", std::ios::binary);
    std::ofstream idx(dir / "index.txt");
    if (!img || !idx) throw std::runtime_error("dataset: cannot write to " + dir.string());
    const std::size_t k = config.nuisances.size();
    idx << "ndft-dataset 1 " << samples.size() << ' ' << config.image_size << ' ' << k << '\n';
    idx << std::setprecision(17);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        for (double v : s.image) write_f32_le(img, static_cast<float>(v));
        idx << i << ' ' << s.label;
        for (double b : s.box) idx << ' ' << b;
        for (int n : s.nuisance) idx << ' ' << n;
        idx << '\n';
    }
    if (!img || !idx) throw std::runtime_error("dataset: write failed in " + dir.string());
}

std::vector<Sample> import_dataset(const std::filesystem::path& dir) {
    std::ifstream img(dir / "images.f32", std::ios::binary);
    std::ifstream idx(dir / "index.txt");
    if (!img || !idx) throw std::runtime_error("dataset: cannot open " + dir.string());
    std::string magic;
    int version = 0;
    std::size_t n = 0, size = 0, k = 0;
    idx >> magic >> version >> n >> size >> k;
    if (magic != "ndft-dataset" || version != 1) throw std::runtime_error("dataset: bad index header");
    std::vector<Sample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t id = 0;
        Sample& s = out[i];
        idx >> id >> s.label >> s.box[0] >> s.box[1] >> s.box[2] >> s.box[3];
        s.nuisance.resize(k);
        for (auto& v : s.nuisance) idx >> v;
        if (!idx || id != i) throw std::runtime_error("dataset: index record " + std::to_string(i) + " malformed");
        s.image.resize(size * size);
        for (auto& v : s.image) v = read_f32_le(img);
    }
    return out;
}

}  // namespace ndft
