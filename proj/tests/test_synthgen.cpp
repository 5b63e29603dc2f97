// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "ndft/nn.hpp"
#include "ndft/synthgen.hpp"

using namespace ndft;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// Multinomial logistic regression on z-scored pixels, full-batch gradient
// descent. Independent of the library's heads and optimizers.
double linear_probe_accuracy(const std::vector<Sample>& train, const std::vector<Sample>& test, std::size_t factor,
                             int levels) {
    const Eigen::Index d = Eigen::Index(train[0].image.size());
    auto design = [&](const std::vector<Sample>& s) {
        Eigen::MatrixXd x(Eigen::Index(s.size()), d);
        for (std::size_t i = 0; i < s.size(); ++i) {
            x.row(Eigen::Index(i)) = Eigen::Map<const Eigen::RowVectorXd>(s[i].image.data(), d);
        }
        return x;
    };
    Eigen::MatrixXd xtr = design(train), xte = design(test);
    const Eigen::RowVectorXd mu = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().mean()).sqrt();
    sd = sd.array().max(1e-6);
    xtr = (xtr.rowwise() - mu).array().rowwise() / sd.array();
    xte = (xte.rowwise() - mu).array().rowwise() / sd.array();

    const Eigen::Index n = xtr.rows();
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, levels);
    for (Eigen::Index i = 0; i < n; ++i) y(i, train[std::size_t(i)].nuisance[factor]) = 1.0;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, levels);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(levels);
    const double lr = 0.05, l2 = 1e-3;
    for (int it = 0; it < 400; ++it) {
        Eigen::MatrixXd z = (xtr * w).rowwise() + b;
        z = z.colwise() - z.rowwise().maxCoeff();
        Eigen::MatrixXd p = z.array().exp();
        p = p.array().colwise() / p.rowwise().sum().array();
        const Eigen::MatrixXd g = (p - y) / double(n);
        w -= lr * (xtr.transpose() * g + l2 * w);
        b -= lr * g.colwise().sum();
    }
    const Eigen::MatrixXd z = (xte * w).rowwise() + b;
    int correct = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index arg;
        z.row(i).maxCoeff(&arg);
        correct += int(arg) == test[std::size_t(i)].nuisance[factor];
    }
    return double(correct) / double(z.rows());
}

std::vector<Sample> all_combo_samples(const DatasetConfig& c, std::size_t count, Rng& rng) {
    DomainSplit everything;
    for (std::size_t i = 0; i < c.combination_count(); ++i) everything.seen.push_back(i);
    return draw_samples(c, everything, Partition::train, count, rng);
}

}  // namespace

TEST_CASE("render is deterministic given the rng state") {
    DatasetConfig c;
    const std::vector<int> levels{1, 2, 0};
    Rng a(42), b(42);
    const Sample s1 = render(c, 2, levels, a);
    const Sample s2 = render(c, 2, levels, b);
    CHECK(s1.image == s2.image);
    CHECK(s1.box == s2.box);
    CHECK(a == b);
}

TEST_CASE("night scenes are darker than day scenes") {
    DatasetConfig c;
    for (int label = 0; label < 4; ++label) {
        for (int alt = 0; alt < 3; ++alt) {
            Rng a(7 + label), b(7 + label);
            const Sample day = render(c, label, std::vector<int>{alt, 1, 0}, a);
            const Sample night = render(c, label, std::vector<int>{alt, 1, 1}, b);
            CHECK(mean_of(night.image) < mean_of(day.image));
        }
    }
}

TEST_CASE("images stay in [0,1] and boxes are valid") {
    DatasetConfig c;
    Rng rng(3);
    for (const auto& s : all_combo_samples(c, 300, rng)) {
        CHECK(std::all_of(s.image.begin(), s.image.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
        CHECK(s.box[0] >= 0.0);
        CHECK(s.box[1] >= 0.0);
        CHECK(s.box[2] <= 1.0);
        CHECK(s.box[3] <= 1.0);
        CHECK(box_area(s.box) >= c.min_box_area);
    }
}

TEST_CASE("object pixels lie inside the box") {
    // With clutter, noise and scene cues off the background is one constant,
    // so every pixel that differs from it belongs to the object.
    DatasetConfig c;
    c.clutter_blobs = 0;
    c.noise_day = c.noise_night = 0.0;
    for (auto& n : c.nuisances) n.scene_strength = 0.0;
    Rng rng(11);
    for (const auto& s : all_combo_samples(c, 200, rng)) {
        const std::size_t S = c.image_size;
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                if (s.image[y * S + x] == 0.0) continue;
                const double px = double(x), py = double(y), Sd = double(S);
                CHECK(px >= s.box[0] * Sd - 1.0);
                CHECK(px + 1.0 <= s.box[2] * Sd + 1.0);
                CHECK(py >= s.box[1] * Sd - 1.0);
                CHECK(py + 1.0 <= s.box[3] * Sd + 1.0);
            }
        }
    }
}

TEST_CASE("render rejects bad arguments") {
    DatasetConfig c;
    Rng rng(1);
    CHECK_THROWS_AS(render(c, 4, std::vector<int>{0, 0, 0}, rng), RenderError);
    CHECK_THROWS_AS(render(c, -1, std::vector<int>{0, 0, 0}, rng), RenderError);
    CHECK_THROWS_AS(render(c, 0, std::vector<int>{0, 0}, rng), RenderError);
    CHECK_THROWS_AS(render(c, 0, std::vector<int>{0, 3, 0}, rng), RenderError);
    // An object longer than the frame cannot be placed.
    c.nuisances[0].centers = {1.6, 1.5, 1.4};
    c.nuisances[0].jitter = 0.01;
    CHECK_THROWS_AS(render(c, 0, std::vector<int>{0, 0, 0}, rng), RenderError);
}

TEST_CASE("nuisance specs are validated") {
    NuisanceSpec s = default_nuisances()[0];
    CHECK_NOTHROW(s.validate());
    NuisanceSpec one = s;
    one.levels = {"only"};
    one.centers = {0.5};
    CHECK_THROWS_AS(one.validate(), ConfigError);
    NuisanceSpec overlap = s;
    overlap.jitter = 0.1;  // adjacent centers 0.16 apart
    CHECK_THROWS_AS(overlap.validate(), ConfigError);
    CHECK_THROWS_AS(parse_effect("fog"), ConfigError);
    CHECK(parse_effect(to_string(NuisanceEffect::rotation)) == NuisanceEffect::rotation);
}

TEST_CASE("a linear probe on raw pixels recovers every nuisance") {
    DatasetConfig c;
    Rng rng = Rng::stream(5, "test/linear-probe");
    const auto train = all_combo_samples(c, 2000, rng);
    const auto test = all_combo_samples(c, 1000, rng);
    for (std::size_t f = 0; f < c.num_nuisances(); ++f) {
        const double acc = linear_probe_accuracy(train, test, f, int(c.nuisances[f].level_count()));
        INFO("factor " << c.nuisances[f].name << " accuracy " << acc);
        CHECK(acc >= 0.90);
    }
}

TEST_CASE("combination codes round-trip") {
    DatasetConfig c;
    CHECK(c.combination_count() == 18);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < c.combination_count(); ++i) {
        const auto levels = decode_combination(c, i);
        CHECK(encode_combination(c, levels) == i);
        seen.insert(levels);
    }
    CHECK(seen.size() == 18);
}

TEST_CASE("default split holds out four of eighteen combinations") {
    DatasetConfig c;
    const DomainSplit s = make_split(c, 4, 1);
    CHECK(s.seen.size() == 14);
    CHECK(s.unseen.size() == 4);
    std::vector<std::size_t> all(s.seen);
    all.insert(all.end(), s.unseen.begin(), s.unseen.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    const DomainSplit again = make_split(c, 4, 1);
    CHECK(again.seen == s.seen);
    CHECK(again.unseen == s.unseen);
}

TEST_CASE("every level stays represented among seen combinations") {
    DatasetConfig c;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const DomainSplit s = make_split(c, 4, seed);
        std::vector<std::set<int>> levels(c.num_nuisances());
        for (std::size_t combo : s.seen) {
            const auto l = decode_combination(c, combo);
            for (std::size_t f = 0; f < l.size(); ++f) levels[f].insert(l[f]);
        }
        for (std::size_t f = 0; f < c.num_nuisances(); ++f) {
            CHECK(levels[f].size() == c.nuisances[f].level_count());
        }
    }
}

TEST_CASE("infeasible holdouts are rejected") {
    DatasetConfig c;
    CHECK_THROWS_AS(make_split(c, 18, 1), ConfigError);
    // Holding out 17 of 18 leaves one seen combination, which cannot cover
    // three levels of a factor.
    CHECK_THROWS_AS(make_split(c, 17, 1), ConfigError);
    CHECK(make_split(c, 0, 1).unseen.empty());
}

TEST_CASE("partitions draw only their own combinations") {
    DatasetConfig c;
    const DomainSplit s = make_split(c, 4, 2);
    Rng rng(9);
    const Batch unseen = draw_batch(c, s, Partition::val_unseen, 64, rng);
    const std::set<std::size_t> held(s.unseen.begin(), s.unseen.end());
    for (std::size_t i = 0; i < unseen.size(); ++i) {
        CHECK(held.count(unseen.combination[i]) == 1);
        std::vector<int> levels;
        for (std::size_t f = 0; f < c.num_nuisances(); ++f) levels.push_back(unseen.nuisance[f][i]);
        CHECK(encode_combination(c, levels) == unseen.combination[i]);
    }
    const Batch train = draw_batch(c, s, Partition::train, 64, rng);
    for (std::size_t combo : train.combination) CHECK(held.count(combo) == 0);
}

TEST_CASE("label marginals are uniform within three sigma") {
    DatasetConfig c;
    const DomainSplit s = make_split(c, 4, 3);
    Rng rng(13);
    const std::size_t n = 10000;
    const auto samples = draw_samples(c, s, Partition::train, n, rng);
    std::vector<double> counts(c.num_classes, 0.0);
    for (const auto& x : samples) counts[std::size_t(x.label)] += 1.0;
    const double p = 1.0 / double(c.num_classes);
    const double sigma = std::sqrt(double(n) * p * (1.0 - p));
    for (double k : counts) CHECK(std::abs(k - double(n) * p) <= 3.0 * sigma);
}

TEST_CASE("batch streams repeat under a fixed seed") {
    DatasetConfig c;
    const DomainSplit s = make_split(c, 4, 4);
    BatchStream a(c, s, Partition::train, 8, Rng(21));
    BatchStream b(c, s, Partition::train, 8, Rng(21));
    for (int i = 0; i < 5; ++i) {
        const Batch x = a.next(), y = b.next();
        CHECK(std::equal(x.images.data().begin(), x.images.data().end(), y.images.data().begin()));
        CHECK(x.labels == y.labels);
        CHECK(x.nuisance == y.nuisance);
    }
    CHECK(a.rng() == b.rng());
}

TEST_CASE("shifted variant changes the scenes but not the labels") {
    DatasetConfig src, dst;
    dst.variant = SceneVariant::shifted;
    Rng a(5), b(5);
    const Sample x = render(src, 1, std::vector<int>{0, 0, 0}, a);
    const Sample y = render(dst, 1, std::vector<int>{0, 0, 0}, b);
    CHECK(x.box == y.box);
    CHECK(x.image != y.image);
}

TEST_CASE("dataset export and import round-trip at single precision") {
    DatasetConfig c;
    Rng rng(17);
    const auto samples = all_combo_samples(c, 20, rng);
    const auto dir = std::filesystem::temp_directory_path() / "ndft-test-export";
    std::filesystem::remove_all(dir);
    export_dataset(dir, samples, c);
    const auto back = import_dataset(dir);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(back[i].label == samples[i].label);
        CHECK(back[i].box == samples[i].box);
        CHECK(back[i].nuisance == samples[i].nuisance);
        for (std::size_t p = 0; p < samples[i].image.size(); ++p) {
            CHECK(back[i].image[p] == double(float(samples[i].image[p])));
        }
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS(import_dataset(dir));
}
