// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Portable random streams. The standard library's distributions are not
// specified bit-for-bit across implementations, so sampling is done here from
// raw xoshiro256** output.

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ndft {

class Rng {
public:
    using State = std::array<std::uint64_t, 4>;

    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed);
    /// Independent stream for (seed, name): the name is hashed into the seed.
    static Rng stream(std::uint64_t seed, std::string_view name);

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();   // standard normal, Box-Muller
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    int index(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    const State& state() const { return s_; }
    void set_state(const State& s) { s_ = s; }

    friend bool operator==(const Rng& a, const Rng& b) { return a.s_ == b.s_; }

private:
    State s_{};
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace ndft
