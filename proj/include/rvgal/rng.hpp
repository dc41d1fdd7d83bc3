#pragma once

#include <cstdint>
#include <random>

namespace rvgal {

/// Seeded generator passed explicitly through every stochastic operation.
///
/// Wraps a 64-bit Mersenne Twister and counts the variates it hands out so
/// tests can assert how many draws an operation consumed. Copying an Rng
/// forks the stream: both copies continue with identical sequences.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() {
        ++draws_;
        return normal_(engine_);
    }

    double uniform() {
        ++draws_;
        return uniform_(engine_);
    }

    std::uint64_t next_u64() {
        ++draws_;
        return engine_();
    }

    std::mt19937_64& engine() { return engine_; }

    std::uint64_t draws() const { return draws_; }

    bool operator==(const Rng& other) const {
        return engine_ == other.engine_ && normal_ == other.normal_;
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::uint64_t draws_ = 0;
};

}  // namespace rvgal
