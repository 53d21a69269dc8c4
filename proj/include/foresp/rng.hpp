#pragma once

#include <cstdint>
#include <random>

namespace foresp {

// std::mt19937_64 has a sequence fixed by the standard; the std
// distributions do not, so variates are derived here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }
    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Box-Muller, one cached value
    double normal();
    int sign() { return (eng_() >> 63) ? 1 : -1; }
    // unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace foresp
