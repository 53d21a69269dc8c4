#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace foresp {

// One second-order all-pass phase contribution. theta is the pole angle in
// radians (0, pi), radius the pole radius, polarity +1/-1. radius 0 gives a
// section with zero phase.
struct PhaseSection {
    double theta = 0.0;
    double radius = 0.0;
    int polarity = 1;
};

struct UnitCapricep {
    std::vector<double> samples;
    std::uint64_t seed = 0;
    double fs = 44100.0;
    std::size_t L = 0;
    double t_eff = 0.0;
    int n_sections = 0;

    std::size_t center() const { return L / 2; }
};

struct CapricepBuild {
    std::vector<double> raw;     // circularly centered, before the edge taper
    std::vector<double> samples; // tapered kernel
    double phase_scale = 1.0;    // factor applied to the summed section phase
};

inline constexpr std::size_t kCapricepLength = 65536;
inline constexpr int kCapricepSections = 128;
inline constexpr double kCapricepTeff = 0.2;

// Random sections: theta ~ U(0, pi), radius ~ U[0.9, 0.98], random polarity.
std::vector<PhaseSection> draw_sections(std::uint64_t seed, int n_sections);

// Deterministic construction from explicit sections.
CapricepBuild build_capricep(std::span<const PhaseSection> sections, double fs, std::size_t L, double t_eff);

UnitCapricep generate_unit_capricep(std::uint64_t seed, double fs = 44100.0, std::size_t L = kCapricepLength,
                                    double t_eff = kCapricepTeff, int n_sections = kCapricepSections);

// Time-reversed kernel. Reversal is about the center sample, so the
// compressed pulse of u (*) matched_kernel(u) peaks at index 2*center when
// both are taken as causal sequences.
std::vector<double> matched_kernel(const UnitCapricep& u);

// Full linear convolution, direct or FFT-based depending on size.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

} // namespace foresp
