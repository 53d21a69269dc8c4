#pragma once

#include "foresp/capricep.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace foresp {

using Code = std::array<int, 4>;

struct CodeMatrix {
    std::array<Code, 3> rows;
};

// r1 = [+1 +1 +1 +1], r2 = [+1 -1 +1 -1], r3 = [+1 +1 -1 -1]
CodeMatrix build_code_matrix();
// Fourth Hadamard-4 row, orthogonal to all three code rows.
inline constexpr Code kSpareCode{1, -1, -1, 1};

// Kernel construction parameters for the catalog. Kernels are built at the
// modulation rate (fs / hop) so that the whole pink-shaped modulation lies
// in the band an f_o tracker can follow.
struct CatalogParams {
    double rate = 180.0; // 44100 / 245
    std::size_t L = 128;
    double t_eff = 0.2;
    int n_sections = 128;
};

struct CombinationCatalog {
    CatalogParams params;
    std::vector<std::uint64_t> seeds;             // 10 entries
    std::vector<std::array<int, 3>> combinations; // 20 ordered triples
    std::vector<UnitCapricep> units;              // generated from seeds
};

// Builds units from params + seeds and validates the triples.
CombinationCatalog make_catalog(const CatalogParams& params, std::vector<std::uint64_t> seeds,
                                std::vector<std::array<int, 3>> combinations);
// Stable default: seeds 101..110, 20 distinct triples drawn with seed 2021.
const CombinationCatalog& default_catalog();

nlohmann::json catalog_to_json(const CombinationCatalog& c);
CombinationCatalog catalog_from_json(const nlohmann::json& j);

struct MixtureSequence {
    std::vector<double> pulse_train; // at pulse_rate, length n_periods * period
    double pulse_rate = 0.0;
    std::size_t period = 0;          // T0 in pulse-rate samples
    std::vector<double> m_cents;     // at fs, length round(duration * fs)
    double fs = 44100.0;
    std::size_t T0 = 0;              // samples at fs
    int n_periods = 0;
    std::array<int, 3> combination{};
    CodeMatrix codes;                // row k weights kernel combination[k]
    double depth = 0.0;
};

// Pulse m of kernel k is centered at m * period and weighted by
// codes.rows[k][m mod 4]; the train is circular with period n_periods*T0.
MixtureSequence build_mixture(const CombinationCatalog& catalog, int combination_id, std::size_t T0, double duration,
                              double depth, std::uint64_t seed, double fs = 44100.0);

// Zero-phase -3 dB/octave shaping above 1 Hz, flat below, DC bin removed.
std::vector<double> pink_shape(std::span<const double> x, double fs);
// Inverse of pink_shape except at DC, which stays removed.
std::vector<double> pink_unshape(std::span<const double> x, double fs);

struct Recovery {
    std::vector<double> linear;
    std::vector<double> random_tv;
    int n_averages = 0;
};

// Circular matched filtering of the first n_periods*T0 samples against each
// kernel, cut into segments that start `lead` samples before each pulse
// position. kernels[k] is centered at index size()/2.
Recovery recover_responses(std::span<const double> observation, const std::array<std::span<const double>, 3>& kernels,
                           const CodeMatrix& codes, std::size_t T0, int n_periods, std::size_t lead = 0);
Recovery recover_responses(std::span<const double> observation, const CombinationCatalog& catalog, int combination_id,
                           const CodeMatrix& codes, std::size_t T0, int n_periods, std::size_t lead = 0);

// Matched, segmented output of one kernel: n_periods rows of T0 samples,
// no code weighting. Exposed for leakage measurements.
std::vector<std::vector<double>> matched_segments(std::span<const double> observation, std::span<const double> kernel,
                                                  std::size_t T0, int n_periods, std::size_t lead = 0);

} // namespace foresp
