#pragma once

#include "foresp/orthomix.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace foresp {

enum class SignalType { SINE, SINES, MFND, MFNDH };
enum class Normalization { PEAK, TOTAL_RMS, COMPONENT };
enum class PhaseAlloc { SIN, COS, ALT, SCH };

const char* to_string(SignalType t);
const char* to_string(Normalization n);
const char* to_string(PhaseAlloc p);
SignalType signal_type_from(const std::string& s);
Normalization normalization_from(const std::string& s);
PhaseAlloc phase_alloc_from(const std::string& s);

inline constexpr double kPeakTarget = 0.8;
inline constexpr double kTotalRmsDb = -26.0;
inline constexpr double kComponentDb = -30.0;

struct StimulusSpec {
    SignalType signal_type = SignalType::SINES;
    double fo = 110.0;
    double target_fo = 110.0;
    int combination_id = 0;
    Normalization normalization = Normalization::PEAK;
    PhaseAlloc phase_alloc = PhaseAlloc::SCH;
    double depth = 100.0;
    double duration = 20.0;
    double fs = 44100.0;
    std::uint64_t seed = 1;
    double period = 0.5;                  // T0 in seconds
    std::string presentation = "headphone"; // metadata only

    std::size_t T0() const;
    bool operator==(const StimulusSpec&) const = default;
};

nlohmann::json spec_to_json(const StimulusSpec& s);
// Missing keys keep defaults; unknown enum names throw validation-error.
StimulusSpec spec_from_json(const nlohmann::json& j, StimulusSpec base = {});
void validate_spec(const StimulusSpec& s);

struct Component {
    int k = 1;
    double amplitude = 1.0;
};

// MFNDH starts at mfndh_first (default 9).
std::vector<Component> component_table(SignalType type, double fo, double fs, int mfndh_first = 9);
std::vector<double> phase_offsets(PhaseAlloc alloc, const std::vector<Component>& comps);

// phi[n] = phi[n-1] + 2 pi fo 2^(m[n]/1200) / fs with phi[-1] = 0, output
// sum_k a_k sin(k phi[n] + theta_k).
std::vector<double> synthesize_fm(const std::vector<Component>& comps, std::span<const double> theta, double fo,
                                  std::span<const double> m_cents, double fs);

struct Normalized {
    std::vector<double> samples;
    double gain = 1.0;
};
Normalized normalize(std::vector<double> samples, Normalization mode, double fundamental_amplitude_ref);

double crest_factor(std::span<const double> x);
double rms(std::span<const double> x);
double peak_abs(std::span<const double> x);

struct TestSignal {
    std::vector<double> samples;
    StimulusSpec spec;
    std::vector<double> m_cents;
    double applied_gain = 1.0;
    CodeMatrix codes;
    int n_periods = 0;
};

TestSignal make_test_signal(const StimulusSpec& spec, const CombinationCatalog& catalog);
std::vector<double> make_target_signal(const StimulusSpec& spec);

} // namespace foresp
