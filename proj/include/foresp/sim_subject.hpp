#pragma once

#include "foresp/stimulus.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace foresp {

struct SubjectModel {
    double base_fo = 110.0;
    double latency = 0.0;        // seconds
    std::vector<double> ir{1.0}; // cents per cent, at fs / hop
    std::size_t ir_origin = 0;   // index of ir that maps to zero delay
    std::size_t hop = 245;       // frame hop of ir and jitter
    double jitter_rms = 0.0;     // cents, white at frame rate
    std::uint64_t jitter_seed = 0;
    std::vector<Component> vowel; // empty: harmonics 1..10 with 1/k
    double amplitude = 0.1;      // scale of the harmonic sum
};

nlohmann::json model_to_json(const SubjectModel& m);
SubjectModel model_from_json(const nlohmann::json& j);

// Unit DC gain, zero-phase exp(-|t|/tau) truncated at 3 tau, centered at
// the latency.
SubjectModel smoothed_pulse_model(double base_fo, double latency, double tau, double fs = 44100.0,
                                  std::size_t hop = 245);

void validate_model(const SubjectModel& m, double fs, double period_s);

// Stimulus m_cents sampled at the frame rate after band limiting.
std::vector<double> frame_rate_modulation(const std::vector<double>& m_cents, std::size_t hop);

// Voice f_o in cents re base_fo at frame n (time n * hop / fs).
std::vector<double> subject_cents(const TestSignal& test, const SubjectModel& model);

std::vector<double> simulate_subject(const TestSignal& test, const SubjectModel& model, double onset);

// Linear trace the analyzer should recover from this subject: the
// stimulation trace through the IR, delayed by the latency (rounded to
// whole frames). Circular over the trace length.
std::vector<double> expected_linear(std::span<const double> stimulation, const SubjectModel& model,
                                    double frame_rate);

} // namespace foresp
