#pragma once

#include "foresp/fo_tracker.hpp"
#include "foresp/orthomix.hpp"
#include "foresp/stimulus.hpp"

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace foresp {

struct RecordingPair {
    std::vector<double> voice;    // L channel
    std::vector<double> loopback; // R channel
    double fs = 44100.0;
    StimulusSpec spec;
    std::optional<double> calibration_gain; // dB SPL = dBFS + gain
};

struct TimeSpan {
    double start = 0.0;
    double end = 0.0;
    std::size_t first_frame = 0;
    std::size_t last_frame = 0;
    double length() const { return end - start; }
};

// Longest run of voiced frames, unvoiced gaps up to `bridge` seconds merged.
TimeSpan voiced_region(const FoTrajectory& traj, double bridge = 0.1);

struct AnalyzerOptions {
    std::size_t window = kTrackWindow;
    double lead_fraction = 0.2;   // segment context before each pulse, in periods
    double min_voiced = 10.0;     // seconds
    double gap_bridge = 0.1;      // seconds
    double loopback_tolerance = 50.0; // cents
    bool whiten = false;          // undo the pink shaping before recovery
};

struct ResponseDecomposition {
    std::vector<double> lag; // seconds, 0 at the stimulation maximum
    std::vector<double> stimulation;
    std::vector<double> linear;
    std::vector<double> random_tv;
    TimeSpan voiced_span;
    int n_averages = 0;
};

struct AnalysisDiagnostics {
    double frame_rate = 0.0;
    std::size_t hop = 0;
    double latency_estimate = 0.0; // lag of the linear-trace peak
    double peak_gain = 0.0;        // max linear / max stimulation
    double loopback_median_cents = 0.0;
    double voice_median_fo = 0.0;
    double voice_level_db = 0.0;   // median frame amplitude, dB SPL when calibrated else dBFS
    bool level_is_spl = false;
    int first_period = 0;          // analysis window, in periods from the start
    int n_periods = 0;
    std::vector<double> frame_time;  // full-record frame grid
    std::vector<double> loop_cents;  // NaN when unvoiced
    std::vector<double> voice_cents; // NaN when unvoiced
};

struct AnalysisResult {
    ResponseDecomposition response;
    AnalysisDiagnostics diagnostics;
};

AnalysisResult analyze_recording(const RecordingPair& rec, const CombinationCatalog& catalog,
                                 const AnalyzerOptions& opt = {});

nlohmann::json result_to_json(const AnalysisResult& r);
std::string result_to_csv(const AnalysisResult& r);

// Normalized correlation after mean removal.
double normalized_correlation(std::span<const double> a, std::span<const double> b);
// y = x circularly convolved with h, h[origin] at zero delay.
std::vector<double> circular_convolve(std::span<const double> x, std::span<const double> h, std::ptrdiff_t origin);

} // namespace foresp
