#pragma once

#include "foresp/fft.hpp"

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace foresp {

inline constexpr std::size_t kTrackWindow = 4096;
inline constexpr std::size_t kLiveHop = 1024;
inline constexpr std::size_t kOfflineHop = 245;
inline constexpr double kVoicingRmsDbfs = -50.0;
inline constexpr double kVoicingQuality = 0.5;
inline constexpr double kSearchSemitones = 7.0;

struct IfEstimate {
    double fo_hz = 0.0;          // NaN for silent frames
    double amplitude_dbfs = -1e300;
    double quality = 0.0;
    double rms_dbfs = -1e300;
    bool voiced = false;
};

// Paired one-sample-shifted Hann STFT instantaneous frequency at the peak
// bin. The negative-frequency image of the window is removed iteratively,
// which makes the estimate exact for a pure tone. Holds its FFT buffers;
// use one instance per thread.
class IfEstimator {
public:
    explicit IfEstimator(std::size_t window = kTrackWindow, double fs = 44100.0);

    std::size_t window() const { return W_; }
    double fs() const { return fs_; }
    void set_thresholds(double rms_floor_dbfs, double min_quality);

    // segment has window()+1 samples
    IfEstimate estimate(std::span<const double> segment, double search_lo, double search_hi);

private:
    std::size_t W_;
    double fs_;
    double rms_floor_;
    double min_quality_;
    std::vector<double> win_, buf_;
    std::vector<cplx> X1_, X2_;
    std::unique_ptr<RealFft> fft_;
};

// Stateless convenience; W = segment.size() - 1.
IfEstimate estimate_if_frame(std::span<const double> segment, double fs, double search_lo, double search_hi);

struct FoFrame {
    double time = 0.0;
    double fo_hz = 0.0;           // NaN when unvoiced
    double cents_re_target = 0.0; // NaN when unvoiced
    double amplitude = 0.0;       // dBFS
    bool voiced = false;
    double quality = 0.0;
};

struct FoTrajectory {
    std::vector<FoFrame> frames;
    std::size_t hop = kOfflineHop;
    std::size_t window_length = kTrackWindow;
    double target_fo = 0.0;
    double fs = 44100.0;
    // frame i is centered on sample first_center + i * hop
    std::size_t first_center = 0;
};

struct TrackOptions {
    std::size_t window = kTrackWindow;
    int harmonic = 1;              // track harmonic * target, report / harmonic
    double semitones = kSearchSemitones;
    double rms_floor_dbfs = kVoicingRmsDbfs;
    double min_quality = kVoicingQuality;
    bool grid_centered = false;    // frame centers on multiples of hop
};

FoTrajectory track(std::span<const double> samples, double fs, std::size_t hop, double target_fo,
                   const TrackOptions& opt = {});

std::string trajectory_to_csv(const FoTrajectory& t);

double hz_to_cents(double f, double f_ref);

// First-order IIR display smoothing; reset on unvoiced -> voiced.
class DisplaySmoother {
public:
    explicit DisplaySmoother(double alpha = 0.9);
    // NaN input means unvoiced and yields NaN
    double update(double fo_hz);
    void reset() { have_ = false; }

private:
    double alpha_;
    double y_ = 0.0;
    bool have_ = false;
};

std::vector<double> smooth_display(std::span<const double> fo_hz, double alpha);

// Live pitch monitor: estimates from a snapshot of the last W+1 samples and
// smooths for display.
class LivePitchMonitor {
public:
    explicit LivePitchMonitor(double fs = 44100.0, double target_fo = 220.0, double alpha = 0.9,
                              std::size_t window = kTrackWindow);
    void set_target(double target_fo);
    double target() const { return target_; }
    std::size_t window() const { return est_.window(); }
    FoFrame update(std::span<const float> snapshot, double time);

private:
    IfEstimator est_;
    DisplaySmoother smooth_;
    double target_;
    std::vector<double> seg_;
};

} // namespace foresp
