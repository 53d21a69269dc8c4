#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace foresp {

inline constexpr double kPinkNoiseDbfs = -20.0;
inline constexpr double kMeterWindow = 0.5;   // seconds
inline constexpr double kMeterFloorDbfs = -90.0;
inline constexpr double kStabilityWindow = 1.0; // seconds
inline constexpr double kStabilityMaxStd = 0.5; // dB

// White Gaussian noise, pink shaped, band limited to 20 Hz - 20 kHz and
// scaled to -20 dBFS RMS. Periodic, so it loops without a seam.
std::vector<double> generate_pink_noise(double duration, double fs, std::uint64_t seed);

// dBFS of the snapshot; -infinity for all-zero input.
double running_rms(std::span<const double> snapshot);
double running_rms(std::span<const float> snapshot);
// Clamp to the display floor.
double meter_display(double dbfs);

struct CalibrationGain {
    double offset_db = 0.0;
    int reference_spl = 70;
    double measured_dbfs = 0.0;
    std::string bound_at;

    bool operator==(const CalibrationGain&) const = default;
};

nlohmann::json gain_to_json(const CalibrationGain& g);
CalibrationGain gain_from_json(const nlohmann::json& j);

// Pure offset arithmetic; reference must be 70 or 80.
CalibrationGain bind_reference(double measured_dbfs, int reference_spl, std::string bound_at = {});
double dbfs_to_spl(const CalibrationGain& g, double dbfs);

// Population standard deviation of readings in dB.
double reading_std(std::span<const double> readings);

// Calibration state machine plus meter history. Control thread only.
class Calibrator {
public:
    // readings older than kStabilityWindow are discarded as new ones arrive
    void push_reading(double dbfs, double time_s);
    void clear_readings() { readings_.clear(); }
    std::optional<double> latest() const;
    double stability_std() const;
    std::size_t reading_count() const { return readings_.size(); }

    bool calibrated() const { return gain_.has_value(); }
    const std::optional<CalibrationGain>& gain() const { return gain_; }

    // Binds against the latest reading; errors already-calibrated,
    // unstable-level (also when fewer than 1 s of readings exist).
    CalibrationGain bind(int reference_spl, std::string bound_at);
    // Binds an explicit measurement whose recent readings had std spread.
    CalibrationGain bind_measured(double measured_dbfs, double spread_db, int reference_spl, std::string bound_at);
    void restore(const CalibrationGain& g) { gain_ = g; }
    void reset() { gain_.reset(); }
    double to_spl(double dbfs) const;

private:
    struct Reading {
        double dbfs;
        double time;
    };
    std::deque<Reading> readings_;
    std::optional<CalibrationGain> gain_;
};

} // namespace foresp
