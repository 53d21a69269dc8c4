#include "foresp/calibration.hpp"

#include "foresp/error.hpp"
#include "foresp/fft.hpp"
#include "foresp/orthomix.hpp"
#include "foresp/rng.hpp"

#include <cmath>
#include <limits>

namespace foresp {

std::vector<double> generate_pink_noise(double duration, double fs, std::uint64_t seed)
{
    if (!(duration > 0.0))
        throw Error(Errc::invalid_argument, "duration must be positive");
    const auto n = static_cast<std::size_t>(std::llround(duration * fs));
    if (n < 2)
        throw Error(Errc::invalid_argument, "duration too short");
    Rng rng(seed);
    std::vector<double> x(n);
    for (auto& v : x)
        v = rng.normal();
    x = pink_shape(x, fs);

    auto X = rfft(x);
    for (std::size_t k = 0; k < X.size(); ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(n);
        if (f < 20.0 || f > 20000.0)
            X[k] = 0.0;
    }
    x = irfft(X, n);

    double ss = 0.0;
    for (double v : x)
        ss += v * v;
    const double g = std::pow(10.0, kPinkNoiseDbfs / 20.0) / std::sqrt(ss / static_cast<double>(n));
    for (auto& v : x)
        v *= g;
    return x;
}

namespace {
template <typename T> double rms_db(std::span<const T> s)
{
    if (s.empty())
        throw Error(Errc::invalid_argument, "empty meter snapshot");
    double ss = 0.0;
    for (T v : s)
        ss += static_cast<double>(v) * static_cast<double>(v);
    if (ss == 0.0)
        return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(ss / static_cast<double>(s.size()));
}
} // namespace

double running_rms(std::span<const double> s) { return rms_db(s); }
double running_rms(std::span<const float> s) { return rms_db(s); }

double meter_display(double dbfs) { return std::isnan(dbfs) || dbfs < kMeterFloorDbfs ? kMeterFloorDbfs : dbfs; }

nlohmann::json gain_to_json(const CalibrationGain& g)
{
    return {{"offset_db", g.offset_db},
            {"reference_spl", g.reference_spl},
            {"measured_dbfs", g.measured_dbfs},
            {"bound_at", g.bound_at}};
}

CalibrationGain gain_from_json(const nlohmann::json& j)
{
    CalibrationGain g;
    g.offset_db = j.at("offset_db").get<double>();
    g.reference_spl = j.at("reference_spl").get<int>();
    g.measured_dbfs = j.at("measured_dbfs").get<double>();
    g.bound_at = j.value("bound_at", std::string());
    return g;
}

CalibrationGain bind_reference(double measured_dbfs, int reference_spl, std::string bound_at)
{
    if (reference_spl != 70 && reference_spl != 80)
        throw Error(Errc::invalid_argument, "reference must be 70 or 80 dB");
    if (!std::isfinite(measured_dbfs))
        throw Error(Errc::unstable_level, "no finite level to bind");
    CalibrationGain g;
    g.reference_spl = reference_spl;
    g.measured_dbfs = measured_dbfs;
    g.offset_db = reference_spl - measured_dbfs;
    g.bound_at = std::move(bound_at);
    return g;
}

double dbfs_to_spl(const CalibrationGain& g, double dbfs) { return dbfs + g.offset_db; }

double reading_std(std::span<const double> r)
{
    if (r.empty())
        return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (double v : r)
        m += v;
    m /= static_cast<double>(r.size());
    double s = 0.0;
    for (double v : r)
        s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(r.size()));
}

void Calibrator::push_reading(double dbfs, double time_s)
{
    readings_.push_back({dbfs, time_s});
    while (!readings_.empty() && readings_.front().time < time_s - kStabilityWindow)
        readings_.pop_front();
}

std::optional<double> Calibrator::latest() const
{
    if (readings_.empty())
        return std::nullopt;
    return readings_.back().dbfs;
}

double Calibrator::stability_std() const
{
    std::vector<double> v;
    for (const auto& r : readings_) {
        if (!std::isfinite(r.dbfs))
            return std::numeric_limits<double>::infinity();
        v.push_back(r.dbfs);
    }
    return reading_std(v);
}

CalibrationGain Calibrator::bind(int reference_spl, std::string bound_at)
{
    if (gain_)
        throw Error(Errc::already_calibrated, "already calibrated; reset first");
    if (readings_.empty() || readings_.back().time - readings_.front().time < 0.9 * kStabilityWindow)
        throw Error(Errc::unstable_level, "less than one second of meter readings");
    return bind_measured(readings_.back().dbfs, stability_std(), reference_spl, std::move(bound_at));
}

CalibrationGain Calibrator::bind_measured(double measured_dbfs, double spread_db, int reference_spl,
                                          std::string bound_at)
{
    if (gain_)
        throw Error(Errc::already_calibrated, "already calibrated; reset first");
    if (!(spread_db <= kStabilityMaxStd))
        throw Error(Errc::unstable_level, "meter reading not settled");
    gain_ = bind_reference(measured_dbfs, reference_spl, std::move(bound_at));
    return *gain_;
}

double Calibrator::to_spl(double dbfs) const
{
    if (!gain_)
        throw Error(Errc::invalid_state, "not calibrated");
    return dbfs_to_spl(*gain_, dbfs);
}

} // namespace foresp
