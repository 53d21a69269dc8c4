#include "foresp/stimulus.hpp"

#include "foresp/error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace foresp {

namespace {
constexpr double pi = std::numbers::pi;
}

const char* to_string(SignalType t)
{
    switch (t) {
    case SignalType::SINE: return "SINE";
    case SignalType::SINES: return "SINES";
    case SignalType::MFND: return "MFND";
    case SignalType::MFNDH: return "MFNDH";
    }
    return "?";
}

const char* to_string(Normalization n)
{
    switch (n) {
    case Normalization::PEAK: return "PEAK";
    case Normalization::TOTAL_RMS: return "TOTAL_RMS";
    case Normalization::COMPONENT: return "COMPONENT";
    }
    return "?";
}

const char* to_string(PhaseAlloc p)
{
    switch (p) {
    case PhaseAlloc::SIN: return "SIN";
    case PhaseAlloc::COS: return "COS";
    case PhaseAlloc::ALT: return "ALT";
    case PhaseAlloc::SCH: return "SCH";
    }
    return "?";
}

SignalType signal_type_from(const std::string& s)
{
    for (auto t : {SignalType::SINE, SignalType::SINES, SignalType::MFND, SignalType::MFNDH})
        if (s == to_string(t))
            return t;
    throw Error(Errc::validation_error, "unknown signal type: " + s);
}

Normalization normalization_from(const std::string& s)
{
    for (auto t : {Normalization::PEAK, Normalization::TOTAL_RMS, Normalization::COMPONENT})
        if (s == to_string(t))
            return t;
    throw Error(Errc::validation_error, "unknown normalization: " + s);
}

PhaseAlloc phase_alloc_from(const std::string& s)
{
    for (auto t : {PhaseAlloc::SIN, PhaseAlloc::COS, PhaseAlloc::ALT, PhaseAlloc::SCH})
        if (s == to_string(t))
            return t;
    throw Error(Errc::validation_error, "unknown phase allocation: " + s);
}

std::size_t StimulusSpec::T0() const { return static_cast<std::size_t>(std::llround(period * fs)); }

nlohmann::json spec_to_json(const StimulusSpec& s)
{
    return {{"signal_type", to_string(s.signal_type)},
            {"fo", s.fo},
            {"target_fo", s.target_fo},
            {"combination_id", s.combination_id},
            {"normalization", to_string(s.normalization)},
            {"phase_alloc", to_string(s.phase_alloc)},
            {"depth", s.depth},
            {"duration", s.duration},
            {"fs", s.fs},
            {"seed", s.seed},
            {"period", s.period},
            {"presentation", s.presentation}};
}

StimulusSpec spec_from_json(const nlohmann::json& j, StimulusSpec s)
{
    if (!j.is_object())
        throw Error(Errc::validation_error, "spec must be a JSON object");
    try {
        if (j.contains("signal_type"))
            s.signal_type = signal_type_from(j.at("signal_type").get<std::string>());
        if (j.contains("fo"))
            s.fo = j.at("fo").get<double>();
        if (j.contains("target_fo"))
            s.target_fo = j.at("target_fo").get<double>();
        if (j.contains("combination_id"))
            s.combination_id = j.at("combination_id").get<int>();
        if (j.contains("normalization"))
            s.normalization = normalization_from(j.at("normalization").get<std::string>());
        if (j.contains("phase_alloc"))
            s.phase_alloc = phase_alloc_from(j.at("phase_alloc").get<std::string>());
        if (j.contains("depth"))
            s.depth = j.at("depth").get<double>();
        if (j.contains("duration"))
            s.duration = j.at("duration").get<double>();
        if (j.contains("fs"))
            s.fs = j.at("fs").get<double>();
        if (j.contains("seed"))
            s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("period"))
            s.period = j.at("period").get<double>();
        if (j.contains("presentation"))
            s.presentation = j.at("presentation").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::validation_error, std::string("spec field: ") + e.what());
    }
    return s;
}

void validate_spec(const StimulusSpec& s)
{
    if (!(s.fo > 0.0) || !(s.target_fo > 0.0))
        throw Error(Errc::validation_error, "fo and target_fo must be positive");
    if (!(s.duration > 0.0))
        throw Error(Errc::validation_error, "duration must be positive");
    if (!(s.depth >= 0.0))
        throw Error(Errc::validation_error, "depth must be >= 0");
    if (s.combination_id < 0 || s.combination_id > 19)
        throw Error(Errc::validation_error, "combination_id must be 0..19");
    if (!(s.fs > 0.0) || !(s.period > 0.0))
        throw Error(Errc::validation_error, "fs and period must be positive");
    if (s.presentation != "headphone" && s.presentation != "loudspeaker")
        throw Error(Errc::validation_error, "presentation must be headphone or loudspeaker");
    // the nominal table, before component_table drops anything
    const int k_max = s.signal_type == SignalType::SINE ? 1 : 20;
    for (double f : {s.fo, s.target_fo})
        if (k_max * f >= s.fs / 2)
            throw Error(Errc::validation_error, "highest component above Nyquist");
}

std::vector<Component> component_table(SignalType type, double fo, double fs, int mfndh_first)
{
    if (!(fo > 0.0))
        throw Error(Errc::nonpositive_frequency, "fo must be positive");
    int lo = 1, hi = 20;
    switch (type) {
    case SignalType::SINE: hi = 1; break;
    case SignalType::SINES: break;
    case SignalType::MFND: lo = 2; break;
    case SignalType::MFNDH: lo = mfndh_first; break;
    }
    std::vector<Component> t;
    for (int k = lo; k <= hi; ++k)
        if (k * fo < fs / 2)
            t.push_back({k, 1.0});
    if (t.empty())
        throw Error(Errc::empty_table, "no component below Nyquist");
    return t;
}

std::vector<double> phase_offsets(PhaseAlloc alloc, const std::vector<Component>& comps)
{
    const std::size_t K = comps.size();
    std::vector<double> th(K, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        const double rank = static_cast<double>(i + 1);
        switch (alloc) {
        case PhaseAlloc::SIN: th[i] = 0.0; break;
        case PhaseAlloc::COS: th[i] = pi / 2; break;
        case PhaseAlloc::ALT: th[i] = (i % 2 == 0) ? 0.0 : pi / 2; break;
        // rank within the table, so sets without a fundamental still get
        // the full Schroeder sweep
        case PhaseAlloc::SCH: th[i] = -pi * rank * (rank - 1) / static_cast<double>(K); break;
        }
    }
    return th;
}

std::vector<double> synthesize_fm(const std::vector<Component>& comps, std::span<const double> theta, double fo,
                                  std::span<const double> m_cents, double fs)
{
    if (comps.empty() || theta.size() != comps.size())
        throw Error(Errc::invalid_argument, "component/phase table mismatch");
    int kmax = 0;
    for (const auto& c : comps)
        kmax = std::max(kmax, c.k);
    double mmax = 0.0;
    for (double m : m_cents)
        mmax = std::max(mmax, m);
    if (kmax * fo * std::exp2(mmax / 1200.0) >= fs / 2)
        throw Error(Errc::nyquist_violation, "instantaneous frequency reaches Nyquist");

    std::vector<double> cth(comps.size()), sth(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        cth[i] = std::cos(theta[i]);
        sth[i] = std::sin(theta[i]);
    }
    std::vector<std::complex<double>> zk(static_cast<std::size_t>(kmax) + 1);
    std::vector<double> y(m_cents.size());
    const double w0 = 2.0 * pi * fo / fs;
    double phi = 0.0;
    for (std::size_t n = 0; n < m_cents.size(); ++n) {
        phi += w0 * std::exp2(m_cents[n] / 1200.0);
        if (phi >= 2.0 * pi)
            phi -= 2.0 * pi;
        // z^k by repeated product keeps all components locked to k * phi
        const std::complex<double> z(std::cos(phi), std::sin(phi));
        zk[1] = z;
        for (int k = 2; k <= kmax; ++k)
            zk[k] = zk[k - 1] * z;
        double acc = 0.0;
        for (std::size_t i = 0; i < comps.size(); ++i) {
            const auto& e = zk[static_cast<std::size_t>(comps[i].k)];
            acc += comps[i].amplitude * (e.imag() * cth[i] + e.real() * sth[i]);
        }
        y[n] = acc;
    }
    return y;
}

double peak_abs(std::span<const double> x)
{
    double p = 0.0;
    for (double v : x)
        p = std::max(p, std::abs(v));
    return p;
}

double rms(std::span<const double> x)
{
    if (x.empty())
        return 0.0;
    double s = 0.0;
    for (double v : x)
        s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

double crest_factor(std::span<const double> x)
{
    const double r = rms(x);
    return r > 0.0 ? peak_abs(x) / r : 0.0;
}

Normalized normalize(std::vector<double> samples, Normalization mode, double fundamental_amplitude_ref)
{
    const double pk = peak_abs(samples);
    if (samples.empty() || pk == 0.0)
        throw Error(Errc::zero_signal, "cannot normalize a zero signal");
    double g = 1.0;
    switch (mode) {
    case Normalization::PEAK: g = kPeakTarget / pk; break;
    case Normalization::TOTAL_RMS: g = std::pow(10.0, kTotalRmsDb / 20.0) / rms(samples); break;
    case Normalization::COMPONENT:
        if (!(fundamental_amplitude_ref > 0.0))
            throw Error(Errc::invalid_argument, "component reference must be positive");
        g = std::pow(10.0, kComponentDb / 20.0) / fundamental_amplitude_ref;
        break;
    }
    if (pk * g > 1.0)
        throw Error(Errc::would_clip, "normalized signal would exceed full scale");
    for (auto& v : samples)
        v *= g;
    return {std::move(samples), g};
}

TestSignal make_test_signal(const StimulusSpec& spec, const CombinationCatalog& catalog)
{
    validate_spec(spec);
    const auto mx = build_mixture(catalog, spec.combination_id, spec.T0(), spec.duration, spec.depth, spec.seed, spec.fs);
    const auto comps = component_table(spec.signal_type, spec.fo, spec.fs);
    const auto theta = phase_offsets(spec.phase_alloc, comps);
    auto y = synthesize_fm(comps, theta, spec.fo, mx.m_cents, spec.fs);
    auto nz = normalize(std::move(y), spec.normalization, comps.front().amplitude);
    TestSignal t;
    t.samples = std::move(nz.samples);
    t.applied_gain = nz.gain;
    t.spec = spec;
    t.m_cents = mx.m_cents;
    t.codes = mx.codes;
    t.n_periods = mx.n_periods;
    return t;
}

std::vector<double> make_target_signal(const StimulusSpec& spec)
{
    validate_spec(spec);
    const auto comps = component_table(spec.signal_type, spec.target_fo, spec.fs);
    const auto theta = phase_offsets(spec.phase_alloc, comps);
    const std::vector<double> flat(static_cast<std::size_t>(std::llround(spec.duration * spec.fs)), 0.0);
    auto y = synthesize_fm(comps, theta, spec.target_fo, flat, spec.fs);
    return normalize(std::move(y), spec.normalization, comps.front().amplitude).samples;
}

} // namespace foresp
