#include "foresp/sim_subject.hpp"

#include "foresp/analyzer.hpp"
#include "foresp/error.hpp"
#include "foresp/fft.hpp"
#include "foresp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace foresp {

namespace {

std::vector<Component> default_vowel()
{
    std::vector<Component> v;
    for (int k = 1; k <= 10; ++k)
        v.push_back({k, 1.0 / k});
    return v;
}

} // namespace

nlohmann::json model_to_json(const SubjectModel& m)
{
    nlohmann::json vowel = nlohmann::json::array();
    for (const auto& c : m.vowel)
        vowel.push_back({{"k", c.k}, {"amplitude", c.amplitude}});
    return {{"base_fo", m.base_fo},     {"latency", m.latency},       {"ir", m.ir},
            {"ir_origin", m.ir_origin}, {"hop", m.hop},               {"jitter_rms", m.jitter_rms},
            {"jitter_seed", m.jitter_seed}, {"vowel", vowel},         {"amplitude", m.amplitude}};
}

SubjectModel model_from_json(const nlohmann::json& j)
{
    try {
        SubjectModel m;
        if (j.contains("smoothing_tau")) {
            m = smoothed_pulse_model(j.value("base_fo", m.base_fo), j.value("latency", 0.15),
                                     j.at("smoothing_tau").get<double>(), j.value("fs", 44100.0),
                                     j.value("hop", m.hop));
        } else {
            m.base_fo = j.value("base_fo", m.base_fo);
            m.latency = j.value("latency", m.latency);
            m.ir = j.value("ir", m.ir);
            m.ir_origin = j.value("ir_origin", m.ir_origin);
            m.hop = j.value("hop", m.hop);
        }
        m.jitter_rms = j.value("jitter_rms", m.jitter_rms);
        m.jitter_seed = j.value("jitter_seed", m.jitter_seed);
        m.amplitude = j.value("amplitude", m.amplitude);
        if (j.contains("vowel"))
            for (const auto& c : j.at("vowel"))
                m.vowel.push_back({c.at("k").get<int>(), c.at("amplitude").get<double>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::model_invalid, std::string("subject model: ") + e.what());
    }
}

SubjectModel smoothed_pulse_model(double base_fo, double latency, double tau, double fs, std::size_t hop)
{
    if (!(tau > 0.0))
        throw Error(Errc::model_invalid, "tau must be positive");
    const double rate = fs / static_cast<double>(hop);
    const auto R = static_cast<std::size_t>(std::ceil(3.0 * tau * rate));
    SubjectModel m;
    m.base_fo = base_fo;
    m.latency = latency;
    m.hop = hop;
    m.ir.resize(2 * R + 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < m.ir.size(); ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(R)) / rate;
        m.ir[i] = std::exp(-std::abs(t) / tau);
        sum += m.ir[i];
    }
    for (auto& v : m.ir)
        v /= sum;
    m.ir_origin = R;
    return m;
}

void validate_model(const SubjectModel& m, double fs, double period_s)
{
    if (!(m.base_fo > 0.0))
        throw Error(Errc::model_invalid, "base_fo must be positive");
    if (!(m.latency >= 0.0) || !(m.jitter_rms >= 0.0))
        throw Error(Errc::model_invalid, "latency and jitter must be >= 0");
    if (m.ir.empty() || m.ir_origin >= m.ir.size() || m.hop == 0)
        throw Error(Errc::model_invalid, "ir must be nonempty with origin inside it");
    const double rate = fs / static_cast<double>(m.hop);
    const double support = static_cast<double>(m.ir.size() - 1 - m.ir_origin) / rate;
    if (!(support + m.latency < period_s))
        throw Error(Errc::model_invalid, "ir support + latency must be shorter than T0");
    const auto vowel = m.vowel.empty() ? default_vowel() : m.vowel;
    int kmax = 0;
    for (const auto& c : vowel)
        kmax = std::max(kmax, c.k);
    if (kmax * m.base_fo * 2.0 >= fs / 2)
        throw Error(Errc::model_invalid, "vowel spectrum too close to Nyquist");
}

std::vector<double> frame_rate_modulation(const std::vector<double>& m_cents, std::size_t hop)
{
    const std::size_t n = m_cents.size();
    const std::size_t nf = n / hop;
    auto X = rfft(m_cents);
    const std::size_t cut = n / (2 * hop);
    for (std::size_t k = cut + 1; k < X.size(); ++k)
        X[k] = 0.0;
    const auto y = irfft(X, n);
    std::vector<double> out(nf);
    for (std::size_t i = 0; i < nf; ++i)
        out[i] = y[i * hop];
    return out;
}

std::vector<double> subject_cents(const TestSignal& test, const SubjectModel& model)
{
    validate_model(model, test.spec.fs, test.spec.period);
    const double rate = test.spec.fs / static_cast<double>(model.hop);
    const auto m = frame_rate_modulation(test.m_cents, model.hop);
    const std::size_t nf = m.size();

    // delayed stimulus, silent before it arrives
    const double d = model.latency * rate;
    std::vector<double> x(nf, 0.0);
    for (std::size_t n = 0; n < nf; ++n) {
        const double src = static_cast<double>(n) - d;
        if (src < 0.0)
            continue;
        const auto i = static_cast<std::size_t>(src);
        const double fr = src - static_cast<double>(i);
        x[n] = (1.0 - fr) * m[i] + (i + 1 < nf ? fr * m[i + 1] : 0.0);
    }

    std::vector<double> c(nf, 0.0);
    const auto origin = static_cast<std::ptrdiff_t>(model.ir_origin);
    for (std::size_t n = 0; n < nf; ++n) {
        double acc = 0.0;
        for (std::size_t j = 0; j < model.ir.size(); ++j) {
            const auto src = static_cast<std::ptrdiff_t>(n) - (static_cast<std::ptrdiff_t>(j) - origin);
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(nf))
                acc += model.ir[j] * x[static_cast<std::size_t>(src)];
        }
        c[n] = acc;
    }
    if (model.jitter_rms > 0.0) {
        Rng rng(model.jitter_seed);
        for (auto& v : c)
            v += model.jitter_rms * rng.normal();
    }
    return c;
}

std::vector<double> simulate_subject(const TestSignal& test, const SubjectModel& model, double onset)
{
    if (!(onset >= 0.0))
        throw Error(Errc::model_invalid, "onset must be >= 0");
    const auto c = subject_cents(test, model);
    const std::size_t N = test.samples.size();
    const double hop = static_cast<double>(model.hop);

    std::vector<double> m(N);
    for (std::size_t n = 0; n < N; ++n) {
        const double p = static_cast<double>(n) / hop;
        const auto i = static_cast<std::size_t>(p);
        if (i + 1 >= c.size()) {
            m[n] = c.back();
            continue;
        }
        const double fr = p - static_cast<double>(i);
        m[n] = (1.0 - fr) * c[i] + fr * c[i + 1];
    }

    const auto vowel = model.vowel.empty() ? default_vowel() : model.vowel;
    const std::vector<double> theta(vowel.size(), 0.0);
    auto v = synthesize_fm(vowel, theta, model.base_fo, m, test.spec.fs);

    const auto on = static_cast<std::size_t>(std::llround(onset * test.spec.fs));
    const auto ramp = static_cast<std::size_t>(0.02 * test.spec.fs);
    for (std::size_t n = 0; n < N; ++n) {
        double g = model.amplitude;
        if (n < on)
            g = 0.0;
        else if (n < on + ramp)
            g *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - on) / static_cast<double>(ramp));
        v[n] *= g;
    }
    return v;
}

std::vector<double> expected_linear(std::span<const double> stimulation, const SubjectModel& model, double frame_rate)
{
    const auto origin = static_cast<std::ptrdiff_t>(model.ir_origin) -
                        static_cast<std::ptrdiff_t>(std::llround(model.latency * frame_rate));
    return circular_convolve(stimulation, model.ir, origin);
}

} // namespace foresp
