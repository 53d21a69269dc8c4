#include "foresp/error.hpp"
#include "foresp/fo_tracker.hpp"
#include "foresp/stimulus.hpp"

#include "oracle.hpp"

#include <catch_amalgamated.hpp>

using namespace foresp;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double fs = 44100.0;
const double pi = oracle::pi;

Errc code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::bad_message;
}

// Amplitude of the component at f via a single-bin DFT over a whole number
// of cycles.
double component_amplitude(const std::vector<double>& x, double f)
{
    oracle::cplx acc = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n)
        acc += x[n] * std::polar(1.0, -2.0 * pi * f * static_cast<double>(n) / fs);
    return 2.0 * std::abs(acc) / static_cast<double>(x.size());
}

std::vector<double> steady(SignalType type, PhaseAlloc alloc, double fo, std::size_t n)
{
    const auto comps = component_table(type, fo, fs);
    const std::vector<double> flat(n, 0.0);
    return synthesize_fm(comps, phase_offsets(alloc, comps), fo, flat, fs);
}

} // namespace

TEST_CASE("component tables")
{
    const auto sines = component_table(SignalType::SINES, 110.0, fs);
    REQUIRE(sines.size() == 20);
    CHECK(sines.front().k == 1);
    CHECK(sines.back().k == 20);
    const auto mfnd = component_table(SignalType::MFND, 110.0, fs);
    REQUIRE(mfnd.size() == 19);
    CHECK(mfnd.front().k == 2);
    const auto mfndh = component_table(SignalType::MFNDH, 110.0, fs);
    CHECK(mfndh.size() == 12);
    CHECK(mfndh.front().k == 9);
    CHECK(component_table(SignalType::MFNDH, 110.0, fs, 5).front().k == 5);
    CHECK(component_table(SignalType::SINE, 110.0, fs).size() == 1);
    for (const auto& c : sines)
        CHECK(c.amplitude == 1.0);
    // components at or above Nyquist are dropped
    CHECK(component_table(SignalType::SINES, 2000.0, fs).size() == 11);
    CHECK(code_of([] { component_table(SignalType::SINE, 25000.0, fs); }) == Errc::empty_table);
    CHECK(code_of([] { component_table(SignalType::SINE, 0.0, fs); }) == Errc::nonpositive_frequency);
}

TEST_CASE("phase allocations")
{
    const auto comps = component_table(SignalType::SINES, 110.0, fs);
    const auto sch = phase_offsets(PhaseAlloc::SCH, comps);
    CHECK_THAT(sch[0], WithinAbs(0.0, 1e-15));
    CHECK_THAT(sch[1], WithinAbs(-pi / 10, 1e-12));
    CHECK_THAT(sch[2], WithinAbs(-3 * pi / 10, 1e-12));
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double k = static_cast<double>(i + 1);
        CHECK_THAT(sch[i], WithinAbs(-pi * k * (k - 1) / 20.0, 1e-12));
    }
    for (double t : phase_offsets(PhaseAlloc::SIN, comps))
        CHECK(t == 0.0);
    for (double t : phase_offsets(PhaseAlloc::COS, comps))
        CHECK(t == pi / 2);
    const auto alt = phase_offsets(PhaseAlloc::ALT, comps);
    for (std::size_t i = 0; i < alt.size(); ++i)
        CHECK(alt[i] == (i % 2 == 0 ? 0.0 : pi / 2));
}

TEST_CASE("Schroeder phase has the lowest crest factor")
{
    const std::size_t n = 44100; // 110 whole cycles
    const double sch = crest_factor(steady(SignalType::SINES, PhaseAlloc::SCH, 110.0, n));
    const double alt = crest_factor(steady(SignalType::SINES, PhaseAlloc::ALT, 110.0, n));
    const double sin = crest_factor(steady(SignalType::SINES, PhaseAlloc::SIN, 110.0, n));
    const double cos = crest_factor(steady(SignalType::SINES, PhaseAlloc::COS, 110.0, n));
    CHECK(sch < alt);
    CHECK(sch < sin);
    CHECK(sch < cos);
    CHECK(alt <= std::max(sin, cos));
}

TEST_CASE("phase allocation leaves component amplitudes unchanged")
{
    const std::size_t n = 44100;
    for (auto alloc : {PhaseAlloc::SIN, PhaseAlloc::COS, PhaseAlloc::ALT, PhaseAlloc::SCH}) {
        const auto x = steady(SignalType::SINES, alloc, 110.0, n);
        for (int k = 1; k <= 20; ++k)
            REQUIRE_THAT(component_amplitude(x, 110.0 * k), WithinAbs(1.0, 1e-6));
        // nothing between the harmonics
        REQUIRE(component_amplitude(x, 165.0) < 1e-6);
    }
}

TEST_CASE("synthesis follows the phase recursion")
{
    const auto comps = component_table(SignalType::SINES, 150.0, fs);
    const auto th = phase_offsets(PhaseAlloc::SCH, comps);
    std::vector<double> m(3000);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = 80.0 * std::sin(2 * pi * 3.0 * i / fs) + 20.0;
    const auto y = synthesize_fm(comps, th, 150.0, m, fs);
    double phi = 0.0;
    for (std::size_t n = 0; n < m.size(); ++n) {
        phi += 2 * pi * 150.0 * std::exp2(m[n] / 1200.0) / fs;
        double ref = 0.0;
        for (std::size_t i = 0; i < comps.size(); ++i)
            ref += comps[i].amplitude * std::sin(comps[i].k * phi + th[i]);
        REQUIRE_THAT(y[n], WithinAbs(ref, 1e-8));
    }
}

TEST_CASE("instantaneous frequency of every component is k times the fundamental")
{
    // analytic component k from its SIN and COS versions, over short
    // segments of a modulated signal
    const TestSignal t = make_test_signal(StimulusSpec{}, default_catalog());
    const std::span<const double> m(t.m_cents.data(), 44100);
    auto analytic = [&](int k) {
        const std::vector<Component> one{{k, 1.0}};
        const auto s = synthesize_fm(one, std::vector<double>{0.0}, 110.0, m, fs);
        const auto c = synthesize_fm(one, std::vector<double>{pi / 2}, 110.0, m, fs);
        std::vector<double> ph(s.size());
        double acc = 0.0, prev = std::atan2(s[0], c[0]);
        ph[0] = prev;
        for (std::size_t i = 1; i < s.size(); ++i) {
            const double a = std::atan2(s[i], c[i]);
            double d = a - prev;
            while (d > pi)
                d -= 2 * pi;
            while (d < -pi)
                d += 2 * pi;
            acc += d;
            ph[i] = ph[0] + acc;
            prev = a;
        }
        return ph;
    };
    const auto p1 = analytic(1);
    for (int k : {2, 5, 13, 20}) {
        const auto pk = analytic(k);
        for (std::size_t s0 = 0; s0 + 2048 < p1.size(); s0 += 4410) {
            const double f1 = p1[s0 + 2048] - p1[s0];
            const double fk = pk[s0 + 2048] - pk[s0];
            REQUIRE_THAT(fk / (k * f1), WithinAbs(1.0, 1e-3));
        }
    }
}

TEST_CASE("FM at a constant offset is tracked")
{
    struct Case {
        double cents, tol;
    };
    for (const auto c : {Case{0.0, 0.5}, Case{100.0, 2.0}, Case{1200.0, 2.0}}) {
        const std::vector<double> m(44100, c.cents);
        const auto comps = component_table(SignalType::SINE, 220.0, fs);
        const auto y = synthesize_fm(comps, phase_offsets(PhaseAlloc::SIN, comps), 220.0, m, fs);
        const auto traj = track(y, fs, 1024, 220.0 * std::exp2(c.cents / 1200.0));
        for (const auto& f : traj.frames) {
            REQUIRE(f.voiced);
            REQUIRE_THAT(hz_to_cents(f.fo_hz, 220.0), WithinAbs(c.cents, c.tol));
        }
    }
    // exact frequency for the unmodulated and octave cases
    const auto comps = component_table(SignalType::SINE, 220.0, fs);
    const auto y = synthesize_fm(comps, phase_offsets(PhaseAlloc::SIN, comps), 220.0, std::vector<double>(8192, 1200.0), fs);
    const auto e = estimate_if_frame(std::span<const double>(y).subspan(100, kTrackWindow + 1), fs, 300, 600);
    CHECK_THAT(e.fo_hz, WithinAbs(440.0, 0.001));
}

TEST_CASE("sinusoidal FM is tracked as a sinusoid in cents")
{
    // The tracker sees the modulation through its analysis window. The
    // oracle averages the instantaneous frequency with the Hann weights:
    // for 100 cents at 2 Hz and a 4096-sample window its peak is 97.8
    // cents. The estimator also has a small slope-dependent bias, so
    // frames agree with the oracle to about 2.5 cents.
    const std::size_t n = 2 * 44100;
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i)
        m[i] = 100.0 * std::sin(2 * pi * 2.0 * static_cast<double>(i) / fs);
    const auto comps = component_table(SignalType::SINE, 220.0, fs);
    const auto y = synthesize_fm(comps, phase_offsets(PhaseAlloc::SIN, comps), 220.0, m, fs);
    const auto traj = track(y, fs, 64, 220.0);

    const std::size_t W = kTrackWindow;
    std::vector<double> got, want;
    for (std::size_t i = 0; i < traj.frames.size(); ++i) {
        REQUIRE(traj.frames[i].voiced);
        double num = 0, den = 0;
        for (std::size_t j = 0; j < W; ++j) {
            const double w = 0.5 - 0.5 * std::cos(2 * pi * j / W);
            num += w * 220.0 * std::exp2(m[i * 64 + j + 1] / 1200.0);
            den += w;
        }
        got.push_back(traj.frames[i].cents_re_target);
        want.push_back(hz_to_cents(num / den, 220.0));
        REQUIRE_THAT(got.back(), WithinAbs(want.back(), 2.5));
    }
    CHECK(oracle::corr(got, want) >= 0.999);
    const double peak = *std::max_element(got.begin(), got.end());
    const double trough = *std::min_element(got.begin(), got.end());
    CHECK_THAT(peak, WithinAbs(100.0, 2.0));
    CHECK_THAT(-trough, WithinAbs(peak, 0.5));
    CHECK_THAT(*std::max_element(want.begin(), want.end()), WithinAbs(97.8, 0.1));
}

TEST_CASE("normalization modes")
{
    std::vector<double> x{0.1, -0.5, 0.25, 0.3};
    const auto p = normalize(x, Normalization::PEAK, 1.0);
    CHECK_THAT(p.gain, WithinAbs(1.6, 1e-12));
    CHECK_THAT(peak_abs(p.samples), WithinAbs(0.8, 1e-12));

    const auto s = steady(SignalType::SINES, PhaseAlloc::SCH, 110.0, 44100);
    const auto r = normalize(s, Normalization::TOTAL_RMS, 1.0);
    CHECK_THAT(rms(r.samples), WithinAbs(0.050119, 1e-6));
    CHECK_THAT(20 * std::log10(rms(r.samples)), WithinAbs(-26.0, 0.01));

    const auto c = normalize(s, Normalization::COMPONENT, 1.0);
    CHECK_THAT(c.gain * 1.0, WithinAbs(0.031623, 1e-6));
    CHECK_THAT(component_amplitude(c.samples, 110.0), WithinAbs(0.031623, 1e-6));
}

TEST_CASE("normalizing twice applies unit gain")
{
    const auto s = steady(SignalType::SINES, PhaseAlloc::SCH, 110.0, 44100);
    for (auto mode : {Normalization::PEAK, Normalization::TOTAL_RMS}) {
        const auto once = normalize(s, mode, 1.0);
        const auto twice = normalize(once.samples, mode, 1.0);
        CHECK_THAT(twice.gain, WithinAbs(1.0, 1e-9));
    }
    const auto once = normalize(s, Normalization::COMPONENT, 1.0);
    CHECK_THAT(normalize(once.samples, Normalization::COMPONENT, once.gain).gain, WithinAbs(1.0, 1e-9));
}

TEST_CASE("normalization errors")
{
    CHECK(code_of([] { normalize(std::vector<double>(10, 0.0), Normalization::PEAK, 1.0); }) == Errc::zero_signal);
    // a tiny fundamental reference demands a gain that clips
    CHECK(code_of([] { normalize(std::vector<double>{0.5, -0.5}, Normalization::COMPONENT, 1e-3); }) ==
          Errc::would_clip);
    CHECK(code_of([] { normalize(std::vector<double>(1000, 0.0), Normalization::TOTAL_RMS, 1.0); }) ==
          Errc::zero_signal);
    std::vector<double> spiky(100000, 0.0);
    spiky[7] = 1.0;
    CHECK(code_of([&] { normalize(spiky, Normalization::TOTAL_RMS, 1.0); }) == Errc::would_clip);
}

TEST_CASE("test signal composition")
{
    const StimulusSpec spec; // SINES 110 Hz, PEAK, SCH, 20 s
    const auto a = make_test_signal(spec, default_catalog());
    CHECK(a.samples.size() == 882000);
    CHECK_THAT(peak_abs(a.samples), WithinAbs(0.8, 1e-6));
    CHECK(a.n_periods == 40);
    CHECK(a.m_cents.size() == a.samples.size());
    const auto b = make_test_signal(spec, default_catalog());
    CHECK(a.samples == b.samples);

    StimulusSpec other = spec;
    other.combination_id = 1;
    CHECK(make_test_signal(other, default_catalog()).samples != a.samples);
}

TEST_CASE("target signal is the unmodulated signal at the target")
{
    StimulusSpec spec;
    spec.signal_type = SignalType::SINE;
    spec.target_fo = 220.0;
    spec.duration = 2.0;
    const auto t = make_target_signal(spec);
    CHECK(t.size() == 88200);
    const auto traj = track(t, fs, 1024, 220.0);
    for (const auto& f : traj.frames)
        REQUIRE_THAT(f.fo_hz, WithinAbs(220.0, 0.001));

    spec.signal_type = SignalType::SINES;
    spec.normalization = Normalization::TOTAL_RMS;
    const auto h = make_target_signal(spec);
    // FFT peak picking: every strong peak sits on a multiple of 220 Hz
    const std::vector<double> one(h.begin(), h.begin() + 65536);
    std::vector<double> win(one.size());
    for (std::size_t i = 0; i < one.size(); ++i)
        win[i] = one[i] * (0.5 - 0.5 * std::cos(2 * pi * i / one.size()));
    const auto X = oracle::spectrum(win, std::size_t{1} << 20);
    const double df = fs / static_cast<double>(X.size());
    double top = 0;
    for (const auto& v : X)
        top = std::max(top, std::abs(v));
    int found = 0;
    for (std::size_t k = 2; k + 2 < X.size() / 2; ++k) {
        const double a = std::abs(X[k]);
        if (a > 0.1 * top && a > std::abs(X[k - 1]) && a >= std::abs(X[k + 1])) {
            // parabolic interpolation on log magnitude
            const double l = std::log(std::abs(X[k - 1])), c = std::log(a), r = std::log(std::abs(X[k + 1]));
            const double f = (static_cast<double>(k) + 0.5 * (l - r) / (l - 2 * c + r)) * df;
            const double h_idx = std::round(f / 220.0);
            CHECK_THAT(f, WithinAbs(h_idx * 220.0, 0.01));
            ++found;
        }
    }
    CHECK(found == 20);
}

TEST_CASE("spec JSON round trip and validation")
{
    StimulusSpec s;
    s.signal_type = SignalType::MFNDH;
    s.fo = 220.0;
    s.target_fo = 440.0;
    s.combination_id = 13;
    s.normalization = Normalization::COMPONENT;
    s.phase_alloc = PhaseAlloc::ALT;
    s.depth = 50.0;
    s.seed = 77;
    s.presentation = "loudspeaker";
    CHECK(spec_from_json(spec_to_json(s)) == s);

    nlohmann::json bad = spec_to_json(s);
    bad["signal_type"] = "SQUARE";
    CHECK(code_of([&] { spec_from_json(bad); }) == Errc::validation_error);

    StimulusSpec neg = s;
    neg.fo = -5.0;
    CHECK(code_of([&] { validate_spec(neg); }) == Errc::validation_error);
    StimulusSpec high;
    high.fo = 1500.0; // 20th harmonic above Nyquist
    CHECK(code_of([&] { validate_spec(high); }) == Errc::validation_error);
    CHECK(to_string(SignalType::MFND) == std::string("MFND"));
    CHECK(phase_alloc_from("SCH") == PhaseAlloc::SCH);
    CHECK(normalization_from("TOTAL_RMS") == Normalization::TOTAL_RMS);
}

TEST_CASE("modulation beyond Nyquist is rejected")
{
    const auto comps = component_table(SignalType::SINES, 1000.0, fs);
    CHECK(code_of([&] {
              synthesize_fm(comps, phase_offsets(PhaseAlloc::SIN, comps), 1000.0, std::vector<double>(10, 200.0), fs);
          }) == Errc::nyquist_violation);
}
