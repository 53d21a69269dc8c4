#include "foresp/analyzer.hpp"

#include "foresp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace foresp {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

double median(std::vector<double> v)
{
    if (v.empty())
        return nan;
    const std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
    double m = v[h];
    if (v.size() % 2 == 0) {
        const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
        m = 0.5 * (m + lo);
    }
    return m;
}

// Fill NaN holes by linear interpolation; edges take the nearest value.
void fill_gaps(std::vector<double>& x)
{
    std::size_t i = 0;
    const std::size_t n = x.size();
    std::ptrdiff_t last = -1;
    while (i < n) {
        if (!std::isnan(x[i])) {
            last = static_cast<std::ptrdiff_t>(i);
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && std::isnan(x[j]))
            ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (last < 0 && j < n)
                x[k] = x[j];
            else if (j >= n && last >= 0)
                x[k] = x[static_cast<std::size_t>(last)];
            else if (last >= 0) {
                const double t = static_cast<double>(k - static_cast<std::size_t>(last)) /
                                 static_cast<double>(j - static_cast<std::size_t>(last));
                x[k] = (1.0 - t) * x[static_cast<std::size_t>(last)] + t * x[j];
            } else
                x[k] = 0.0;
        }
        i = j;
    }
}

void demean_blocks(std::vector<double>& x, std::size_t block)
{
    for (std::size_t b = 0; b < x.size(); b += block) {
        const std::size_t e = std::min(x.size(), b + block);
        double m = 0.0;
        for (std::size_t i = b; i < e; ++i)
            m += x[i];
        m /= static_cast<double>(e - b);
        for (std::size_t i = b; i < e; ++i)
            x[i] -= m;
    }
}

// value of traj on grid index g (frame centers at g * hop), NaN if absent
double on_grid(const FoTrajectory& t, std::size_t g, bool cents)
{
    const std::size_t g0 = t.first_center / t.hop;
    if (g < g0 || g - g0 >= t.frames.size())
        return nan;
    const auto& f = t.frames[g - g0];
    if (!f.voiced)
        return nan;
    return cents ? f.cents_re_target : f.fo_hz;
}

} // namespace

TimeSpan voiced_region(const FoTrajectory& traj, double bridge)
{
    const auto& fr = traj.frames;
    const double dt = static_cast<double>(traj.hop) / traj.fs;
    const auto max_gap = static_cast<std::size_t>(std::floor(bridge / dt + 1e-9));
    bool found = false;
    std::size_t best_a = 0, best_b = 0;
    std::size_t i = 0;
    while (i < fr.size()) {
        if (!fr[i].voiced) {
            ++i;
            continue;
        }
        const std::size_t a = i;
        std::size_t b = i;
        std::size_t j = i + 1;
        while (j < fr.size()) {
            if (fr[j].voiced) {
                b = j++;
                continue;
            }
            std::size_t k = j;
            while (k < fr.size() && !fr[k].voiced)
                ++k;
            if (k < fr.size() && k - j <= max_gap)
                j = k;
            else
                break;
        }
        if (!found || b - a > best_b - best_a) {
            best_a = a;
            best_b = b;
            found = true;
        }
        i = j;
    }
    if (!found)
        throw Error(Errc::no_voicing, "no voiced frames");
    return {fr[best_a].time, fr[best_b].time, best_a, best_b};
}

double normalized_correlation(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.empty())
        throw Error(Errc::invalid_argument, "correlation needs equal nonempty sequences");
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return (saa > 0 && sbb > 0) ? sab / std::sqrt(saa * sbb) : 0.0;
}

std::vector<double> circular_convolve(std::span<const double> x, std::span<const double> h, std::ptrdiff_t origin)
{
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> y(x.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h.size(); ++j) {
            const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(j) - origin;
            y[static_cast<std::size_t>(((i + d) % n + n) % n)] += x[static_cast<std::size_t>(i)] * h[j];
        }
    return y;
}

AnalysisResult analyze_recording(const RecordingPair& rec, const CombinationCatalog& catalog, const AnalyzerOptions& opt)
{
    if (rec.voice.size() != rec.loopback.size() || rec.voice.empty())
        throw Error(Errc::invalid_argument, "voice and loopback must have equal nonzero length");
    if (rec.fs != rec.spec.fs)
        throw Error(Errc::invalid_argument, "recording rate differs from spec rate");
    validate_spec(rec.spec);

    const double fs = rec.fs;
    const auto mx = build_mixture(catalog, rec.spec.combination_id, rec.spec.T0(), rec.spec.duration, rec.spec.depth,
                                  rec.spec.seed, fs);
    const std::size_t hop = mx.T0 / mx.period;
    const std::size_t P = mx.period;
    const double rate = fs / static_cast<double>(hop);

    TrackOptions to;
    to.window = opt.window;
    to.grid_centered = true;
    const auto comps = component_table(rec.spec.signal_type, rec.spec.fo, fs);
    TrackOptions lo_opt = to;
    lo_opt.harmonic = comps.front().k;
    const auto loop = track(rec.loopback, fs, hop, rec.spec.fo, lo_opt);
    const auto voice = track(rec.voice, fs, hop, rec.spec.target_fo, to);

    AnalysisResult res;
    auto& dg = res.diagnostics;
    dg.frame_rate = rate;
    dg.hop = hop;

    std::vector<double> lc;
    for (const auto& f : loop.frames)
        if (f.voiced)
            lc.push_back(f.cents_re_target);
    dg.loopback_median_cents = median(lc);
    if (lc.empty() || !(std::abs(dg.loopback_median_cents) <= opt.loopback_tolerance))
        throw Error(Errc::loopback_mismatch, "loopback f_o does not match the test signal");

    TimeSpan span;
    try {
        span = voiced_region(voice, opt.gap_bridge);
    } catch (const Error&) {
        throw Error(Errc::insufficient_voicing, "no voicing in the voice channel");
    }
    if (span.length() < opt.min_voiced)
        throw Error(Errc::insufficient_voicing, "voiced region shorter than required");

    std::vector<double> vf, amps;
    for (std::size_t i = span.first_frame; i <= span.last_frame; ++i)
        if (voice.frames[i].voiced) {
            vf.push_back(voice.frames[i].fo_hz);
            amps.push_back(voice.frames[i].amplitude);
        }
    dg.voice_median_fo = median(vf);
    dg.voice_level_db = median(amps);
    if (rec.calibration_gain) {
        dg.voice_level_db += *rec.calibration_gain;
        dg.level_is_spl = true;
    }

    // full-record frame grid for the diagnostic plots
    const std::size_t g0 = voice.first_center / hop;
    const std::size_t g_end = g0 + voice.frames.size();
    for (std::size_t g = g0; g < g_end; ++g) {
        dg.frame_time.push_back(static_cast<double>(g * hop) / fs);
        const double l = on_grid(loop, g, true);
        const double v = on_grid(voice, g, false);
        dg.loop_cents.push_back(l);
        dg.voice_cents.push_back(std::isnan(v) ? nan : hz_to_cents(v, dg.voice_median_fo));
    }

    // whole code cycles inside the voiced span
    const std::size_t cycle = 4 * P;
    const std::size_t ga = g0 + span.first_frame;
    const std::size_t gb = g0 + span.last_frame;
    const std::size_t s = (ga + cycle - 1) / cycle * cycle;
    const std::size_t e = std::min((gb + 1) / cycle * cycle, static_cast<std::size_t>(mx.n_periods) * P);
    if (e <= s || (e - s) / P < 4)
        throw Error(Errc::insufficient_voicing, "voiced region holds no complete code cycle");
    const int n_periods = static_cast<int>((e - s) / P);
    dg.first_period = static_cast<int>(s / P);
    dg.n_periods = n_periods;

    std::vector<double> xl(e - s), xv(e - s);
    for (std::size_t g = s; g < e; ++g) {
        xl[g - s] = on_grid(loop, g, true);
        const double v = on_grid(voice, g, false);
        xv[g - s] = std::isnan(v) ? nan : hz_to_cents(v, dg.voice_median_fo);
    }
    fill_gaps(xl);
    fill_gaps(xv);
    demean_blocks(xl, cycle);
    demean_blocks(xv, cycle);
    if (opt.whiten) {
        xl = pink_unshape(xl, rate);
        xv = pink_unshape(xv, rate);
    }

    const auto lead = static_cast<std::size_t>(std::llround(opt.lead_fraction * static_cast<double>(P)));
    const auto& tri = mx.combination;
    const std::array<std::span<const double>, 3> kernels{std::span<const double>(catalog.units[tri[0]].samples),
                                                         std::span<const double>(catalog.units[tri[1]].samples),
                                                         std::span<const double>(catalog.units[tri[2]].samples)};
    const auto rs = recover_responses(xl, kernels, mx.codes, P, n_periods, lead);
    const auto rv = recover_responses(xv, kernels, mx.codes, P, n_periods, lead);

    auto& out = res.response;
    out.stimulation = rs.linear;
    out.linear = rv.linear;
    out.random_tv = rv.random_tv;
    out.n_averages = rv.n_averages;
    out.voiced_span = span;

    const auto imax = static_cast<std::size_t>(
        std::max_element(out.stimulation.begin(), out.stimulation.end()) - out.stimulation.begin());
    out.lag.resize(P);
    for (std::size_t i = 0; i < P; ++i)
        out.lag[i] = (static_cast<double>(i) - static_cast<double>(imax)) / rate;

    const auto kp =
        static_cast<std::size_t>(std::max_element(out.linear.begin(), out.linear.end()) - out.linear.begin());
    double frac = 0.0;
    if (kp > 0 && kp + 1 < P) {
        const double a = out.linear[kp - 1], b = out.linear[kp], c = out.linear[kp + 1];
        const double den = a - 2.0 * b + c;
        if (den != 0.0)
            frac = 0.5 * (a - c) / den;
    }
    dg.latency_estimate = out.lag[kp] + frac / rate;
    const double smax = out.stimulation[imax];
    dg.peak_gain = smax != 0.0 ? out.linear[kp] / smax : 0.0;
    return res;
}

nlohmann::json result_to_json(const AnalysisResult& r)
{
    const auto nullable = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v)
            a.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
        return a;
    };
    const auto& o = r.response;
    const auto& d = r.diagnostics;
    return {{"lag", o.lag},
            {"stimulation", o.stimulation},
            {"linear", o.linear},
            {"random_tv", o.random_tv},
            {"voiced_span", {o.voiced_span.start, o.voiced_span.end}},
            {"n_averages", o.n_averages},
            {"diagnostics",
             {{"frame_rate", d.frame_rate},
              {"hop", d.hop},
              {"latency_estimate", d.latency_estimate},
              {"peak_gain", d.peak_gain},
              {"loopback_median_cents", d.loopback_median_cents},
              {"voice_median_fo", d.voice_median_fo},
              {"voice_level_db", d.voice_level_db},
              {"level_is_spl", d.level_is_spl},
              {"first_period", d.first_period},
              {"n_periods", d.n_periods},
              {"frame_time", d.frame_time},
              {"loop_cents", nullable(d.loop_cents)},
              {"voice_cents", nullable(d.voice_cents)}}}};
}

std::string result_to_csv(const AnalysisResult& r)
{
    std::ostringstream os;
    os.precision(10);
    os << "lag_s,stimulation_cents,linear_cents,random_tv_cents\n";
    const auto& o = r.response;
    for (std::size_t i = 0; i < o.lag.size(); ++i)
        os << o.lag[i] << ',' << o.stimulation[i] << ',' << o.linear[i] << ',' << o.random_tv[i] << '\n';
    return os.str();
}

} // namespace foresp
