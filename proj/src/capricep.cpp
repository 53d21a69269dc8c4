#include "foresp/capricep.hpp"

#include "foresp/error.hpp"
#include "foresp/fft.hpp"
#include "foresp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace foresp {

namespace {

constexpr double pi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

} // namespace

std::vector<PhaseSection> draw_sections(std::uint64_t seed, int n_sections)
{
    Rng rng(seed);
    std::vector<PhaseSection> s(static_cast<std::size_t>(std::max(n_sections, 0)));
    for (auto& sec : s) {
        double th = rng.uniform(0.0, pi);
        while (th == 0.0)
            th = rng.uniform(0.0, pi);
        sec.theta = th;
        sec.radius = rng.uniform(0.9, 0.98);
        sec.polarity = rng.sign();
    }
    return s;
}

CapricepBuild build_capricep(std::span<const PhaseSection> sections, double fs, std::size_t L, double t_eff)
{
    if (!is_pow2(L))
        throw Error(Errc::invalid_length, "capricep length must be a power of two");
    if (!(t_eff > 0.0) || !(t_eff < L / (2.0 * fs)))
        throw Error(Errc::duration_too_long, "t_eff must satisfy 0 < t_eff < L/(2 fs)");
    if (sections.empty())
        throw Error(Errc::invalid_argument, "at least one phase section is required");

    const std::size_t nb = L / 2 + 1;
    std::vector<double> phi(nb, 0.0), tau(nb, 0.0);
    // Phase of a conjugate pole pair all-pass with the pure -2w delay term
    // dropped; the remainder vanishes at w = 0 and w = pi, so the spectrum
    // stays Hermitian and real at both ends.
    for (const auto& s : sections) {
        const double r = s.radius;
        if (r == 0.0)
            continue;
        for (std::size_t k = 0; k < nb; ++k) {
            const double w = 2.0 * pi * static_cast<double>(k) / static_cast<double>(L);
            for (double p : {s.theta, -s.theta}) {
                const double d = w - p;
                const double c = std::cos(d), sn = std::sin(d);
                phi[k] += s.polarity * -2.0 * std::atan2(r * sn, 1.0 - r * c);
                tau[k] += s.polarity * 2.0 * (r * c - r * r) / (1.0 - 2.0 * r * c + r * r);
            }
        }
    }

    double max_tau = 0.0;
    for (double t : tau)
        max_tau = std::max(max_tau, std::abs(t));
    CapricepBuild out;
    out.phase_scale = max_tau > 0.0 ? (0.5 * t_eff * fs) / max_tau : 1.0;

    std::vector<cplx> X(nb);
    for (std::size_t k = 0; k < nb; ++k)
        X[k] = std::polar(1.0, out.phase_scale * phi[k]);
    X[0] = cplx(std::cos(out.phase_scale * phi[0]), 0.0);
    X[nb - 1] = cplx(std::cos(out.phase_scale * phi[nb - 1]), 0.0);

    const std::vector<double> u = irfft(X, L);
    out.raw.resize(L);
    for (std::size_t n = 0; n < L; ++n)
        out.raw[(n + L / 2) % L] = u[n];

    out.samples = out.raw;
    const std::size_t edge = static_cast<std::size_t>(0.05 * static_cast<double>(L));
    for (std::size_t n = 0; n < edge; ++n) {
        const double g = 0.5 - 0.5 * std::cos(pi * static_cast<double>(n) / static_cast<double>(edge));
        out.samples[n] *= g;
        out.samples[L - 1 - n] *= g;
    }
    return out;
}

UnitCapricep generate_unit_capricep(std::uint64_t seed, double fs, std::size_t L, double t_eff, int n_sections)
{
    if (n_sections < 1)
        throw Error(Errc::invalid_argument, "n_sections must be >= 1");
    const auto sections = draw_sections(seed, n_sections);
    UnitCapricep u;
    u.samples = build_capricep(sections, fs, L, t_eff).samples;
    u.seed = seed;
    u.fs = fs;
    u.L = L;
    u.t_eff = t_eff;
    u.n_sections = n_sections;
    return u;
}

std::vector<double> matched_kernel(const UnitCapricep& u)
{
    const std::size_t L = u.samples.size();
    std::vector<double> m(L);
    for (std::size_t n = 0; n < L; ++n)
        m[n] = u.samples[(L - n) % L];
    return m;
}

std::vector<double> convolve(std::span<const double> a, std::span<const double> b)
{
    if (a.empty() || b.empty())
        return {};
    const std::size_t n = a.size() + b.size() - 1;
    if (std::min(a.size(), b.size()) <= 64) {
        std::vector<double> y(n, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j)
                y[i + j] += a[i] * b[j];
        return y;
    }
    std::size_t nfft = 2;
    while (nfft < n)
        nfft <<= 1;
    RealFft f(nfft);
    std::vector<double> pa(nfft, 0.0), pb(nfft, 0.0);
    std::copy(a.begin(), a.end(), pa.begin());
    std::copy(b.begin(), b.end(), pb.begin());
    std::vector<cplx> A(f.bins()), B(f.bins());
    f.forward(pa.data(), A.data());
    f.forward(pb.data(), B.data());
    for (std::size_t k = 0; k < A.size(); ++k)
        A[k] *= B[k];
    f.inverse(A.data(), pa.data());
    pa.resize(n);
    for (auto& v : pa)
        v /= static_cast<double>(nfft);
    return pa;
}

} // namespace foresp
