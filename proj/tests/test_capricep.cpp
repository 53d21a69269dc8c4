#include "foresp/capricep.hpp"
#include "foresp/error.hpp"
#include "foresp/rng.hpp"

#include "oracle.hpp"

#include <catch_amalgamated.hpp>

using namespace foresp;
using Catch::Matchers::WithinAbs;

namespace {

// Largest |magnitude in dB| over the bins inside [lo, hi] Hz.
double flatness_db(const std::vector<double>& x, double fs, double lo, double hi)
{
    const auto X = oracle::spectrum(x);
    const std::size_t n = X.size();
    double worst = 0.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(n);
        if (f < lo || f > hi)
            continue;
        worst = std::max(worst, std::abs(oracle::db(std::abs(X[k]))));
    }
    return worst;
}

const UnitCapricep& seed1()
{
    static const UnitCapricep u = generate_unit_capricep(1);
    return u;
}

} // namespace

TEST_CASE("default kernel is flat between 20 Hz and 20 kHz")
{
    const auto& u = seed1();
    REQUIRE(u.samples.size() == 65536);
    CHECK(flatness_db(u.samples, u.fs, 20.0, 20000.0) <= 0.5);
}

TEST_CASE("untruncated construction is exactly all-pass")
{
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        const auto secs = draw_sections(seed, 128);
        const auto b = build_capricep(secs, 44100.0, 8192, 0.05);
        const auto X = oracle::spectrum(b.raw);
        for (const auto& c : X)
            REQUIRE_THAT(std::abs(c), WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("energy stays inside the effective duration")
{
    const auto& u = seed1();
    const std::size_t half = static_cast<std::size_t>(u.t_eff * u.fs);
    double inside = 0, total = 0;
    for (std::size_t i = 0; i < u.L; ++i) {
        const double e = u.samples[i] * u.samples[i];
        total += e;
        if (i + half >= u.center() && i <= u.center() + half)
            inside += e;
    }
    CHECK(10.0 * std::log10((total - inside) / total) <= -40.0);
}

TEST_CASE("matched filtering compresses the kernel to a pulse")
{
    const auto& u = seed1();
    const auto r = oracle::xcorr(u.samples, u.samples);
    const std::size_t zero = u.L - 1;
    const double peak = std::abs(r[zero]);
    const auto ms = static_cast<std::size_t>(0.001 * u.fs);
    double lobe = 0, total = 0, side = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        total += r[i] * r[i];
        const std::size_t d = i > zero ? i - zero : zero - i;
        if (d <= ms)
            lobe += r[i] * r[i];
        else
            side = std::max(side, std::abs(r[i]));
    }
    CHECK(lobe / total >= 0.9);
    CHECK(oracle::db(side / peak) <= -40.0);
}

TEST_CASE("compressed pulse through matched_kernel peaks at twice the center")
{
    const auto& u = seed1();
    const auto mk = matched_kernel(u);
    REQUIRE(mk.size() == u.L);
    const auto y = convolve(u.samples, mk);
    const auto it = std::max_element(y.begin(), y.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(static_cast<std::size_t>(it - y.begin()) == 2 * u.center());
}

TEST_CASE("kernels of distinct seeds are nearly orthogonal")
{
    const auto& a = seed1();
    const auto b = generate_unit_capricep(2);
    const auto auto_r = oracle::xcorr(a.samples, a.samples);
    const auto cross = oracle::xcorr(a.samples, b.samples);
    CHECK(oracle::db(oracle::max_abs(cross) / oracle::max_abs(auto_r)) <= -20.0);
}

TEST_CASE("generation is deterministic")
{
    const auto a = generate_unit_capricep(7);
    const auto b = generate_unit_capricep(7);
    CHECK(a.samples == b.samples);
    const auto c = generate_unit_capricep(8);
    CHECK(a.samples != c.samples);
}

TEST_CASE("zero-phase section gives a delta at the center")
{
    const std::vector<PhaseSection> one{PhaseSection{1.0, 0.0, 1}};
    const auto b = build_capricep(one, 44100.0, 1024, 0.01);
    for (std::size_t i = 0; i < b.samples.size(); ++i)
        REQUIRE_THAT(b.samples[i], WithinAbs(i == 512 ? 1.0 : 0.0, 1e-12));

    UnitCapricep u;
    u.samples = b.samples;
    u.L = 1024;
    const auto mk = matched_kernel(u);
    const auto y = oracle::conv_direct(u.samples, mk);
    for (std::size_t i = 0; i < y.size(); ++i)
        REQUIRE_THAT(y[i], WithinAbs(i == 1024 ? 1.0 : 0.0, 1e-12));
}

TEST_CASE("invalid construction parameters are rejected")
{
    auto code_of = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::bad_message;
    };
    CHECK(code_of([] { generate_unit_capricep(1, 44100.0, 65536, 0.2, 0); }) == Errc::invalid_argument);
    CHECK(code_of([] { generate_unit_capricep(1, 44100.0, 60000, 0.2, 16); }) == Errc::invalid_length);
    CHECK(code_of([] { generate_unit_capricep(1, 44100.0, 4096, 0.05, 16); }) == Errc::duration_too_long);
    CHECK(code_of([] { generate_unit_capricep(1, 44100.0, 4096, 0.0, 16); }) == Errc::duration_too_long);
}

TEST_CASE("library convolution matches the direct sum")
{
    foresp::Rng rng(3);
    std::vector<double> a(700), b(300);
    for (auto& v : a)
        v = rng.normal();
    for (auto& v : b)
        v = rng.normal();
    const auto y = convolve(a, b);
    const auto ref = oracle::conv_direct(a, b);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        REQUIRE_THAT(y[i], WithinAbs(ref[i], 1e-9));
}
