#pragma once
// Reference implementations used as test oracles. Deliberately simple and
// independent of the library code (no FFTW, no shared helpers).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
inline constexpr double pi = std::numbers::pi;

// In-place iterative radix-2 FFT; sign -1 forward, +1 inverse (unscaled).
inline void fft(std::vector<cplx>& a, int sign = -1)
{
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx w = std::polar(1.0, ang * static_cast<double>(k));
                const cplx u = a[i + k], v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
    }
}

inline std::size_t pow2_at_least(std::size_t n)
{
    std::size_t m = 1;
    while (m < n)
        m <<= 1;
    return m;
}

inline std::vector<cplx> spectrum(std::span<const double> x, std::size_t n = 0)
{
    if (n == 0)
        n = pow2_at_least(x.size());
    std::vector<cplx> a(n);
    for (std::size_t i = 0; i < x.size() && i < n; ++i)
        a[i] = x[i];
    fft(a);
    return a;
}

// Full linear cross-correlation r[l] = sum_n a[n + l] b[n], l in
// [-(nb-1), na-1]; index l + nb - 1.
inline std::vector<double> xcorr(std::span<const double> a, std::span<const double> b)
{
    const std::size_t n = pow2_at_least(a.size() + b.size());
    auto A = spectrum(a, n);
    std::vector<cplx> B(n);
    for (std::size_t i = 0; i < b.size(); ++i)
        B[(n - i) % n] = b[i];
    fft(B);
    for (std::size_t i = 0; i < n; ++i)
        A[i] *= B[i];
    fft(A, +1);
    std::vector<double> r(a.size() + b.size() - 1);
    for (std::size_t k = 0; k < r.size(); ++k) {
        const long l = static_cast<long>(k) - static_cast<long>(b.size() - 1);
        r[k] = A[static_cast<std::size_t>((l + static_cast<long>(n)) % static_cast<long>(n))].real() /
               static_cast<double>(n);
    }
    return r;
}

inline std::vector<double> conv_direct(std::span<const double> a, std::span<const double> b)
{
    std::vector<double> y(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            y[i + j] += a[i] * b[j];
    return y;
}

inline double mean(std::span<const double> x)
{
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double rms(std::span<const double> x)
{
    double s = 0.0;
    for (double v : x)
        s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

inline double max_abs(std::span<const double> x)
{
    double m = 0.0;
    for (double v : x)
        m = std::max(m, std::abs(v));
    return m;
}

inline double db(double ratio) { return 20.0 * std::log10(ratio); }

inline double corr(std::span<const double> a, std::span<const double> b)
{
    const double ma = mean(a), mb = mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline std::vector<double> tone(double f, double fs, std::size_t n, double amp = 1.0, double phase = 0.0)
{
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = amp * std::sin(2.0 * pi * f * static_cast<double>(i) / fs + phase);
    return x;
}

inline double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace oracle
