#include "foresp/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>
#include <stdexcept>

namespace foresp {

namespace {
std::mutex& planner_mutex()
{
    static std::mutex m;
    return m;
}
} // namespace

RealFft::RealFft(std::size_t n) : n_(n)
{
    if (n < 2)
        throw std::invalid_argument("RealFft: size must be >= 2");
    rbuf_ = fftw_alloc_real(n);
    auto* c = fftw_alloc_complex(n / 2 + 1);
    cbuf_ = c;
    std::lock_guard lock(planner_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), rbuf_, c, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), c, rbuf_, FFTW_ESTIMATE);
}

RealFft::~RealFft()
{
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
    fftw_destroy_plan(static_cast<fftw_plan>(inv_));
    fftw_free(rbuf_);
    fftw_free(cbuf_);
}

void RealFft::forward(const double* in, cplx* out)
{
    std::copy(in, in + n_, rbuf_);
    fftw_execute(static_cast<fftw_plan>(fwd_));
    auto* c = static_cast<fftw_complex*>(cbuf_);
    for (std::size_t k = 0; k < bins(); ++k)
        out[k] = cplx(c[k][0], c[k][1]);
}

void RealFft::inverse(const cplx* in, double* out)
{
    auto* c = static_cast<fftw_complex*>(cbuf_);
    for (std::size_t k = 0; k < bins(); ++k) {
        c[k][0] = in[k].real();
        c[k][1] = in[k].imag();
    }
    fftw_execute(static_cast<fftw_plan>(inv_));
    std::copy(rbuf_, rbuf_ + n_, out);
}

std::vector<cplx> rfft(std::span<const double> x)
{
    RealFft f(x.size());
    std::vector<cplx> X(f.bins());
    f.forward(x.data(), X.data());
    return X;
}

std::vector<double> irfft(std::span<const cplx> X, std::size_t n)
{
    RealFft f(n);
    if (X.size() != f.bins())
        throw std::invalid_argument("irfft: spectrum size mismatch");
    std::vector<double> x(n);
    f.inverse(X.data(), x.data());
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : x)
        v *= s;
    return x;
}

std::vector<double> circular_xcorr(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("circular_xcorr: length mismatch");
    RealFft f(a.size());
    std::vector<cplx> A(f.bins()), B(f.bins());
    f.forward(a.data(), A.data());
    f.forward(b.data(), B.data());
    for (std::size_t k = 0; k < A.size(); ++k)
        A[k] *= std::conj(B[k]);
    std::vector<double> r(a.size());
    f.inverse(A.data(), r.data());
    const double s = 1.0 / static_cast<double>(a.size());
    for (auto& v : r)
        v *= s;
    return r;
}

} // namespace foresp
