#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace foresp {

using cplx = std::complex<double>;

// Real-input FFT of fixed size backed by FFTW. One instance per thread;
// plan creation is serialized internally because the FFTW planner is not
// reentrant.
class RealFft {
public:
    explicit RealFft(std::size_t n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::size_t size() const { return n_; }
    std::size_t bins() const { return n_ / 2 + 1; }

    // out has bins() entries
    void forward(const double* in, cplx* out);
    // unnormalized inverse: out has size() entries
    void inverse(const cplx* in, double* out);

private:
    std::size_t n_;
    double* rbuf_;
    void* cbuf_;
    void* fwd_;
    void* inv_;
};

std::vector<cplx> rfft(std::span<const double> x);
// Normalized inverse (divides by n).
std::vector<double> irfft(std::span<const cplx> X, std::size_t n);

// Circular cross-correlation r[l] = sum_n a[n + l] b[n], both length n.
std::vector<double> circular_xcorr(std::span<const double> a, std::span<const double> b);

} // namespace foresp
