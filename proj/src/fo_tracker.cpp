#include "foresp/fo_tracker.hpp"

#include "foresp/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace foresp {

namespace {

constexpr double pi = std::numbers::pi;
constexpr double nan = std::numeric_limits<double>::quiet_NaN();

// sum_{n<W} e^{-j theta n}
cplx dirichlet(double theta, std::size_t W)
{
    const double Wd = static_cast<double>(W);
    const double s = std::sin(0.5 * theta);
    const cplx ph = std::polar(1.0, -0.5 * theta * (Wd - 1.0));
    if (std::abs(s) < 1e-13)
        return ph * Wd;
    return ph * (std::sin(0.5 * Wd * theta) / s);
}

// Transform of the periodic Hann window at angular frequency theta.
cplx hann_transform(double theta, std::size_t W)
{
    const double d = 2.0 * pi / static_cast<double>(W);
    return 0.5 * dirichlet(theta, W) - 0.25 * dirichlet(theta - d, W) - 0.25 * dirichlet(theta + d, W);
}

constexpr std::size_t kModelHarmonics = 3;

// Gaussian elimination on an n x (n+1) augmented matrix; solution left in
// the last column.
template <class M>
bool solve_in_place(M& a, std::size_t n, double tiny)
{
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col]))
                piv = r;
        if (std::abs(a[piv][col]) <= tiny)
            return false;
        std::swap(a[piv], a[col]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col)
                continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t k = col; k <= n; ++k)
                a[r][k] -= f * a[col][k];
        }
    }
    for (std::size_t r = 0; r < n; ++r)
        a[r][n] /= a[r][r];
    return true;
}

double to_db(double a) { return a > 0.0 ? 20.0 * std::log10(a) : -std::numeric_limits<double>::infinity(); }

} // namespace

IfEstimator::IfEstimator(std::size_t window, double fs)
    : W_(window), fs_(fs), rms_floor_(kVoicingRmsDbfs), min_quality_(kVoicingQuality), win_(window), buf_(window),
      X1_(window / 2 + 1), X2_(window / 2 + 1), fft_(std::make_unique<RealFft>(window))
{
    for (std::size_t n = 0; n < W_; ++n)
        win_[n] = 0.5 - 0.5 * std::cos(2.0 * pi * static_cast<double>(n) / static_cast<double>(W_));
}

void IfEstimator::set_thresholds(double rms_floor_dbfs, double min_quality)
{
    rms_floor_ = rms_floor_dbfs;
    min_quality_ = min_quality;
}

IfEstimate IfEstimator::estimate(std::span<const double> seg, double lo, double hi)
{
    if (seg.size() < W_ + 1)
        throw Error(Errc::signal_too_short, "segment shorter than W+1");
    if (!(lo < hi) || !(hi < fs_ / 2))
        throw Error(Errc::invalid_argument, "search range must satisfy lo < hi < fs/2");

    IfEstimate r;
    double ss = 0.0;
    for (std::size_t n = 0; n <= W_; ++n)
        ss += seg[n] * seg[n];
    r.rms_dbfs = 10.0 * std::log10(ss / static_cast<double>(W_ + 1));
    if (!(r.rms_dbfs >= rms_floor_)) {
        r.fo_hz = nan;
        return r;
    }

    for (std::size_t n = 0; n < W_; ++n)
        buf_[n] = win_[n] * seg[n];
    fft_->forward(buf_.data(), X1_.data());
    for (std::size_t n = 0; n < W_; ++n)
        buf_[n] = win_[n] * seg[n + 1];
    fft_->forward(buf_.data(), X2_.data());

    const double Wd = static_cast<double>(W_);
    auto b0 = static_cast<std::size_t>(std::max(1.0, std::ceil(lo * Wd / fs_)));
    auto b1 = static_cast<std::size_t>(std::min(Wd / 2 - 1, std::floor(hi * Wd / fs_)));
    if (b1 < b0) {
        r.fo_hz = nan;
        return r;
    }
    std::size_t b = b0;
    double best = -1.0, total = 0.0;
    for (std::size_t k = b0; k <= b1; ++k) {
        const double p = std::norm(X1_[k]);
        total += p;
        if (p > best) {
            best = p;
            b = k;
        }
    }
    double lobe = 0.0;
    for (std::size_t k = (b >= b0 + 2 ? b - 2 : b0); k <= std::min(b + 2, b1); ++k)
        lobe += std::norm(X1_[k]);
    r.quality = total > 0.0 ? lobe / total : 0.0;

    const cplx x1 = X1_[b], x2 = X2_[b];
    double om = std::arg(std::conj(x1) * x2);
    std::array<cplx, kModelHarmonics> c{};
    bool solved = false;
    // x = sum_k c_k e^{j k om n} + conj over the fundamental and its first
    // overtones; their images and sidelobes leak into bin b and bias the
    // phase advance. Fit the amplitudes at each harmonic's bin, remove all but
    // the fundamental's own term, and re-read the phase advance.
    for (int it = 0; it < 3; ++it) {
        if (!(om > 0.0))
            break;
        std::size_t K = 0;
        std::array<std::size_t, kModelHarmonics> bins{};
        for (std::size_t k = 1; k <= kModelHarmonics; ++k) {
            const double pos = static_cast<double>(k) * om * Wd / (2.0 * pi);
            if (k > 1 && pos >= Wd / 2 - 1)
                break;
            bins[k - 1] = k == 1 ? b : static_cast<std::size_t>(std::llround(pos));
            K = k;
        }
        std::array<std::array<double, 2 * kModelHarmonics + 1>, 2 * kModelHarmonics> A{};
        std::array<std::array<cplx, kModelHarmonics>, kModelHarmonics> P{}, Q{};
        for (std::size_t r = 0; r < K; ++r) {
            const double th = 2.0 * pi * static_cast<double>(bins[r]) / Wd;
            for (std::size_t m = 0; m < K; ++m) {
                const double nu = static_cast<double>(m + 1) * om;
                P[r][m] = hann_transform(th - nu, W_);
                Q[r][m] = hann_transform(th + nu, W_);
                const cplx S = P[r][m] + Q[r][m], D = P[r][m] - Q[r][m];
                A[2 * r][2 * m] = S.real();
                A[2 * r][2 * m + 1] = -D.imag();
                A[2 * r + 1][2 * m] = S.imag();
                A[2 * r + 1][2 * m + 1] = D.real();
            }
            A[2 * r][2 * K] = X1_[bins[r]].real();
            A[2 * r + 1][2 * K] = X1_[bins[r]].imag();
        }
        if (!solve_in_place(A, 2 * K, 1e-12 * std::norm(P[0][0])))
            break;
        c = {};
        for (std::size_t m = 0; m < K; ++m)
            c[m] = cplx(A[2 * m][2 * K], A[2 * m + 1][2 * K]);
        solved = true;
        cplx y1 = x1, y2 = x2;
        for (std::size_t m = 0; m < K; ++m) {
            const double nu = static_cast<double>(m + 1) * om;
            y1 -= std::conj(c[m]) * Q[0][m];
            y2 -= std::conj(c[m]) * std::polar(1.0, -nu) * Q[0][m];
            if (m > 0) {
                y1 -= c[m] * P[0][m];
                y2 -= c[m] * std::polar(1.0, nu) * P[0][m];
            }
        }
        om = std::arg(std::conj(y1) * y2);
    }
    r.fo_hz = om * fs_ / (2.0 * pi);
    const double amp = solved ? 2.0 * std::abs(c[0]) : 2.0 * std::abs(x1) / (0.5 * Wd);
    r.amplitude_dbfs = to_db(amp);
    r.voiced = r.quality >= min_quality_ && r.fo_hz >= lo && r.fo_hz <= hi;
    return r;
}

IfEstimate estimate_if_frame(std::span<const double> segment, double fs, double search_lo, double search_hi)
{
    if (segment.size() < 3)
        throw Error(Errc::signal_too_short, "segment too short");
    IfEstimator e(segment.size() - 1, fs);
    return e.estimate(segment, search_lo, search_hi);
}

FoTrajectory track(std::span<const double> x, double fs, std::size_t hop, double target_fo, const TrackOptions& opt)
{
    if (!(target_fo > 0.0))
        throw Error(Errc::nonpositive_frequency, "target_fo must be positive");
    if (hop == 0 || opt.harmonic < 1)
        throw Error(Errc::invalid_argument, "hop and harmonic must be positive");
    const std::size_t W = opt.window;
    if (x.size() < W + 1)
        throw Error(Errc::signal_too_short, "signal shorter than one analysis window");

    FoTrajectory t;
    t.hop = hop;
    t.window_length = W;
    t.target_fo = target_fo;
    t.fs = fs;
    std::size_t start0 = 0;
    if (opt.grid_centered) {
        const std::size_t i0 = (W / 2 + hop - 1) / hop;
        t.first_center = i0 * hop;
        start0 = t.first_center - W / 2;
    } else {
        t.first_center = W / 2;
    }
    if (start0 + W + 1 > x.size())
        throw Error(Errc::signal_too_short, "signal shorter than one analysis window");

    const double h = opt.harmonic;
    const double lo = h * target_fo * std::exp2(-opt.semitones / 12.0);
    const double hi = std::min(h * target_fo * std::exp2(opt.semitones / 12.0), 0.499 * fs);
    IfEstimator est(W, fs);
    est.set_thresholds(opt.rms_floor_dbfs, opt.min_quality);

    const std::size_t nf = (x.size() - start0 - W - 1) / hop + 1;
    t.frames.reserve(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        const std::size_t s = start0 + i * hop;
        const auto e = est.estimate(x.subspan(s, W + 1), lo, hi);
        FoFrame f;
        f.time = static_cast<double>(t.first_center + i * hop) / fs;
        f.amplitude = e.amplitude_dbfs;
        f.quality = e.quality;
        f.voiced = e.voiced;
        if (e.voiced) {
            f.fo_hz = e.fo_hz / h;
            f.cents_re_target = hz_to_cents(f.fo_hz, target_fo);
        } else {
            f.fo_hz = nan;
            f.cents_re_target = nan;
        }
        t.frames.push_back(f);
    }
    return t;
}

std::string trajectory_to_csv(const FoTrajectory& t)
{
    std::ostringstream os;
    os.precision(10);
    os << "time_s,fo_hz,cents,amp_dbfs,voiced,quality\n";
    for (const auto& f : t.frames) {
        os << f.time << ',';
        if (f.voiced)
            os << f.fo_hz << ',' << f.cents_re_target << ',';
        else
            os << "nan,nan,";
        if (std::isfinite(f.amplitude))
            os << f.amplitude;
        else
            os << "-inf";
        os << ',' << (f.voiced ? 1 : 0) << ',' << f.quality << '\n';
    }
    return os.str();
}

double hz_to_cents(double f, double f_ref)
{
    if (!(f > 0.0) || !(f_ref > 0.0))
        throw Error(Errc::nonpositive_frequency, "frequencies must be positive");
    return 1200.0 * std::log2(f / f_ref);
}

DisplaySmoother::DisplaySmoother(double alpha) : alpha_(alpha)
{
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw Error(Errc::invalid_argument, "alpha must be in [0, 1)");
}

double DisplaySmoother::update(double x)
{
    if (std::isnan(x)) {
        have_ = false;
        return nan;
    }
    if (!have_) {
        y_ = x;
        have_ = true;
        return y_;
    }
    y_ = alpha_ * y_ + (1.0 - alpha_) * x;
    return y_;
}

std::vector<double> smooth_display(std::span<const double> fo_hz, double alpha)
{
    DisplaySmoother s(alpha);
    std::vector<double> y;
    y.reserve(fo_hz.size());
    for (double v : fo_hz)
        y.push_back(s.update(v));
    return y;
}

LivePitchMonitor::LivePitchMonitor(double fs, double target_fo, double alpha, std::size_t window)
    : est_(window, fs), smooth_(alpha), target_(target_fo), seg_(window + 1)
{
}

void LivePitchMonitor::set_target(double target_fo)
{
    target_ = target_fo;
    smooth_.reset();
}

FoFrame LivePitchMonitor::update(std::span<const float> snapshot, double time)
{
    FoFrame f;
    f.time = time;
    if (snapshot.size() < seg_.size()) {
        smooth_.update(nan);
        f.fo_hz = f.cents_re_target = nan;
        return f;
    }
    const auto tail = snapshot.last(seg_.size());
    std::copy(tail.begin(), tail.end(), seg_.begin());
    const double lo = target_ * std::exp2(-kSearchSemitones / 12.0);
    const double hi = std::min(target_ * std::exp2(kSearchSemitones / 12.0), 0.499 * est_.fs());
    const auto e = est_.estimate(seg_, lo, hi);
    f.amplitude = e.amplitude_dbfs;
    f.quality = e.quality;
    f.voiced = e.voiced;
    const double y = smooth_.update(e.voiced ? e.fo_hz : nan);
    f.fo_hz = y;
    f.cents_re_target = e.voiced ? hz_to_cents(y, target_) : nan;
    return f;
}

} // namespace foresp
