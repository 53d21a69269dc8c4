#include "foresp/orthomix.hpp"

#include "foresp/error.hpp"
#include "foresp/fft.hpp"
#include "foresp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace foresp {

CodeMatrix build_code_matrix()
{
    return CodeMatrix{{Code{1, 1, 1, 1}, Code{1, -1, 1, -1}, Code{1, 1, -1, -1}}};
}

CombinationCatalog make_catalog(const CatalogParams& params, std::vector<std::uint64_t> seeds,
                                std::vector<std::array<int, 3>> combinations)
{
    if (seeds.size() != 10)
        throw Error(Errc::validation_error, "catalog needs exactly 10 seeds");
    if (combinations.size() != 20)
        throw Error(Errc::validation_error, "catalog needs exactly 20 combinations");
    std::set<std::array<int, 3>> seen;
    for (const auto& t : combinations) {
        for (int i : t)
            if (i < 0 || i > 9)
                throw Error(Errc::validation_error, "combination index out of range");
        if (t[0] == t[1] || t[0] == t[2] || t[1] == t[2])
            throw Error(Errc::validation_error, "combination elements must be distinct");
        if (!seen.insert(t).second)
            throw Error(Errc::validation_error, "duplicate combination");
    }
    CombinationCatalog c;
    c.params = params;
    c.seeds = std::move(seeds);
    c.combinations = std::move(combinations);
    for (auto s : c.seeds)
        c.units.push_back(generate_unit_capricep(s, params.rate, params.L, params.t_eff, params.n_sections));
    return c;
}

const CombinationCatalog& default_catalog()
{
    static const CombinationCatalog cat = [] {
        std::vector<std::uint64_t> seeds;
        for (std::uint64_t s = 101; s <= 110; ++s)
            seeds.push_back(s);
        Rng rng(2021);
        std::vector<std::array<int, 3>> combos;
        std::set<std::array<int, 3>> seen;
        while (combos.size() < 20) {
            std::array<int, 3> t{};
            t[0] = static_cast<int>(rng.below(10));
            do
                t[1] = static_cast<int>(rng.below(10));
            while (t[1] == t[0]);
            do
                t[2] = static_cast<int>(rng.below(10));
            while (t[2] == t[0] || t[2] == t[1]);
            if (seen.insert(t).second)
                combos.push_back(t);
        }
        return make_catalog(CatalogParams{}, seeds, combos);
    }();
    return cat;
}

nlohmann::json catalog_to_json(const CombinationCatalog& c)
{
    nlohmann::json j;
    j["seeds"] = c.seeds;
    j["combinations"] = c.combinations;
    j["kernel"] = {{"rate", c.params.rate}, {"L", c.params.L}, {"t_eff", c.params.t_eff},
                   {"n_sections", c.params.n_sections}};
    return j;
}

CombinationCatalog catalog_from_json(const nlohmann::json& j)
{
    try {
        CatalogParams p;
        if (j.contains("kernel")) {
            const auto& k = j.at("kernel");
            p.rate = k.value("rate", p.rate);
            p.L = k.value("L", p.L);
            p.t_eff = k.value("t_eff", p.t_eff);
            p.n_sections = k.value("n_sections", p.n_sections);
        }
        return make_catalog(p, j.at("seeds").get<std::vector<std::uint64_t>>(),
                            j.at("combinations").get<std::vector<std::array<int, 3>>>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, std::string("catalog: ") + e.what());
    }
}

namespace {

// Band-limited periodic interpolation by zero padding the spectrum.
std::vector<double> fft_resample_periodic(std::span<const double> x, std::size_t n_out)
{
    const std::size_t n = x.size();
    const auto X = rfft(x);
    std::vector<cplx> Y(n_out / 2 + 1, cplx(0.0, 0.0));
    const std::size_t keep = std::min(X.size(), Y.size());
    for (std::size_t k = 0; k < keep; ++k)
        Y[k] = X[k];
    if (n % 2 == 0 && n_out > n)
        Y[n / 2] *= 0.5; // split the old Nyquist bin between +/- frequencies
    auto y = irfft(Y, n_out);
    const double s = static_cast<double>(n_out) / static_cast<double>(n);
    for (auto& v : y)
        v *= s;
    return y;
}

std::vector<double> apply_gain_curve(std::span<const double> x, double fs, bool inverse)
{
    if (x.empty())
        throw Error(Errc::invalid_argument, "pink_shape: empty input");
    if (x.size() == 1)
        return {0.0};
    const std::size_t n = x.size();
    auto X = rfft(x);
    X[0] = 0.0;
    for (std::size_t k = 1; k < X.size(); ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(n);
        if (f > 1.0)
            X[k] *= inverse ? std::sqrt(f) : 1.0 / std::sqrt(f);
    }
    return irfft(X, n);
}

} // namespace

std::vector<double> pink_shape(std::span<const double> x, double fs) { return apply_gain_curve(x, fs, false); }

std::vector<double> pink_unshape(std::span<const double> x, double fs) { return apply_gain_curve(x, fs, true); }

MixtureSequence build_mixture(const CombinationCatalog& catalog, int combination_id, std::size_t T0, double duration,
                              double depth, std::uint64_t seed, double fs)
{
    if (combination_id < 0 || combination_id >= static_cast<int>(catalog.combinations.size()))
        throw Error(Errc::invalid_argument, "combination id out of range");
    if (depth < 0.0)
        throw Error(Errc::invalid_argument, "depth must be >= 0");
    const double rate = catalog.params.rate;
    const double ratio = fs / rate;
    const std::size_t hop = static_cast<std::size_t>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(hop)) > 1e-9 || T0 % hop != 0)
        throw Error(Errc::period_not_aligned, "T0 must be a whole number of kernel-rate samples");
    const std::size_t P = T0 / hop;
    for (const auto& u : catalog.units)
        if (static_cast<double>(P) < 2.0 * u.t_eff * u.fs)
            throw Error(Errc::period_too_short, "T0 shorter than 2 t_eff of a kernel");
    const std::size_t total = static_cast<std::size_t>(std::llround(duration * fs));
    if (total < 4 * T0)
        throw Error(Errc::duration_too_short, "duration shorter than four periods");

    MixtureSequence mx;
    mx.fs = fs;
    mx.pulse_rate = rate;
    mx.T0 = T0;
    mx.period = P;
    mx.n_periods = static_cast<int>((total / T0) / 4 * 4);
    mx.combination = catalog.combinations[static_cast<std::size_t>(combination_id)];
    mx.depth = depth;

    static constexpr std::array<std::array<int, 3>, 6> perms{
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    const auto base = build_code_matrix();
    const auto& perm = perms[Rng(seed).below(6)];
    for (int k = 0; k < 3; ++k)
        mx.codes.rows[k] = base.rows[perm[k]];

    const std::size_t n = static_cast<std::size_t>(mx.n_periods) * P;
    mx.pulse_train.assign(n, 0.0);
    for (int k = 0; k < 3; ++k) {
        const auto& u = catalog.units[static_cast<std::size_t>(mx.combination[k])].samples;
        const std::size_t c = u.size() / 2;
        for (int m = 0; m < mx.n_periods; ++m) {
            const double w = mx.codes.rows[k][m % 4];
            const std::size_t pos = static_cast<std::size_t>(m) * P;
            for (std::size_t i = 0; i < u.size(); ++i)
                mx.pulse_train[(pos + n + i - c) % n] += w * u[i];
        }
    }

    const auto shaped = pink_shape(mx.pulse_train, rate);
    const auto one_cycle = fft_resample_periodic(shaped, n * hop);
    mx.m_cents.resize(total);
    for (std::size_t i = 0; i < total; ++i)
        mx.m_cents[i] = one_cycle[i % one_cycle.size()];
    double peak = 0.0;
    for (double v : mx.m_cents)
        peak = std::max(peak, std::abs(v));
    const double g = peak > 0.0 ? depth / peak : 0.0;
    for (auto& v : mx.m_cents)
        v *= g;
    return mx;
}

std::vector<std::vector<double>> matched_segments(std::span<const double> observation, std::span<const double> kernel,
                                                  std::size_t T0, int n_periods, std::size_t lead)
{
    const std::size_t n = static_cast<std::size_t>(n_periods) * T0;
    if (observation.size() < n)
        throw Error(Errc::invalid_argument, "observation shorter than n_periods * T0");
    std::vector<double> centered(n, 0.0);
    const std::size_t c = kernel.size() / 2;
    for (std::size_t i = 0; i < kernel.size(); ++i)
        centered[(n + i - c % n) % n] += kernel[i];
    const auto y = circular_xcorr(observation.first(n), centered);
    std::vector<std::vector<double>> seg(static_cast<std::size_t>(n_periods), std::vector<double>(T0));
    for (int m = 0; m < n_periods; ++m) {
        const std::size_t start = (static_cast<std::size_t>(m) * T0 + n - lead % n) % n;
        for (std::size_t i = 0; i < T0; ++i)
            seg[m][i] = y[(start + i) % n];
    }
    return seg;
}

Recovery recover_responses(std::span<const double> observation, const std::array<std::span<const double>, 3>& kernels,
                           const CodeMatrix& codes, std::size_t T0, int n_periods, std::size_t lead)
{
    if (n_periods < 4)
        throw Error(Errc::too_few_periods, "recovery needs at least four periods");
    if (n_periods % 4 != 0)
        throw Error(Errc::invalid_argument, "n_periods must be a multiple of 4");
    const std::size_t N = 3 * static_cast<std::size_t>(n_periods);

    // seg[k][m] already code corrected
    std::array<std::vector<std::vector<double>>, 3> seg;
    for (int k = 0; k < 3; ++k) {
        seg[k] = matched_segments(observation, kernels[k], T0, n_periods, lead);
        for (int m = 0; m < n_periods; ++m) {
            const double w = codes.rows[k][m % 4];
            for (auto& v : seg[k][m])
                v *= w;
        }
    }

    Recovery r;
    r.n_averages = static_cast<int>(N);
    r.linear.assign(T0, 0.0);
    for (int k = 0; k < 3; ++k)
        for (int m = 0; m < n_periods; ++m)
            for (std::size_t i = 0; i < T0; ++i)
                r.linear[i] += seg[k][m][i];
    for (auto& v : r.linear)
        v /= static_cast<double>(N);

    // Deviations are taken about the mean of segments sharing kernel and
    // code phase, which removes deterministic cross-kernel terms. With a
    // single code cycle there is nothing to compare, so fall back to the
    // spread about the overall mean.
    r.random_tv.assign(T0, 0.0);
    if (n_periods >= 8) {
        const int per = n_periods / 4;
        for (int k = 0; k < 3; ++k) {
            for (int p = 0; p < 4; ++p) {
                std::vector<double> mean(T0, 0.0);
                for (int m = p; m < n_periods; m += 4)
                    for (std::size_t i = 0; i < T0; ++i)
                        mean[i] += seg[k][m][i] / per;
                for (int m = p; m < n_periods; m += 4)
                    for (std::size_t i = 0; i < T0; ++i) {
                        const double d = seg[k][m][i] - mean[i];
                        r.random_tv[i] += d * d;
                    }
            }
        }
        for (auto& v : r.random_tv)
            v = std::sqrt(v / static_cast<double>(N - 12));
    } else {
        for (int k = 0; k < 3; ++k)
            for (int m = 0; m < n_periods; ++m)
                for (std::size_t i = 0; i < T0; ++i) {
                    const double d = seg[k][m][i] - r.linear[i];
                    r.random_tv[i] += d * d;
                }
        for (auto& v : r.random_tv)
            v = std::sqrt(v / static_cast<double>(N - 1));
    }
    return r;
}

Recovery recover_responses(std::span<const double> observation, const CombinationCatalog& catalog, int combination_id,
                           const CodeMatrix& codes, std::size_t T0, int n_periods, std::size_t lead)
{
    if (combination_id < 0 || combination_id >= static_cast<int>(catalog.combinations.size()))
        throw Error(Errc::invalid_argument, "combination id out of range");
    const auto& t = catalog.combinations[static_cast<std::size_t>(combination_id)];
    return recover_responses(observation,
                             {std::span<const double>(catalog.units[t[0]].samples),
                              std::span<const double>(catalog.units[t[1]].samples),
                              std::span<const double>(catalog.units[t[2]].samples)},
                             codes, T0, n_periods, lead);
}

} // namespace foresp
