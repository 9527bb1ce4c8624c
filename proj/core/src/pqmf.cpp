#include "rave/pqmf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rave/rng.hpp"

namespace rave::pqmf {

double bessel_i0(double x) {
    // Power series; converges fast for the beta range used here.
    double sum = 1.0, term = 1.0;
    const double hx = 0.5 * x;
    for (int k = 1; k < 64; ++k) {
        term *= (hx / k) * (hx / k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

std::vector<double> kaiser_sinc(int taps, double beta, double fc) {
    const double center = 0.5 * (taps - 1);
    const double inv_i0 = 1.0 / bessel_i0(beta);
    std::vector<double> h(static_cast<std::size_t>(taps));
    for (int n = 0; n < taps; ++n) {
        const double t = (n - center) / center;  // [-1, 1]
        const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - t * t))) * inv_i0;
        const double u = fc * (n - center);
        const double sinc = u == 0.0 ? 1.0 : std::sin(M_PI * u) / (M_PI * u);
        h[n] = fc * sinc * win;
    }
    return h;
}

Bank::Bank(int bands, int taps) : bands_(bands), taps_(taps) {
    if (bands_ < 1) throw ConfigError("pqmf bands must be >= 1");
    if (bands_ == 1) {
        if (taps_ == 0) taps_ = 33;
        if (taps_ < 3 || taps_ % 2 == 0)
            throw ConfigError("single-band pqmf needs an odd tap count >= 3");
    } else {
        if (taps_ == 0) taps_ = 32 * bands_;
        if (taps_ < 8 * bands_)
            throw ConfigError("pqmf taps must be at least 8 * bands, got " + std::to_string(taps_));
        if (taps_ % (2 * bands_) != 0)
            throw ConfigError("pqmf taps must be a multiple of 2 * bands");
    }
    design();
}

Bank::Bank(int bands, int taps, double beta, double cutoff) : bands_(bands), taps_(taps) {
    if (bands_ < 1) throw ConfigError("pqmf bands must be >= 1");
    if (taps_ < 3) throw ConfigError("pqmf taps too small");
    build(beta, cutoff);
    Rng rng(0xC0FFEEu);
    std::vector<double> noise(16384);
    for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
    design_snr_ = round_trip_snr(noise);
}

void Bank::build(double beta, double cutoff) {
    beta_ = beta;
    cutoff_ = cutoff;
    const int L = taps_;
    const int M = bands_;
    // Prototype cutoff sits at cutoff * pi/(2M); expressed as a Nyquist fraction.
    const double fc = std::min(1.0, cutoff / (2.0 * M));
    prototype_ = M == 1 ? kaiser_sinc(L, beta, cutoff) : kaiser_sinc(L, beta, fc);

    const double center = 0.5 * (L - 1);
    analysis_.assign(static_cast<std::size_t>(M) * L, 0.0);
    for (int k = 0; k < M; ++k) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        for (int n = 0; n < L; ++n) {
            const double phase = (2 * k + 1) * (M_PI / (2.0 * M)) * (n - center) + sign * M_PI / 4.0;
            analysis_[static_cast<std::size_t>(k) * L + n] = prototype_[n] * std::cos(phase);
        }
    }

    // Power-complementary normalization: scale so sum_k |H_k(w)|^2 averages 1.
    const int grid = 2048;
    double mean_e = 0.0;
    for (int g = 0; g < grid; ++g) {
        const double w = M_PI * (g + 0.5) / grid;
        double e = 0.0;
        for (int k = 0; k < M; ++k) {
            double re = 0.0, im = 0.0;
            const double* h = analysis_.data() + static_cast<std::size_t>(k) * L;
            for (int n = 0; n < L; ++n) {
                re += h[n] * std::cos(w * n);
                im -= h[n] * std::sin(w * n);
            }
            e += re * re + im * im;
        }
        mean_e += e;
    }
    mean_e /= grid;
    const double scale = 1.0 / std::sqrt(mean_e);
    for (auto& v : analysis_) v *= scale;
    for (auto& v : prototype_) v *= scale;

    synthesis_.assign(static_cast<std::size_t>(M) * L, 0.0);
    for (int k = 0; k < M; ++k)
        for (int n = 0; n < L; ++n)
            synthesis_[static_cast<std::size_t>(k) * L + n] =
                M * analysis_[static_cast<std::size_t>(k) * L + (L - 1 - n)];
}

void Bank::design() {
    if (bands_ == 1) {
        // Cutoff 1.0 turns the windowed sinc into an exact delta: pure delay.
        build(0.0, 1.0);
        Rng rng(0xC0FFEEu);
        std::vector<double> noise(16384);
        for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
        design_snr_ = round_trip_snr(noise);
        return;
    }

    Rng rng(0xC0FFEEu);
    std::vector<double> probe(4096);
    for (auto& v : probe) v = rng.uniform(-1.0, 1.0);

    auto score = [&](double beta, double cutoff) {
        build(beta, cutoff);
        return round_trip_snr(probe);
    };

    double best_beta = 9.0, best_cut = 1.0, best = -1e300;
    for (double beta = 2.0; beta <= 18.0; beta += 2.0) {
        for (double cut = 0.85; cut <= 1.151; cut += 0.05) {
            const double s = score(beta, cut);
            if (s > best) { best = s; best_beta = beta; best_cut = cut; }
        }
    }
    for (double beta = std::max(1.0, best_beta - 2.0); beta <= std::min(18.0, best_beta + 2.0) + 1e-9; beta += 0.5) {
        const double s = score(beta, best_cut);
        if (s > best) { best = s; best_beta = beta; }
    }
    double fine_cut = best_cut;
    for (double cut = best_cut - 0.04; cut <= best_cut + 0.04 + 1e-9; cut += 0.01) {
        const double s = score(best_beta, cut);
        if (s > best) { best = s; fine_cut = cut; }
    }
    best_cut = fine_cut;
    double fine_beta = best_beta;
    for (double beta = std::max(1.0, best_beta - 0.5); beta <= std::min(18.0, best_beta + 0.5) + 1e-9; beta += 0.1) {
        const double s = score(beta, best_cut);
        if (s > best) { best = s; fine_beta = beta; }
    }

    build(fine_beta, best_cut);
    std::vector<double> noise(16384);
    Rng rng2(0xC0FFEEu);
    for (auto& v : noise) v = rng2.uniform(-1.0, 1.0);
    design_snr_ = round_trip_snr(noise);
}

std::vector<double> Bank::analyze(const double* x, std::size_t len) const {
    const int M = bands_, L = taps_;
    if (len % static_cast<std::size_t>(M) != 0)
        throw ShapeError("pqmf analyze length must be a multiple of bands");
    const std::size_t S = len / M;
    std::vector<double> mb(static_cast<std::size_t>(M) * S, 0.0);
    for (int k = 0; k < M; ++k) {
        const double* h = analysis_.data() + static_cast<std::size_t>(k) * L;
        double* row = mb.data() + static_cast<std::size_t>(k) * S;
        for (std::size_t s = 0; s < S; ++s) {
            const std::ptrdiff_t n0 = static_cast<std::ptrdiff_t>(s) * M;
            double acc = 0.0;
            const int tmax = static_cast<int>(std::min<std::ptrdiff_t>(L - 1, n0));
            for (int t = 0; t <= tmax; ++t) acc += h[t] * x[n0 - t];
            row[s] = acc;
        }
    }
    return mb;
}

std::vector<double> Bank::analyze(const float* x, std::size_t len) const {
    std::vector<double> xd(x, x + len);
    return analyze(xd.data(), len);
}

std::vector<double> Bank::synthesize(const double* mb, std::size_t frames) const {
    const int M = bands_, L = taps_;
    std::vector<double> out(frames * M, 0.0);
    for (int k = 0; k < M; ++k) {
        const double* g = synthesis_.data() + static_cast<std::size_t>(k) * L;
        const double* row = mb + static_cast<std::size_t>(k) * frames;
        for (std::size_t s = 0; s < frames; ++s) {
            const double v = row[s];
            if (v == 0.0) continue;
            const std::size_t n0 = s * M;
            const std::size_t tmax = std::min<std::size_t>(L, out.size() - n0);
            double* dst = out.data() + n0;
            for (std::size_t t = 0; t < tmax; ++t) dst[t] += g[t] * v;
        }
    }
    return out;
}

std::vector<double> Bank::round_trip(const std::vector<double>& x) const {
    std::vector<double> padded = x;
    const std::size_t rem = padded.size() % static_cast<std::size_t>(bands_);
    if (rem != 0) padded.resize(padded.size() + (bands_ - rem), 0.0);
    const std::vector<double> mb = analyze(padded.data(), padded.size());
    return synthesize(mb.data(), padded.size() / bands_);
}

double Bank::round_trip_snr(const std::vector<double>& x) const {
    const std::vector<double> y = round_trip(x);
    const int d = delay();
    double sig = 0.0, err = 0.0;
    const std::size_t lo = static_cast<std::size_t>(d + taps_);
    const std::size_t hi = y.size() > static_cast<std::size_t>(taps_) ? y.size() - taps_ : 0;
    if (lo >= hi) throw ShapeError("pqmf snr probe too short");
    for (std::size_t n = lo; n < hi; ++n) {
        const double ref = n >= static_cast<std::size_t>(d) && n - d < x.size() ? x[n - d] : 0.0;
        const double e = y[n] - ref;
        sig += ref * ref;
        err += e * e;
    }
    if (err == 0.0) return 300.0;
    return 10.0 * std::log10(sig / err);
}

}  // namespace rave::pqmf
