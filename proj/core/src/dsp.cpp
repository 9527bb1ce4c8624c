#include "rave/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>

#include "rave/errors.hpp"
#include "rave/fft.hpp"

namespace rave::dsp {

void SpectralConfig::validate() const {
    if (scales.empty()) throw ConfigError("spectral scales must be non-empty");
    for (int n : scales) {
        if (n < 8 || !fft::is_power_of_two(static_cast<unsigned>(n)))
            throw ConfigError("spectral scale must be a power of two >= 8, got " + std::to_string(n));
    }
    if (epsilon <= 0.0) throw ConfigError("spectral epsilon must be positive");
}

std::vector<double> make_window(int n, Window w) {
    std::vector<double> win(static_cast<std::size_t>(n), 1.0);
    if (w == Window::hann) {
        for (int m = 0; m < n; ++m)
            win[m] = 0.5 - 0.5 * std::cos(2.0 * M_PI * m / n);
    }
    return win;
}

int frame_count(std::size_t len, int n) {
    const int hop = n / 4;
    if (len <= static_cast<std::size_t>(n)) return 1;
    // Last frame may overhang; overhanging samples are zero-padded.
    return static_cast<int>((len - n + hop - 1) / hop) + 1;
}

AmplitudeSpectrogram stft_amplitude(const float* x, std::size_t len, int scale, Window w) {
    if (!fft::is_power_of_two(static_cast<unsigned>(scale)))
        throw ConfigError("stft scale must be a power of two, got " + std::to_string(scale));
    const int n = scale;
    const int hop = n / 4;
    const int frames = frame_count(len, n);
    const int bins = n / 2 + 1;
    const std::vector<double> win = make_window(n, w);

    AmplitudeSpectrogram out;
    out.frames = frames;
    out.bins = bins;
    out.scale = n;
    out.mag.assign(static_cast<std::size_t>(frames) * bins, 0.0);

    std::vector<double> buf(static_cast<std::size_t>(n));
    for (int f = 0; f < frames; ++f) {
        const std::size_t off = static_cast<std::size_t>(f) * hop;
        for (int m = 0; m < n; ++m) {
            const std::size_t idx = off + m;
            const double s = idx < len ? static_cast<double>(x[idx]) : 0.0;
            buf[m] = s * win[m];
        }
        const std::vector<std::complex<double>> spec = fft::rfft(buf.data(), n);
        double* row = out.mag.data() + static_cast<std::size_t>(f) * bins;
        for (int b = 0; b < bins; ++b) row[b] = std::abs(spec[b]);
    }
    return out;
}

AmplitudeSpectrogram stft_amplitude(const Waveform& x, int scale, Window w) {
    return stft_amplitude(x.samples.data(), x.samples.size(), scale, w);
}

double spectral_distance(const float* x, const float* y, std::size_t len, const SpectralConfig& cfg) {
    cfg.validate();
    double total = 0.0;
    for (int n : cfg.scales) {
        const AmplitudeSpectrogram ax = stft_amplitude(x, len, n, cfg.window);
        const AmplitudeSpectrogram ay = stft_amplitude(y, len, n, cfg.window);
        double diff2 = 0.0, ref2 = 0.0, l1 = 0.0;
        for (std::size_t i = 0; i < ax.mag.size(); ++i) {
            const double d = ax.mag[i] - ay.mag[i];
            diff2 += d * d;
            ref2 += ax.mag[i] * ax.mag[i];
            l1 += std::abs(d);
        }
        total += std::sqrt(diff2) / (std::sqrt(ref2) + cfg.epsilon) + std::log(l1 + cfg.epsilon);
    }
    return total;
}

double spectral_distance(const Waveform& x, const Waveform& y, const SpectralConfig& cfg) {
    if (x.samples.size() != y.samples.size())
        throw ShapeError("spectral_distance requires equal lengths, got " +
                         std::to_string(x.samples.size()) + " vs " + std::to_string(y.samples.size()));
    return spectral_distance(x.samples.data(), y.samples.data(), x.samples.size(), cfg);
}

void DiagonalGaussian::validate() const {
    if (mean.size() != logvar.size())
        throw ShapeError("gaussian mean/logvar size mismatch");
}

std::vector<double> kl_diag_gaussian(const DiagonalGaussian& q) {
    q.validate();
    std::vector<double> kl(q.mean.size());
    for (std::size_t i = 0; i < kl.size(); ++i) {
        const double mu = q.mean[i];
        const double lv = q.logvar[i];
        kl[i] = 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    return kl;
}

std::vector<double> reparameterize(const DiagonalGaussian& q, Rng& rng) {
    q.validate();
    std::vector<double> z(q.mean.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = q.mean[i] + std::exp(0.5 * q.logvar[i]) * rng.normal();
    return z;
}

Waveform dequantize(const Waveform& x, int bits, Rng& rng) {
    if (bits < 2 || bits > 32) throw ConfigError("dequantize bits must be in [2, 32]");
    const double q = std::ldexp(1.0, 1 - bits);
    Waveform out;
    out.sample_rate = x.sample_rate;
    out.samples.resize(x.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
        const double n = rng.uniform(-0.5 * q, 0.5 * q);
        out.samples[i] = static_cast<float>(std::clamp(static_cast<double>(x.samples[i]) + n, -1.0, 1.0));
    }
    return out;
}

Waveform random_allpass(const Waveform& x, Rng& rng, int sections) {
    if (sections < 1) throw ConfigError("allpass needs at least one section");
    Waveform out = x;
    std::vector<double> buf(x.samples.begin(), x.samples.end());
    std::vector<double> next(buf.size());
    for (int s = 0; s < sections; ++s) {
        const double a = rng.uniform(-0.9, 0.9);
        // H(z) = (a + z^-1) / (1 + a z^-1):  y[n] = a x[n] + x[n-1] - a y[n-1]
        double x1 = 0.0, y1 = 0.0;
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const double y = a * buf[i] + x1 - a * y1;
            x1 = buf[i];
            y1 = y;
            next[i] = y;
        }
        std::swap(buf, next);
    }
    for (std::size_t i = 0; i < buf.size(); ++i) out.samples[i] = static_cast<float>(buf[i]);
    return out;
}

Waveform random_crop(const Waveform& x, std::size_t length, Rng& rng) {
    if (length == 0) throw ConfigError("crop length must be positive");
    if (x.samples.size() < length)
        throw DataError("clip too short to crop: " + std::to_string(x.samples.size()) +
                        " < " + std::to_string(length));
    const std::size_t span = x.samples.size() - length;
    const std::size_t off = span == 0 ? 0 : static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(span + 1)));
    Waveform out;
    out.sample_rate = x.sample_rate;
    out.samples.assign(x.samples.begin() + off, x.samples.begin() + off + length);
    return out;
}

}  // namespace rave::dsp
