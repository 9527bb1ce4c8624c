#pragma once

#include <cstdint>
#include <vector>

#include "rave/rng.hpp"
#include "rave/waveform.hpp"

namespace rave::dsp {

enum class Window { hann, rect };

// Multiscale spectral comparison settings. Hop is always scale/4.
struct SpectralConfig {
    std::vector<int> scales{2048, 1024, 512, 256, 128};
    double epsilon = 1e-7;
    Window window = Window::hann;

    void validate() const;
};

// |STFT| frames of a mono signal at one scale. Row-major [frames][bins].
struct AmplitudeSpectrogram {
    int frames = 0;
    int bins = 0;
    int scale = 0;
    std::vector<double> mag;

    double at(int f, int b) const { return mag[static_cast<std::size_t>(f) * bins + b]; }
};

// Periodic taper of length n: hann w[m] = 0.5 - 0.5 cos(2 pi m / n), rect = 1.
std::vector<double> make_window(int n, Window w);

// Number of hop=n/4 frames covering len samples, tail zero-padded; >=1.
int frame_count(std::size_t len, int n);

AmplitudeSpectrogram stft_amplitude(const float* x, std::size_t len, int scale, Window w);
AmplitudeSpectrogram stft_amplitude(const Waveform& x, int scale, Window w = Window::hann);

// Sum over scales of relative Frobenius distance plus log(L1 + eps).
// The log term is unbounded below, so identical inputs give a negative value.
double spectral_distance(const Waveform& x, const Waveform& y, const SpectralConfig& cfg);
double spectral_distance(const float* x, const float* y, std::size_t len, const SpectralConfig& cfg);

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> logvar;

    void validate() const;
};

// Per-dimension KL(q || N(0, I)) = 0.5 (mu^2 + sigma^2 - log sigma^2 - 1).
std::vector<double> kl_diag_gaussian(const DiagonalGaussian& q);

// z = mu + exp(logvar / 2) * noise with noise ~ N(0, I) drawn from rng.
std::vector<double> reparameterize(const DiagonalGaussian& q, Rng& rng);

// Simulates a lower bit depth by adding uniform noise of one quantization step
// q = 2^(1 - bits), then clipping to [-1, 1].
Waveform dequantize(const Waveform& x, int bits, Rng& rng);

// Cascade of first-order allpass sections with coefficients drawn from
// U[-0.9, 0.9]; randomizes phase while keeping the amplitude spectrum.
Waveform random_allpass(const Waveform& x, Rng& rng, int sections = 4);

// Random contiguous crop of exactly `length` samples; the clip must be long enough.
Waveform random_crop(const Waveform& x, std::size_t length, Rng& rng);

}  // namespace rave::dsp
