#pragma once

#include <vector>

#include "rave/errors.hpp"

namespace rave::pqmf {

// Cosine-modulated pseudo-QMF bank built from a Kaiser-windowed sinc prototype.
//
// Analysis filters:
//   h_k[n] = p[n] * cos((2k+1) * (pi / 2M) * (n - (L-1)/2) + (-1)^k * pi/4)
// Synthesis filters are the time-reversed analysis filters scaled by M. The
// prototype is normalized so the modulated bank is power complementary, which
// makes the round trip approximately a pure delay of (taps - 1) samples.
//
// For bands == 1 the modulation degenerates; an odd-length delta prototype is
// used instead and the round trip is an exact delay.
class Bank {
  public:
    // Designs the prototype by grid-searching the Kaiser beta and the cutoff
    // against white-noise round-trip SNR. taps == 0 selects 32 * bands
    // (33 for a single band, which needs an odd length).
    explicit Bank(int bands, int taps = 0);

    // Builds directly from known design parameters (skips the search).
    // cutoff is the sinc passband edge as a fraction of pi / (2 * bands).
    Bank(int bands, int taps, double beta, double cutoff);

    int bands() const { return bands_; }
    int taps() const { return taps_; }
    int delay() const { return taps_ - 1; }
    double beta() const { return beta_; }
    double cutoff() const { return cutoff_; }
    // White-noise round-trip SNR (dB) measured after the design/normalize step.
    double design_snr() const { return design_snr_; }

    const std::vector<double>& prototype() const { return prototype_; }
    const double* analysis_filter(int k) const { return analysis_.data() + static_cast<std::size_t>(k) * taps_; }
    const double* synthesis_filter(int k) const { return synthesis_.data() + static_cast<std::size_t>(k) * taps_; }

    // Causal analysis: band k frame s is the filter output at sample s * bands.
    // len must be a multiple of bands; returns [bands][len / bands] row-major.
    std::vector<double> analyze(const double* x, std::size_t len) const;
    std::vector<double> analyze(const float* x, std::size_t len) const;

    // Causal synthesis back to the full rate: [bands][frames] -> bands * frames.
    std::vector<double> synthesize(const double* mb, std::size_t frames) const;

    // Analysis -> synthesis on x, useful for reconstruction checks.
    std::vector<double> round_trip(const std::vector<double>& x) const;

    // SNR (dB) of round_trip(x) against x delayed by (taps - 1), edges skipped.
    double round_trip_snr(const std::vector<double>& x) const;

  private:
    void build(double beta, double cutoff);
    void design();

    int bands_ = 0;
    int taps_ = 0;
    double beta_ = 0.0;
    double cutoff_ = 1.0;
    double design_snr_ = 0.0;
    std::vector<double> prototype_;
    std::vector<double> analysis_;
    std::vector<double> synthesis_;
};

// Zeroth-order modified Bessel function of the first kind (Kaiser window kernel).
double bessel_i0(double x);

// Kaiser-windowed sinc lowpass; fc is the cutoff as a fraction of Nyquist.
std::vector<double> kaiser_sinc(int taps, double beta, double fc);

}  // namespace rave::pqmf
