#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "rave/errors.hpp"

namespace rave::fft {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform, unnormalized in both directions:
// forward  X[k] = sum_m x[m] exp(-i 2 pi k m / n)
// inverse  x[m] = sum_k X[k] exp(+i 2 pi k m / n)   (caller divides by n)
template <typename T>
void transform(std::vector<std::complex<T>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_power_of_two(n)) throw ShapeError("fft size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const T ang = T(2) * T(3.14159265358979323846264338327950288L) / T(len) * (inverse ? T(1) : T(-1));
        const std::complex<T> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<T> w(1);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<T> u = a[i + k];
                const std::complex<T> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Forward DFT of a real frame; returns bins 0..n/2 inclusive.
template <typename T>
std::vector<std::complex<T>> rfft(const T* x, std::size_t n) {
    std::vector<std::complex<T>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = std::complex<T>(x[i], T(0));
    transform(buf, false);
    buf.resize(n / 2 + 1);
    return buf;
}

// Adjoint of rfft as a linear map R^n -> C^(n/2+1): given cotangents G on the
// computed bins, returns g[m] = sum_{k<=n/2} Re(G[k] exp(+i 2 pi k m / n)).
template <typename T>
std::vector<T> rfft_adjoint(const std::vector<std::complex<T>>& g, std::size_t n) {
    std::vector<std::complex<T>> buf(n, std::complex<T>(0));
    for (std::size_t k = 0; k < g.size() && k <= n / 2; ++k) buf[k] = g[k];
    transform(buf, true);
    std::vector<T> out(n);
    for (std::size_t m = 0; m < n; ++m) out[m] = buf[m].real();
    return out;
}

}  // namespace rave::fft
