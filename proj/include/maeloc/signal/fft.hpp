#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace maeloc::signal {

using Spectrum = std::vector<std::complex<double>>;

/// Smallest power of two >= n.
std::size_t next_pow2(std::size_t n);

/// Real-to-half-complex FFT of `x` zero-padded to `nfft` (nfft/2 + 1 bins).
Spectrum rfft(std::span<const double> x, std::size_t nfft);

/// Inverse of rfft, scaled by 1/nfft so irfft(rfft(x)) == x.
std::vector<double> irfft(const Spectrum& spec, std::size_t nfft);

/// Linear convolution via FFT; output length a.size() + b.size() - 1.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

}  // namespace maeloc::signal
