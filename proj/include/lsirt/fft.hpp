#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace lsirt {

bool is_pow2(std::size_t n);
std::size_t next_pow2(std::size_t n);

/// In-place iterative radix-2 FFT; size must be a power of two.
/// The inverse transform includes the 1/n scaling.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse);

/// O(n^2) DFT for arbitrary sizes (metrics slices are small).
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& a, bool inverse);

/// fft_pow2 when the size allows it, dft otherwise.
std::vector<std::complex<double>> fourier(std::vector<std::complex<double>> a, bool inverse);

}  // namespace lsirt
