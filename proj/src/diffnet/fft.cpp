#include "theragan/diffnet/fft.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace theragan::diffnet {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

TwiddleTable::TwiddleTable(std::size_t n) : length(n), cos(n), sin(n) {
  for (std::size_t m = 0; m < n; ++m) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    cos[m] = std::cos(angle);
    sin[m] = std::sin(angle);
  }
}

namespace {

void fft_in_place(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < len / 2; ++j) {
        // Twiddles evaluated directly rather than by recurrence to keep
        // rounding error at the 1e-15 level.
        const double a_j = angle * static_cast<double>(j);
        const std::complex<double> w(std::cos(a_j), std::sin(a_j));
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
      }
    }
  }
}

}  // namespace

void real_dft(std::span<const double> x, std::span<double> re, std::span<double> im) {
  const std::size_t n = x.size();
  const std::size_t bins = n / 2 + 1;
  if (is_power_of_two(n)) {
    std::vector<std::complex<double>> a(x.begin(), x.end());
    fft_in_place(a);
    for (std::size_t k = 0; k < bins; ++k) {
      re[k] = a[k].real();
      im[k] = a[k].imag();
    }
    return;
  }
  const TwiddleTable table(n);
  for (std::size_t k = 0; k < bins; ++k) {
    double r = 0.0, i = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t m = (k * t) % n;
      r += x[t] * table.cos[m];
      i -= x[t] * table.sin[m];
    }
    re[k] = r;
    im[k] = i;
  }
}

}  // namespace theragan::diffnet
