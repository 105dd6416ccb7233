#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace theragan::diffnet {

bool is_power_of_two(std::size_t n);

// Real-input DFT, bins 0..L/2: re[k] = sum x[t] cos(2 pi k t / L),
// im[k] = -sum x[t] sin(2 pi k t / L). Radix-2 FFT when L is a power of
// two, direct evaluation otherwise.
void real_dft(std::span<const double> x, std::span<double> re, std::span<double> im);

// cos/sin of 2 pi m / L for m in [0, L).
struct TwiddleTable {
  explicit TwiddleTable(std::size_t length);
  std::size_t length;
  std::vector<double> cos;
  std::vector<double> sin;
};

}  // namespace theragan::diffnet
