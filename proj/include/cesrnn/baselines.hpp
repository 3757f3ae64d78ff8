#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cesrnn::baselines {

// Forecast for day anchor + k is z[anchor + k - h], k = 1..h. `anchor` is the
// zero-based index of the last observed day; requires anchor + 1 >= h.
std::vector<double> naive_forecast(std::span<const double> z, std::ptrdiff_t anchor, int h);

// Fixed-alpha level recursion over z[0..anchor] started at l = z[0]; the
// final level repeated h times. Requires alpha in (0, 1].
std::vector<double> simple_es_forecast(std::span<const double> z, std::ptrdiff_t anchor, int h, double alpha);

} // namespace cesrnn::baselines
