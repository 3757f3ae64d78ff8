#include "cesrnn/baselines.hpp"

#include "cesrnn/errors.hpp"

#include <string>

namespace cesrnn::baselines {

std::vector<double> naive_forecast(std::span<const double> z, std::ptrdiff_t anchor, int h) {
    if (h < 1) {
        throw ArgumentError("naive_forecast: horizon must be positive");
    }
    if (anchor < h - 1 || anchor >= static_cast<std::ptrdiff_t>(z.size())) {
        throw RangeError("naive_forecast: anchor " + std::to_string(anchor) + " lacks " + std::to_string(h) +
                         " days of history");
    }
    std::vector<double> out(static_cast<std::size_t>(h));
    for (int k = 1; k <= h; ++k) {
        out[static_cast<std::size_t>(k - 1)] = z[static_cast<std::size_t>(anchor + k - h)];
    }
    return out;
}

std::vector<double> simple_es_forecast(std::span<const double> z, std::ptrdiff_t anchor, int h, double alpha) {
    if (h < 1) {
        throw ArgumentError("simple_es_forecast: horizon must be positive");
    }
    // alpha = 1 is admitted so that the baseline degenerates to "last value".
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ArgumentError("simple_es_forecast: alpha must lie in (0, 1]");
    }
    if (anchor < 0 || anchor >= static_cast<std::ptrdiff_t>(z.size())) {
        throw RangeError("simple_es_forecast: anchor " + std::to_string(anchor) + " outside the series");
    }
    double level = z[0];
    for (std::ptrdiff_t t = 1; t <= anchor; ++t) {
        level = alpha * z[static_cast<std::size_t>(t)] + (1.0 - alpha) * level;
    }
    return std::vector<double>(static_cast<std::size_t>(h), level);
}

} // namespace cesrnn::baselines
