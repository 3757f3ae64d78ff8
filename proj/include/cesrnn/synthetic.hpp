#pragma once

#include "cesrnn/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cesrnn::synthetic {

// Sinusoid x trend x multiplicative noise prices. Exogenous variable j is a
// noisy copy of the price `lead_days * (j + 1)` days ahead, scaled, so the
// covariates carry information about the future.
struct PanelSpec {
    int n_series = 3;
    int days = 400;
    int n_exogenous = 2;
    std::uint64_t seed = 1;
    double noise = 0.01;     // sd of the log-price noise
    double exo_noise = 0.02; // sd of the covariate noise
    double trend = 0.002;    // per-day log drift, varied per series
    double amplitude = 0.15; // relative sinusoid amplitude
    int period = 30;         // days, varied per series
    int lead_days = 3;
    int stagger = 0;         // series i starts i * stagger days late
    std::string first_coin = "BTC";
    std::string start_date = "2020-01-01";
};

dataset::SeriesPanel make_panel(const PanelSpec& spec);

std::vector<std::string> coin_names(int count, const std::string& first_coin);

// Geometric random walk exp(cumsum(N(0, sigma))) * start.
std::vector<double> random_walk(std::size_t length, std::uint64_t seed, double sigma = 0.03, double start = 100.0);

} // namespace cesrnn::synthetic
