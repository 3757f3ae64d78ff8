#pragma once

#include "cesrnn/autodiff.hpp"
#include "cesrnn/config.hpp"
#include "cesrnn/preprocess.hpp"

#include <span>
#include <string>
#include <vector>

namespace cesrnn::metrics {

// Quantile orders for the point forecast and the two interval bounds, and
// the weight of the interval terms.
struct QuantileSpec {
    double q_star = 0.5;
    double q_low = 0.05;
    double q_high = 0.95;
    double gamma = 0.3;

    // Requires 0 < q_low < q_star < q_high < 1 and gamma >= 0.
    void validate() const;

    void write(KeyValueConfig& out) const;
    static QuantileSpec read(const KeyValueConfig& in);
};

// (x - x_hat) * (q - 1[x < x_hat]). Throws ArgumentError for q outside (0, 1).
double pinball(double x, double x_hat, double q);

// Mean over the h components of
//   rho(x, point, q*) + gamma * (rho(x, lower, q_low) + rho(x, upper, q_high)).
double composite_loss(std::span<const double> target, const preprocess::ForecastBundle& bundle,
                      const QuantileSpec& spec);
ad::Var composite_loss(const ad::Var& target, const ad::Var& point, const ad::Var& lower, const ad::Var& upper,
                       const QuantileSpec& spec);

struct Metrics {
    double mape = 0.0;  // percent
    double rmse = 0.0;  // price units
    double mpe = 0.0;   // percent, signed
    double stdpe = 0.0; // percent, population standard deviation
    double coverage = 0.0;      // share of actuals inside [lower, upper]
    double crossing_rate = 0.0; // share of steps with lower > upper
    std::size_t count = 0;
};

// Percentage errors are 100 * (actual - forecast) / actual. `lower` and
// `upper` may be empty, in which case coverage and crossing rate are zero.
// Throws ArgumentError for empty or misaligned input, DomainError for a zero actual.
Metrics compute_metrics(std::span<const double> actuals, std::span<const double> forecasts,
                        std::span<const double> lower = {}, std::span<const double> upper = {});

struct MetricsRow {
    std::string coin;
    int horizon = 0;
    Metrics metrics;
};

// Per-coin rows followed by a pooled row named "ALL".
struct MetricsReport {
    std::vector<MetricsRow> rows;

    const Metrics& pooled() const;
    const Metrics& coin(const std::string& id) const;
    std::string to_csv() const;   // coin,horizon,mape,rmse,mpe,stdpe,coverage,crossing_rate
    std::string to_table() const; // human-readable
};

enum class Favored { none, first, second };

struct GwResult {
    double statistic = 0.0;
    double p_value = 1.0;
    bool reject = false;
    Favored favored = Favored::none;
    double mean_differential = 0.0; // mean of loss_a - loss_b
    std::size_t observations = 0;
};

// Conditional predictive ability test on d_t = loss_a(t) - loss_b(t) with
// instruments {1, d_{t-1}}: Wald statistic n * zbar' Omega^+ zbar on
// z_t = d_t * (1, d_{t-1}), chi-square with 2 degrees of freedom. The
// favored side is reported only on rejection, by the sign of mean(d).
// Requires equal lengths of at least 30.
GwResult gw_test(std::span<const double> loss_a, std::span<const double> loss_b, double significance = 0.05);

struct GwMatrix {
    std::vector<std::string> models;
    std::vector<double> percent; // per model: share of (opponent, coin) pairs it wins
    std::string to_csv(const std::string& row_label) const;
};

// losses[model][coin][t], aligned across models for each coin.
GwMatrix gw_matrix(const std::vector<std::string>& models,
                   const std::vector<std::vector<std::vector<double>>>& losses, double significance = 0.05);

} // namespace cesrnn::metrics
