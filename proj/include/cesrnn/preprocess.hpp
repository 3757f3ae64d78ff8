#pragma once

#include "cesrnn/autodiff.hpp"
#include "cesrnn/dataset.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cesrnn::preprocess {

// Network input for one anchor, in the fixed order
// [x_in, exogenous, log10(level), context].
struct InputPattern {
    std::vector<double> x_in;
    std::vector<double> exogenous;
    double log_level = 0.0;
    std::optional<std::vector<double>> context; // absent for the context track

    std::size_t size() const;
    std::vector<double> flatten() const;
};

// Ratios z / level over the output window.
struct OutputPattern {
    std::vector<double> x_out;
};

// Network output split into its four parts. Values are normalized (log
// space relative to the level) or prices, depending on the stage.
struct ForecastBundle {
    std::vector<double> point;
    std::vector<double> lower;
    std::vector<double> upper;
    double delta_alpha = 0.0;

    std::size_t horizon() const { return point.size(); }
    // Steps where lower > upper.
    std::size_t crossings() const;
};

// log(z / level), componentwise. Throws DomainError for nonpositive inputs.
std::vector<double> normalize_input(std::span<const double> z, double level);

// z / level, componentwise.
OutputPattern normalize_output(std::span<const double> z, double level);

// log10(p / p_bar + 1). Requires p >= 0 and p_bar > 0.
std::vector<double> normalize_exo(std::span<const double> p, double p_bar);

// Mean of p over `training` only. Throws ArgumentError on an empty range.
double exo_mean(std::span<const double> p, dataset::DayRange training);

// A whole exogenous series normalized with its training-period mean. A
// variable whose training mean is zero is emitted as zeros and flagged.
struct NormalizedExo {
    std::vector<double> values;
    double mean = 0.0;
    bool degenerate = false;
};
NormalizedExo normalize_exo_series(std::span<const double> p, double p_bar);

// `context` must be given for the main track and omitted for the context track.
InputPattern assemble_input(std::vector<double> x_in, std::vector<double> exogenous, double level,
                            std::optional<std::vector<double>> context, std::size_t expected_exo,
                            std::optional<std::size_t> expected_context);

// exp(x) * level for point, lower and upper; delta_alpha passes through.
ForecastBundle denormalize(const ForecastBundle& normalized, double level);

// Differentiable forms used by the unroll.
ad::Var normalize_input(ad::Tape& tape, std::span<const double> z, const ad::Var& level);
// Training target: log(z / level) over the output window.
ad::Var normalize_target(ad::Tape& tape, std::span<const double> z, const ad::Var& level);
ad::Var assemble_input(const ad::Var& x_in, const ad::Var& exogenous, const ad::Var& level,
                       const std::optional<ad::Var>& context);

} // namespace cesrnn::preprocess
