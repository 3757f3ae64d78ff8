#pragma once

#include "cesrnn/autodiff.hpp"

#include <span>

namespace cesrnn::es {

double sigmoid(double x);

// Dynamic exponential-smoothing level: l = alpha * z + (1 - alpha) * l_prev,
// with alpha = sigmoid(alpha_logit + correction) re-derived every step.
struct LevelState {
    double level = 0.0;
    double alpha = 0.5;
    double alpha_logit = 0.0;
};

// Level is the mean of the warm-up prefix; alpha = sigmoid(alpha_logit).
LevelState init_level(std::span<const double> prefix, double alpha_logit = 0.0);

// Throws DomainError for z <= 0.
LevelState level_update(const LevelState& state, double z);

// Throws NumericError for a non-finite correction.
LevelState alpha_update(const LevelState& state, double delta_alpha);

// d alpha / d delta_alpha at the given logit and correction.
double alpha_sensitivity(double alpha_logit, double delta_alpha);

// Differentiable counterparts used inside the network unroll.
ad::Var level_update(const ad::Var& alpha, double z, const ad::Var& level_prev);
ad::Var alpha_update(const ad::Var& alpha_logit, const ad::Var& delta_alpha);

} // namespace cesrnn::es
