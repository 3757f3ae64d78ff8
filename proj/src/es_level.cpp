#include "cesrnn/es_level.hpp"

#include "cesrnn/errors.hpp"

#include <cmath>
#include <numeric>

namespace cesrnn::es {

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

LevelState init_level(std::span<const double> prefix, double alpha_logit) {
    if (prefix.empty()) {
        throw ArgumentError("init_level: empty warm-up prefix");
    }
    for (double z : prefix) {
        if (!(z > 0.0)) {
            throw DomainError("init_level: nonpositive price in warm-up prefix");
        }
    }
    LevelState s;
    s.level = std::accumulate(prefix.begin(), prefix.end(), 0.0) / static_cast<double>(prefix.size());
    s.alpha_logit = alpha_logit;
    s.alpha = sigmoid(alpha_logit);
    return s;
}

LevelState level_update(const LevelState& state, double z) {
    if (!(z > 0.0)) {
        throw DomainError("level_update: price must be positive, got " + std::to_string(z));
    }
    LevelState next = state;
    next.level = state.alpha * z + (1.0 - state.alpha) * state.level;
    return next;
}

LevelState alpha_update(const LevelState& state, double delta_alpha) {
    if (!std::isfinite(delta_alpha)) {
        throw NumericError("alpha_update: non-finite smoothing correction");
    }
    LevelState next = state;
    next.alpha = sigmoid(state.alpha_logit + delta_alpha);
    return next;
}

double alpha_sensitivity(double alpha_logit, double delta_alpha) {
    const double a = sigmoid(alpha_logit + delta_alpha);
    return a * (1.0 - a);
}

ad::Var level_update(const ad::Var& alpha, double z, const ad::Var& level_prev) {
    if (!(z > 0.0)) {
        throw DomainError("level_update: price must be positive, got " + std::to_string(z));
    }
    // alpha * z + (1 - alpha) * l_prev = l_prev + alpha * (z - l_prev)
    const ad::Var gap = ad::affine(level_prev, -1.0, z);
    return level_prev + alpha * gap;
}

ad::Var alpha_update(const ad::Var& alpha_logit, const ad::Var& delta_alpha) {
    if (!std::isfinite(delta_alpha.scalar())) {
        throw NumericError("alpha_update: non-finite smoothing correction");
    }
    return ad::sigmoid(alpha_logit + delta_alpha);
}

} // namespace cesrnn::es
