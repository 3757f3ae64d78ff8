#include "cesrnn/preprocess.hpp"

#include "cesrnn/errors.hpp"

#include <cmath>

namespace cesrnn::preprocess {

std::size_t InputPattern::size() const {
    return x_in.size() + exogenous.size() + 1 + (context ? context->size() : 0);
}

std::vector<double> InputPattern::flatten() const {
    std::vector<double> out;
    out.reserve(size());
    out.insert(out.end(), x_in.begin(), x_in.end());
    out.insert(out.end(), exogenous.begin(), exogenous.end());
    out.push_back(log_level);
    if (context) {
        out.insert(out.end(), context->begin(), context->end());
    }
    return out;
}

std::size_t ForecastBundle::crossings() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < lower.size() && k < upper.size(); ++k) {
        n += lower[k] > upper[k] ? 1 : 0;
    }
    return n;
}

namespace {

void require_positive_level(double level) {
    if (!(level > 0.0)) {
        throw DomainError("level must be positive, got " + std::to_string(level));
    }
}

void require_positive_prices(std::span<const double> z) {
    for (double v : z) {
        if (!(v > 0.0)) {
            throw DomainError("price must be positive, got " + std::to_string(v));
        }
    }
}

} // namespace

std::vector<double> normalize_input(std::span<const double> z, double level) {
    require_positive_level(level);
    require_positive_prices(z);
    std::vector<double> out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        out[k] = std::log(z[k] / level);
    }
    return out;
}

OutputPattern normalize_output(std::span<const double> z, double level) {
    require_positive_level(level);
    require_positive_prices(z);
    OutputPattern out;
    out.x_out.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        out.x_out[k] = z[k] / level;
    }
    return out;
}

std::vector<double> normalize_exo(std::span<const double> p, double p_bar) {
    if (!(p_bar > 0.0)) {
        throw DomainError("exogenous mean must be positive, got " + std::to_string(p_bar));
    }
    std::vector<double> out(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (!(p[k] >= 0.0)) {
            throw DomainError("exogenous value must be nonnegative, got " + std::to_string(p[k]));
        }
        out[k] = std::log10(p[k] / p_bar + 1.0);
    }
    return out;
}

double exo_mean(std::span<const double> p, dataset::DayRange training) {
    if (training.count <= 0) {
        throw ArgumentError("exo_mean: empty training range");
    }
    if (training.first < 0 || training.last() >= static_cast<std::ptrdiff_t>(p.size())) {
        throw RangeError("exo_mean: training range outside the series");
    }
    double total = 0.0;
    for (std::ptrdiff_t d = training.first; d <= training.last(); ++d) {
        total += p[static_cast<std::size_t>(d)];
    }
    return total / static_cast<double>(training.count);
}

NormalizedExo normalize_exo_series(std::span<const double> p, double p_bar) {
    NormalizedExo out;
    out.mean = p_bar;
    if (!(p_bar > 0.0)) {
        out.degenerate = true;
        out.values.assign(p.size(), 0.0);
        return out;
    }
    out.values = normalize_exo(p, p_bar);
    return out;
}

InputPattern assemble_input(std::vector<double> x_in, std::vector<double> exogenous, double level,
                            std::optional<std::vector<double>> context, std::size_t expected_exo,
                            std::optional<std::size_t> expected_context) {
    require_positive_level(level);
    if (exogenous.size() != expected_exo) {
        throw ShapeError("assemble_input: exogenous block has " + std::to_string(exogenous.size()) +
                         " values, expected " + std::to_string(expected_exo));
    }
    if (context.has_value() != expected_context.has_value() ||
        (context && context->size() != *expected_context)) {
        throw ShapeError("assemble_input: context block does not match the configured size");
    }
    InputPattern p;
    p.x_in = std::move(x_in);
    p.exogenous = std::move(exogenous);
    p.log_level = std::log10(level);
    p.context = std::move(context);
    return p;
}

ForecastBundle denormalize(const ForecastBundle& normalized, double level) {
    require_positive_level(level);
    auto map = [level](const std::vector<double>& x) {
        std::vector<double> out(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (!std::isfinite(x[k])) {
                throw NumericError("denormalize: non-finite network output");
            }
            out[k] = std::exp(x[k]) * level;
        }
        return out;
    };
    ForecastBundle out;
    out.point = map(normalized.point);
    out.lower = map(normalized.lower);
    out.upper = map(normalized.upper);
    out.delta_alpha = normalized.delta_alpha;
    return out;
}

ad::Var normalize_input(ad::Tape& tape, std::span<const double> z, const ad::Var& level) {
    require_positive_prices(z);
    ad::Vector log_z(static_cast<Eigen::Index>(z.size()));
    for (std::size_t k = 0; k < z.size(); ++k) {
        log_z[static_cast<Eigen::Index>(k)] = std::log(z[k]);
    }
    return tape.constant(std::move(log_z)) - ad::broadcast(ad::log(level), static_cast<Eigen::Index>(z.size()));
}

ad::Var normalize_target(ad::Tape& tape, std::span<const double> z, const ad::Var& level) {
    return normalize_input(tape, z, level);
}

ad::Var assemble_input(const ad::Var& x_in, const ad::Var& exogenous, const ad::Var& level,
                       const std::optional<ad::Var>& context) {
    const ad::Var log_level = ad::log10(level);
    if (context) {
        return ad::concat({x_in, exogenous, log_level, *context});
    }
    return ad::concat({x_in, exogenous, log_level});
}

} // namespace cesrnn::preprocess
