#include "cesrnn/loss_metrics.hpp"

#include "cesrnn/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace cesrnn::metrics {

void QuantileSpec::validate() const {
    if (!(0.0 < q_low && q_low < q_star && q_star < q_high && q_high < 1.0)) {
        throw ConfigError("quantile orders must satisfy 0 < q_low < q_star < q_high < 1");
    }
    if (!(gamma >= 0.0)) {
        throw ConfigError("gamma must be nonnegative");
    }
}

void QuantileSpec::write(KeyValueConfig& out) const {
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out.set(key, buf);
    };
    put("q_star", q_star);
    put("q_low", q_low);
    put("q_high", q_high);
    put("gamma", gamma);
}

QuantileSpec QuantileSpec::read(const KeyValueConfig& in) {
    QuantileSpec s;
    s.q_star = in.get_double("q_star", s.q_star);
    s.q_low = in.get_double("q_low", s.q_low);
    s.q_high = in.get_double("q_high", s.q_high);
    s.gamma = in.get_double("gamma", s.gamma);
    return s;
}

double pinball(double x, double x_hat, double q) {
    if (!(q > 0.0 && q < 1.0)) {
        throw ArgumentError("pinball: quantile order must lie in (0, 1), got " + std::to_string(q));
    }
    return (x - x_hat) * (q - (x < x_hat ? 1.0 : 0.0));
}

double composite_loss(std::span<const double> target, const preprocess::ForecastBundle& bundle,
                      const QuantileSpec& spec) {
    const std::size_t h = target.size();
    if (h == 0 || bundle.point.size() != h || bundle.lower.size() != h || bundle.upper.size() != h) {
        throw ShapeError("composite_loss: target and bundle lengths differ");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
        total += pinball(target[k], bundle.point[k], spec.q_star) +
                 spec.gamma * (pinball(target[k], bundle.lower[k], spec.q_low) +
                               pinball(target[k], bundle.upper[k], spec.q_high));
    }
    return total / static_cast<double>(h);
}

ad::Var composite_loss(const ad::Var& target, const ad::Var& point, const ad::Var& lower, const ad::Var& upper,
                       const QuantileSpec& spec) {
    if (point.size() != target.size() || lower.size() != target.size() || upper.size() != target.size()) {
        throw ShapeError("composite_loss: target and forecast lengths differ");
    }
    const ad::Var central = ad::pinball(target, point, spec.q_star);
    const ad::Var bounds = ad::pinball(target, lower, spec.q_low) + ad::pinball(target, upper, spec.q_high);
    return ad::mean(central + ad::affine(bounds, spec.gamma, 0.0));
}

Metrics compute_metrics(std::span<const double> actuals, std::span<const double> forecasts,
                        std::span<const double> lower, std::span<const double> upper) {
    const std::size_t n = actuals.size();
    if (n == 0 || forecasts.size() != n) {
        throw ArgumentError("compute_metrics: actuals and forecasts must be aligned and nonempty");
    }
    const bool intervals = !lower.empty() || !upper.empty();
    if (intervals && (lower.size() != n || upper.size() != n)) {
        throw ArgumentError("compute_metrics: interval bounds must align with actuals");
    }
    Metrics m;
    m.count = n;
    double abs_pe = 0.0, pe_sum = 0.0, sq = 0.0;
    std::vector<double> pe(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (actuals[i] == 0.0) {
            throw DomainError("compute_metrics: zero actual in a percentage metric");
        }
        const double err = actuals[i] - forecasts[i];
        pe[i] = 100.0 * err / actuals[i];
        abs_pe += std::abs(pe[i]);
        pe_sum += pe[i];
        sq += err * err;
    }
    const double dn = static_cast<double>(n);
    m.mape = abs_pe / dn;
    m.mpe = pe_sum / dn;
    m.rmse = std::sqrt(sq / dn);
    double var = 0.0;
    for (double v : pe) {
        var += (v - m.mpe) * (v - m.mpe);
    }
    m.stdpe = std::sqrt(var / dn);
    if (intervals) {
        std::size_t inside = 0, crossed = 0;
        for (std::size_t i = 0; i < n; ++i) {
            inside += (actuals[i] >= lower[i] && actuals[i] <= upper[i]) ? 1 : 0;
            crossed += lower[i] > upper[i] ? 1 : 0;
        }
        m.coverage = static_cast<double>(inside) / dn;
        m.crossing_rate = static_cast<double>(crossed) / dn;
    }
    return m;
}

const Metrics& MetricsReport::pooled() const { return coin("ALL"); }

const Metrics& MetricsReport::coin(const std::string& id) const {
    for (const MetricsRow& r : rows) {
        if (r.coin == id) {
            return r.metrics;
        }
    }
    throw ArgumentError("metrics report has no row for `" + id + "`");
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out << "coin,horizon,mape,rmse,mpe,stdpe,coverage,crossing_rate\n";
    char buf[256];
    for (const MetricsRow& r : rows) {
        const Metrics& m = r.metrics;
        std::snprintf(buf, sizeof buf, "%s,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.coin.c_str(), r.horizon, m.mape,
                      m.rmse, m.mpe, m.stdpe, m.coverage, m.crossing_rate);
        out << buf;
    }
    return out.str();
}

std::string MetricsReport::to_table() const {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-8s %3s %8s %12s %8s %8s %8s %8s\n", "coin", "h", "MAPE", "RMSE", "MPE", "StdPE",
                  "cover", "cross");
    out << buf;
    for (const MetricsRow& r : rows) {
        const Metrics& m = r.metrics;
        std::snprintf(buf, sizeof buf, "%-8s %3d %8.3f %12.4f %8.3f %8.3f %8.3f %8.3f\n", r.coin.c_str(), r.horizon,
                      m.mape, m.rmse, m.mpe, m.stdpe, m.coverage, m.crossing_rate);
        out << buf;
    }
    return out.str();
}

GwResult gw_test(std::span<const double> loss_a, std::span<const double> loss_b, double significance) {
    if (loss_a.size() != loss_b.size()) {
        throw ArgumentError("gw_test: loss series have different lengths");
    }
    if (loss_a.size() < 30) {
        throw ArgumentError("gw_test: need at least 30 observations, got " + std::to_string(loss_a.size()));
    }
    if (!(significance > 0.0 && significance < 1.0)) {
        throw ArgumentError("gw_test: significance must lie in (0, 1)");
    }
    const std::size_t n = loss_a.size();
    std::vector<double> d(n);
    double mean_d = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        d[t] = loss_a[t] - loss_b[t];
        mean_d += d[t];
    }
    mean_d /= static_cast<double>(n);

    // z_t = d_t * h_{t-1}, h_{t-1} = (1, d_{t-1})
    const std::size_t m = n - 1;
    Eigen::Vector2d zbar = Eigen::Vector2d::Zero();
    Eigen::Matrix2d omega = Eigen::Matrix2d::Zero();
    for (std::size_t t = 1; t < n; ++t) {
        const Eigen::Vector2d z(d[t], d[t] * d[t - 1]);
        zbar += z;
        omega += z * z.transpose();
    }
    zbar /= static_cast<double>(m);
    omega /= static_cast<double>(m);

    // Pseudo-inverse: a constant differential makes omega rank one.
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(omega);
    const Eigen::Vector2d ev = eig.eigenvalues();
    const double cutoff = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Eigen::Vector2d inv = Eigen::Vector2d::Zero();
    for (int i = 0; i < 2; ++i) {
        if (ev[i] > cutoff && ev[i] > 0.0) {
            inv[i] = 1.0 / ev[i];
        }
    }
    const Eigen::Matrix2d omega_pinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();

    GwResult r;
    r.observations = m;
    r.mean_differential = mean_d;
    r.statistic = static_cast<double>(m) * zbar.dot(omega_pinv * zbar);
    if (r.statistic < 0.0) {
        r.statistic = 0.0;
    }
    r.p_value = std::exp(-0.5 * r.statistic); // chi-square(2) survival function
    r.reject = r.p_value < significance;
    if (r.reject) {
        r.favored = mean_d < 0.0 ? Favored::first : (mean_d > 0.0 ? Favored::second : Favored::none);
    }
    return r;
}

std::string GwMatrix::to_csv(const std::string& row_label) const {
    std::ostringstream out;
    out << "horizon";
    for (const std::string& m : models) {
        out << ',' << m;
    }
    out << '\n' << row_label;
    char buf[32];
    for (double p : percent) {
        std::snprintf(buf, sizeof buf, ",%.1f", p);
        out << buf;
    }
    out << '\n';
    return out.str();
}

GwMatrix gw_matrix(const std::vector<std::string>& models,
                   const std::vector<std::vector<std::vector<double>>>& losses, double significance) {
    if (models.size() < 2 || losses.size() != models.size()) {
        throw ArgumentError("gw_matrix: need at least two models with one loss table each");
    }
    const std::size_t coins = losses.front().size();
    for (const auto& per_model : losses) {
        if (per_model.size() != coins) {
            throw ArgumentError("gw_matrix: models cover different numbers of coins");
        }
    }
    GwMatrix out;
    out.models = models;
    out.percent.assign(models.size(), 0.0);
    const double pairs = static_cast<double>((models.size() - 1) * coins);
    for (std::size_t a = 0; a < models.size(); ++a) {
        std::size_t wins = 0;
        for (std::size_t b = 0; b < models.size(); ++b) {
            if (a == b) {
                continue;
            }
            for (std::size_t c = 0; c < coins; ++c) {
                wins += gw_test(losses[a][c], losses[b][c], significance).favored == Favored::first ? 1 : 0;
            }
        }
        out.percent[a] = pairs > 0 ? 100.0 * static_cast<double>(wins) / pairs : 0.0;
    }
    return out;
}

} // namespace cesrnn::metrics
