#include "cesrnn/synthetic.hpp"

#include "cesrnn/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace cesrnn::synthetic {

std::vector<std::string> coin_names(int count, const std::string& first_coin) {
    static const char* pool[] = {"ETH", "LTC", "XRP", "DOGE", "BCH", "DASH", "XMR", "ZEC", "ETC", "VTC",
                                 "FTC", "NMC", "PPC", "RDD", "BLK", "AUR", "NVC", "GRC"};
    std::vector<std::string> out{first_coin};
    int extra = 0;
    for (const char* p : pool) {
        if (static_cast<int>(out.size()) >= count) {
            break;
        }
        if (p != first_coin) {
            out.push_back(p);
        }
    }
    while (static_cast<int>(out.size()) < count) {
        out.push_back("SYN" + std::to_string(extra++));
    }
    out.resize(static_cast<std::size_t>(std::max(count, 0)));
    return out;
}

dataset::SeriesPanel make_panel(const PanelSpec& spec) {
    if (spec.n_series < 1 || spec.days < 2 || spec.n_exogenous < 0 || spec.period < 2) {
        throw ArgumentError("synthetic::make_panel: bad panel size");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::vector<std::string> names = coin_names(spec.n_series, spec.first_coin);
    const int max_lead = spec.lead_days * spec.n_exogenous;
    std::vector<dataset::CoinSeries> coins;
    for (int i = 0; i < spec.n_series; ++i) {
        const double base = 20.0 + 200.0 * unit(rng);
        const double trend = spec.trend * (0.5 + unit(rng)) * (unit(rng) < 0.25 ? -1.0 : 1.0);
        const double period = spec.period * (0.8 + 0.4 * unit(rng));
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double amplitude = spec.amplitude * (0.7 + 0.6 * unit(rng));
        const int length = spec.days - i * spec.stagger;
        if (length < 2) {
            throw ArgumentError("synthetic::make_panel: stagger leaves series " + names[static_cast<std::size_t>(i)] +
                                " empty");
        }
        std::vector<double> path(static_cast<std::size_t>(length + max_lead));
        for (std::size_t t = 0; t < path.size(); ++t) {
            const double td = static_cast<double>(t);
            path[t] = base * std::exp(trend * td + spec.noise * gauss(rng)) *
                      (1.0 + amplitude * std::sin(2.0 * std::numbers::pi * td / period + phase));
        }
        dataset::CoinSeries coin;
        coin.coin_id = names[static_cast<std::size_t>(i)];
        coin.offset = static_cast<std::ptrdiff_t>(i) * spec.stagger;
        coin.prices.assign(path.begin(), path.begin() + length);
        for (int j = 0; j < spec.n_exogenous; ++j) {
            const double scale = std::pow(10.0, j + 2);
            const std::size_t lead = static_cast<std::size_t>(spec.lead_days * (j + 1));
            std::vector<double> p(static_cast<std::size_t>(length));
            for (std::size_t t = 0; t < p.size(); ++t) {
                p[t] = scale * path[t + lead] * std::exp(spec.exo_noise * gauss(rng));
            }
            coin.exogenous.push_back(std::move(p));
        }
        coins.push_back(std::move(coin));
    }
    std::vector<std::string> exo_names;
    for (int j = 0; j < spec.n_exogenous; ++j) {
        exo_names.push_back("exo" + std::to_string(j + 1));
    }
    return dataset::make_panel(dataset::parse_date(spec.start_date), exo_names, std::move(coins));
}

std::vector<double> random_walk(std::size_t length, std::uint64_t seed, double sigma, double start) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    std::vector<double> z(length);
    double log_z = std::log(start);
    for (double& v : z) {
        v = std::exp(log_z);
        log_z += gauss(rng);
    }
    return z;
}

} // namespace cesrnn::synthetic
