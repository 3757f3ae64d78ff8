#pragma once

#include "cesrnn/checkpoint.hpp"
#include "cesrnn/config.hpp"
#include "cesrnn/dataset.hpp"
#include "cesrnn/loss_metrics.hpp"
#include "cesrnn/network.hpp"
#include "cesrnn/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cesrnn::trainer {

enum class Aggregation { mean, median };

std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& text);

struct TrainingConfig {
    network::NetworkConfig network;
    metrics::QuantileSpec quantiles;

    int epochs = 8;
    // Entry e applies to epoch e + 1; the last entry repeats.
    std::vector<int> batch_schedule{2, 2, 2, 2, 2, 4};
    std::vector<int> steps_schedule{15, 30, 45, 60, 75};
    int updates_per_epoch = 0; // 0: horizon default
    double learning_rate = 1e-3;
    double lr_decay = 0.5;
    int lr_decay_every = 2;
    double grad_clip = 0.0; // global norm; 0 disables

    int ensemble_size = 5;
    std::uint64_t seed = 1;
    std::string context_series = "BTC"; // empty: no context track
    Aggregation aggregation = Aggregation::mean;

    // 1-based epoch.
    int batch_size(int epoch) const;
    int steps_per_batch(int epoch) const;
    int updates(int epoch) const;
    double learning_rate_at(int epoch) const;

    // Midpoints of 300-500 (h = 1), 150-200 (h = 7) and 50-70 (h = 28);
    // other horizons take the nearest preset at or above them.
    static int default_updates(int horizon);

    // Local days [0, loss_start) of a series contribute no loss.
    int loss_start() const;

    // Throws ConfigError; `panel_series` is the number of trainable series.
    void validate(std::size_t panel_series) const;

    void write(KeyValueConfig& out) const;
    static TrainingConfig read(const KeyValueConfig& in);
};

// Adaptive-moment update with per-tensor step counts; tensors that received
// no gradient in an update are left untouched.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    void step(const std::vector<ad::Parameter*>& params, double learning_rate);

private:
    struct Slot {
        ad::Matrix m;
        ad::Matrix v;
        long t = 0;
    };
    double beta1_, beta2_, epsilon_;
    std::map<const ad::Parameter*, Slot> slots_;
};

struct UpdateLog {
    int member = 0;
    int epoch = 0;
    int update = 0; // global, 1-based
    int batch_size = 0;
    int steps = 0;
    double loss = 0.0;
};

struct EpochLog {
    int epoch = 0;
    int batch_size = 0;
    int steps = 0;
    int updates = 0;
    double mean_loss = 0.0;
};

struct MemberResult {
    network::Checkpoint checkpoint;
    std::vector<UpdateLog> updates;
    std::vector<EpochLog> epochs;
};

// Prepared inputs for every coin of a training panel (normalized with the
// panel's own exogenous means).
struct TrainingData {
    std::vector<network::PreparedSeries> series;
    std::optional<std::size_t> context; // index into series
};
TrainingData prepare_training_data(const dataset::SeriesPanel& panel, const TrainingConfig& config);

// Trains one member on every day of `panel`; truncate the panel first to keep
// test data out. Throws DivergenceError on a non-finite loss.
MemberResult train_member(const dataset::SeriesPanel& panel, const TrainingConfig& config, std::uint64_t seed,
                          int member_index = 0);

// Members k = 0..ensemble_size-1 with seed config.seed + k, spread over
// `jobs` threads. Results are ordered by member.
std::vector<MemberResult> train_ensemble(const dataset::SeriesPanel& panel, const TrainingConfig& config, int jobs = 1);

struct GradientCheckOptions {
    std::uint64_t seed = 1;
    int entries_per_tensor = 6; // sampled entries per tensor; <= 0 checks all
    double relative_step = 1e-6;
    double tolerance = 1e-4;
    double floor = 1e-5; // denominator floor of the relative error
    bool zero_parameters = false;
    std::string corrupt_tensor; // adds an offset to this tensor's analytic gradient
    int series = 3;
    int days = 24;
};

struct TensorCheck {
    std::string name;
    std::size_t checked = 0;
    double max_relative_error = 0.0;
};

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::vector<TensorCheck> tensors;
    std::vector<std::string> flagged; // tensors above the tolerance
};

// Analytic gradients of the mean composite loss over a fully unrolled
// synthetic panel against central finite differences.
GradientCheckReport gradient_check(const TrainingConfig& config, const GradientCheckOptions& options = {});

// Mean composite loss over every valid anchor of `panel`, unrolled from day 0.
double panel_loss(network::ModelParameters& model, const TrainingData& data, const TrainingConfig& config);

struct Ensemble {
    std::vector<network::Checkpoint> members;
    Aggregation aggregation = Aggregation::mean;

    int horizon() const;
};

// Elementwise mean (or median) of point, lower and upper; delta_alpha is
// averaged the same way.
preprocess::ForecastBundle aggregate(const std::vector<preprocess::ForecastBundle>& bundles, Aggregation mode);

using CoinAnchor = std::pair<std::string, std::ptrdiff_t>; // coin, panel day

// Price-space bundles of one member at the requested panel days, one causal
// pass from the start of the panel.
std::map<CoinAnchor, preprocess::ForecastBundle> member_forecasts(const network::Checkpoint& member,
                                                                  const dataset::SeriesPanel& panel,
                                                                  const std::vector<std::ptrdiff_t>& anchors);

// Aggregated bundle per coin at `anchor_day`. Coins the ensemble was not
// trained on, or too young to forecast, are absent.
std::map<std::string, preprocess::ForecastBundle> forecast(const Ensemble& ensemble, const dataset::SeriesPanel& panel,
                                                           std::ptrdiff_t anchor_day, int jobs = 1);

struct ForecastRow {
    std::string coin;
    std::ptrdiff_t anchor = 0; // panel day
    int step = 0;              // 1..h
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::optional<double> actual;
    bool truncated = false; // the anchor's output window runs past the data
};

struct AnchorLoss {
    std::string coin;
    std::ptrdiff_t anchor = 0;
    double loss = 0.0; // mean absolute percentage error over the h steps
};

struct BacktestResult {
    int horizon = 0;
    std::vector<ForecastRow> rows;
    std::vector<AnchorLoss> losses; // complete windows only
    metrics::MetricsReport report;

    std::string forecast_csv(const dataset::SeriesPanel& panel) const;
    std::string loss_csv(const dataset::SeriesPanel& panel) const;
};

// Rows for every (coin, anchor) with a forecast; metrics per coin and pooled
// ("ALL") over complete windows. `forecasts` maps (coin, anchor) to bundles.
// Without intervals, coverage and crossing rate are reported as zero.
BacktestResult score_forecasts(const dataset::SeriesPanel& panel, const dataset::TestSplit& split, int horizon,
                               const std::map<CoinAnchor, preprocess::ForecastBundle>& forecasts,
                               bool with_intervals = true);

BacktestResult backtest(const Ensemble& ensemble, const dataset::SeriesPanel& panel, const dataset::TestSplit& split,
                        int jobs = 1);

// Retrains every `retrain_every` anchors on the data before the block.
BacktestResult rolling_backtest(const dataset::SeriesPanel& panel, const TrainingConfig& config,
                                const dataset::TestSplit& split, int retrain_every, int jobs = 1);

enum class BaselineModel { naive, simple_es };
BaselineModel parse_baseline(const std::string& text);

BacktestResult baseline_backtest(const dataset::SeriesPanel& panel, const dataset::TestSplit& split, int horizon,
                                 BaselineModel model, double alpha = 0.3);

// Run directory: member_<k>.ckpt, config.txt, train_log.csv.
void save_run(const std::filesystem::path& dir, const TrainingConfig& config,
              const std::vector<MemberResult>& members);
Ensemble load_run(const std::filesystem::path& dir);
TrainingConfig load_run_config(const std::filesystem::path& dir);
std::string train_log_csv(const std::vector<MemberResult>& members);

} // namespace cesrnn::trainer
