#pragma once

#include "cesrnn/autodiff.hpp"
#include "cesrnn/cells.hpp"
#include "cesrnn/config.hpp"
#include "cesrnn/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cesrnn::network {

struct NetworkConfig {
    int input_window = 28; // n
    int horizon = 7;       // h
    int embedding = 4;     // d, per exogenous variable
    int context_size = 8;  // u
    int hidden1 = 32;
    int hidden2 = 32;
    int n_exogenous = 0; // N
    int es_warmup = 7;   // w, days averaged for the initial level

    static constexpr int dilation1 = 2; // attentive layer
    static constexpr int dilation2 = 4;

    int embedded_size() const { return embedding * n_exogenous; }
    int main_input_size() const { return input_window + embedded_size() + 1 + context_size; }
    int context_input_size() const { return input_window + embedded_size() + 1; }
    int main_head_width() const { return 3 * horizon + 1; }
    int context_head_width() const { return context_size + 1; }
    // First local day on which the network runs: the input window and the
    // level warm-up must both be complete.
    int first_network_day() const { return std::max(input_window, es_warmup) - 1; }

    // Throws ConfigError when sizes are inconsistent (e.g. embedding >= n).
    void validate() const;

    void write(KeyValueConfig& out) const;
    static NetworkConfig read(const KeyValueConfig& in);

    bool operator==(const NetworkConfig&) const = default;
};

// Shared weights of one track: per-variable embeddings, the attentive
// layer (dilation 2), the plain layer (dilation 4) fed [h1; pattern], the
// shortcut projection of h1 and the affine head.
struct TrackParameters {
    TrackParameters() = default;
    TrackParameters(const std::string& name, const NetworkConfig& config, int input_size, int head_width);

    std::vector<ad::Parameter> embed_weights; // N of d x n
    std::vector<ad::Parameter> embed_bias;    // N of d
    cells::AttentiveCellParameters layer1;
    cells::CellParameters layer2;
    ad::Parameter shortcut; // hidden2 x hidden1
    ad::Parameter head_weights;
    ad::Parameter head_bias;

    void initialize(std::mt19937_64& rng);
    std::vector<ad::Parameter*> parameters();
};

// Per-series trainable state: exogenous modulation p, context modulation g
// and the smoothing-coefficient logit.
struct SeriesParameters {
    SeriesParameters() = default;
    SeriesParameters(const std::string& coin_id, const NetworkConfig& config);

    ad::Parameter exo_modulation;     // d*N, starts at ones
    ad::Parameter context_modulation; // u, starts at ones
    ad::Parameter alpha_logit;        // 1, starts at zero

    std::vector<ad::Parameter*> parameters();
};

// Every trainable tensor of one ensemble member.
struct ModelParameters {
    ModelParameters() = default;
    ModelParameters(NetworkConfig config, std::vector<std::string> series_ids, std::string context_series);

    NetworkConfig config;
    std::vector<std::string> series_ids;
    std::string context_series;

    TrackParameters main;
    TrackParameters context;
    std::vector<SeriesParameters> series;
    ad::Parameter context_alpha_logit;

    void initialize(std::uint64_t seed);
    std::vector<ad::Parameter*> parameters();
    std::optional<std::size_t> series_index(const std::string& coin_id) const;
    ad::Parameter* find(const std::string& name);

    void zero_grad();
};

// Hidden/cell histories of the three cells in one track.
struct RecurrentState {
    RecurrentState() = default;
    explicit RecurrentState(const NetworkConfig& config);

    cells::CellState attention;
    cells::CellState layer1;
    cells::CellState layer2;

    void rebind(ad::Tape& to);
};

// Main head split into (point h, lower h, upper h, delta_alpha 1).
struct MainOutput {
    ad::Var point;
    ad::Var lower;
    ad::Var upper;
    ad::Var delta_alpha;
};

struct ContextOutput {
    ad::Var context; // r, size u
    ad::Var delta_alpha;
};

// Each n-wide block of `blocks` (N*n values) through its own affine n -> d map.
ad::Var embed_exo(const ad::Var& blocks, std::vector<ad::Parameter>& weights, std::vector<ad::Parameter>& bias,
                  int block_size);
ad::Var modulate_exo(const ad::Var& embedded, const ad::Var& modulation);
ad::Var modulate_context(const ad::Var& context, const ad::Var& modulation);

// Runs both layers, the shortcut and the head on an assembled pattern and
// advances `state`. Returns the raw head output.
ad::Var track_forward(TrackParameters& track, const NetworkConfig& config, const ad::Var& pattern,
                      RecurrentState& state);

MainOutput main_forward(ModelParameters& model, const ad::Var& pattern, RecurrentState& state);
ContextOutput context_forward(ModelParameters& model, const ad::Var& pattern, RecurrentState& state);

// One coin in the form the unroll consumes: raw prices plus exogenous
// series normalized with training-period means.
struct PreparedSeries {
    std::string coin_id;
    std::ptrdiff_t offset = 0;
    std::vector<double> prices;
    std::vector<std::vector<double>> exogenous; // normalized, [variable][day]
    std::vector<double> exo_means;
    std::vector<bool> degenerate;

    std::ptrdiff_t length() const { return static_cast<std::ptrdiff_t>(prices.size()); }
    std::ptrdiff_t last_day() const { return offset + length() - 1; }
    bool covers(std::ptrdiff_t day) const { return day >= offset && day <= last_day(); }
};

// Training-period means: days of `coin` up to panel day `train_end`.
std::vector<double> training_means(const dataset::CoinSeries& coin, std::ptrdiff_t train_end);
PreparedSeries prepare_series(const dataset::CoinSeries& coin, const std::vector<double>& exo_means);

// Unroll state of one series on one track.
struct TrackRun {
    const PreparedSeries* series = nullptr;
    std::size_t param_index = 0; // into ModelParameters::series (main track only)
    std::optional<ad::Var> level;
    std::optional<ad::Var> alpha;
    RecurrentState rnn;
    int network_steps = 0;
};

struct EngineState {
    ad::Tape* tape = nullptr;
    std::optional<TrackRun> context;
    std::vector<TrackRun> main;
    // Counters, for diagnostics and tests.
    long level_updates = 0;
    long alpha_updates = 0;
    // When set, replaces the context vector with zeros before modulation.
    bool zero_context = false;

    // Moves every carried var onto `to` as a constant.
    void rebind(ad::Tape& to);
};

EngineState make_engine(ModelParameters& model, ad::Tape& tape, const PreparedSeries* context_series,
                        const std::vector<const PreparedSeries*>& main_series);

struct DayOutput {
    std::size_t run = 0;         // index into EngineState::main
    std::ptrdiff_t anchor = 0;   // local day of the series
    ad::Var level;               // level at the anchor
    MainOutput output;           // normalized
};

// Advances every series covering `panel_day` by one day: the context track
// first (level, pattern, forward, alpha), then each main series with the
// modulated context vector. Returns one output per main series whose
// network ran on this day.
std::vector<DayOutput> step_day(ModelParameters& model, EngineState& engine, std::ptrdiff_t panel_day);

} // namespace cesrnn::network
