#include "cesrnn/network.hpp"

#include "cesrnn/errors.hpp"
#include "cesrnn/es_level.hpp"
#include "cesrnn/preprocess.hpp"

#include <cmath>
#include <numeric>

namespace cesrnn::network {

void NetworkConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError("network config: " + what);
        }
    };
    require(input_window >= 1, "input_window must be positive");
    require(horizon >= 1, "horizon must be positive");
    require(embedding >= 1, "embedding must be positive");
    require(n_exogenous == 0 || embedding < input_window, "embedding size must be smaller than input_window");
    require(context_size >= 1, "context_size must be positive");
    require(hidden1 >= 1 && hidden2 >= 1, "hidden sizes must be positive");
    require(n_exogenous >= 0, "n_exogenous must be nonnegative");
    require(es_warmup >= 1, "es_warmup must be positive");
}

void NetworkConfig::write(KeyValueConfig& out) const {
    out.set("input_window", std::to_string(input_window));
    out.set("horizon", std::to_string(horizon));
    out.set("embedding", std::to_string(embedding));
    out.set("context_size", std::to_string(context_size));
    out.set("hidden1", std::to_string(hidden1));
    out.set("hidden2", std::to_string(hidden2));
    out.set("n_exogenous", std::to_string(n_exogenous));
    out.set("es_warmup", std::to_string(es_warmup));
}

NetworkConfig NetworkConfig::read(const KeyValueConfig& in) {
    NetworkConfig c;
    c.input_window = in.get_int("input_window", c.input_window);
    c.horizon = in.get_int("horizon", c.horizon);
    c.embedding = in.get_int("embedding", c.embedding);
    c.context_size = in.get_int("context_size", c.context_size);
    c.hidden1 = in.get_int("hidden1", c.hidden1);
    c.hidden2 = in.get_int("hidden2", c.hidden2);
    c.n_exogenous = in.get_int("n_exogenous", c.n_exogenous);
    c.es_warmup = in.get_int("es_warmup", c.es_warmup);
    return c;
}

namespace {

void fill_uniform(ad::Parameter& p, std::mt19937_64& rng, double fan_in) {
    const double k = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-k, k);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        p.value().data()[i] = dist(rng);
    }
}

} // namespace

TrackParameters::TrackParameters(const std::string& name, const NetworkConfig& config, int input_size, int head_width)
    : layer1(name + ".layer1", input_size, config.hidden1),
      layer2(name + ".layer2", config.hidden1 + input_size, config.hidden2),
      shortcut(name + ".shortcut", config.hidden2, config.hidden1),
      head_weights(name + ".head.weights", head_width, config.hidden2),
      head_bias(name + ".head.bias", head_width) {
    for (int i = 0; i < config.n_exogenous; ++i) {
        embed_weights.emplace_back(name + ".embed." + std::to_string(i) + ".weights", config.embedding,
                                   config.input_window);
        embed_bias.emplace_back(name + ".embed." + std::to_string(i) + ".bias", config.embedding);
    }
}

void TrackParameters::initialize(std::mt19937_64& rng) {
    for (std::size_t i = 0; i < embed_weights.size(); ++i) {
        fill_uniform(embed_weights[i], rng, static_cast<double>(embed_weights[i].cols()));
        embed_bias[i].value().setZero();
    }
    layer1.initialize(rng);
    layer2.initialize(rng);
    fill_uniform(shortcut, rng, static_cast<double>(shortcut.cols()));
    fill_uniform(head_weights, rng, static_cast<double>(head_weights.cols()));
    head_bias.value().setZero();
}

std::vector<ad::Parameter*> TrackParameters::parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t i = 0; i < embed_weights.size(); ++i) {
        out.push_back(&embed_weights[i]);
        out.push_back(&embed_bias[i]);
    }
    for (ad::Parameter* p : layer1.parameters()) {
        out.push_back(p);
    }
    for (ad::Parameter* p : layer2.parameters()) {
        out.push_back(p);
    }
    out.push_back(&shortcut);
    out.push_back(&head_weights);
    out.push_back(&head_bias);
    return out;
}

SeriesParameters::SeriesParameters(const std::string& coin_id, const NetworkConfig& config)
    : exo_modulation("series." + coin_id + ".exo_modulation", config.embedded_size()),
      context_modulation("series." + coin_id + ".context_modulation", config.context_size),
      alpha_logit("series." + coin_id + ".alpha_logit", 1) {
    exo_modulation.value().setOnes();
    context_modulation.value().setOnes();
}

std::vector<ad::Parameter*> SeriesParameters::parameters() {
    return {&exo_modulation, &context_modulation, &alpha_logit};
}

ModelParameters::ModelParameters(NetworkConfig config_, std::vector<std::string> series_ids_,
                                 std::string context_series_)
    : config(config_),
      series_ids(std::move(series_ids_)),
      context_series(std::move(context_series_)),
      main("main", config_, config_.main_input_size(), config_.main_head_width()),
      context("context", config_, config_.context_input_size(), config_.context_head_width()),
      context_alpha_logit("context.alpha_logit", 1) {
    config.validate();
    series.reserve(series_ids.size());
    for (const std::string& id : series_ids) {
        series.emplace_back(id, config);
    }
}

void ModelParameters::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    main.initialize(rng);
    context.initialize(rng);
    for (SeriesParameters& s : series) {
        s.exo_modulation.value().setOnes();
        s.context_modulation.value().setOnes();
        s.alpha_logit.value().setZero();
    }
    context_alpha_logit.value().setZero();
}

std::vector<ad::Parameter*> ModelParameters::parameters() {
    std::vector<ad::Parameter*> out = main.parameters();
    for (ad::Parameter* p : context.parameters()) {
        out.push_back(p);
    }
    for (SeriesParameters& s : series) {
        for (ad::Parameter* p : s.parameters()) {
            out.push_back(p);
        }
    }
    out.push_back(&context_alpha_logit);
    return out;
}

std::optional<std::size_t> ModelParameters::series_index(const std::string& coin_id) const {
    for (std::size_t i = 0; i < series_ids.size(); ++i) {
        if (series_ids[i] == coin_id) {
            return i;
        }
    }
    return std::nullopt;
}

ad::Parameter* ModelParameters::find(const std::string& name) {
    for (ad::Parameter* p : parameters()) {
        if (p->name() == name) {
            return p;
        }
    }
    return nullptr;
}

void ModelParameters::zero_grad() {
    for (ad::Parameter* p : parameters()) {
        p->zero_grad();
    }
}

RecurrentState::RecurrentState(const NetworkConfig& config)
    : attention(config.hidden1, NetworkConfig::dilation1),
      layer1(config.hidden1, NetworkConfig::dilation1),
      layer2(config.hidden2, NetworkConfig::dilation2) {}

void RecurrentState::rebind(ad::Tape& to) {
    attention.rebind(to);
    layer1.rebind(to);
    layer2.rebind(to);
}

ad::Var embed_exo(const ad::Var& blocks, std::vector<ad::Parameter>& weights, std::vector<ad::Parameter>& bias,
                  int block_size) {
    ad::Tape& tape = *blocks.tape();
    const auto n_blocks = static_cast<Eigen::Index>(weights.size());
    if (blocks.size() != n_blocks * block_size || bias.size() != weights.size()) {
        throw ShapeError("embed_exo: expected " + std::to_string(n_blocks) + " blocks of " +
                         std::to_string(block_size) + ", got " + std::to_string(blocks.size()) + " values");
    }
    if (n_blocks == 0) {
        return tape.constant(ad::Vector(0));
    }
    std::vector<ad::Var> parts;
    parts.reserve(weights.size());
    for (Eigen::Index i = 0; i < n_blocks; ++i) {
        const ad::Var block = ad::slice(blocks, i * block_size, block_size);
        const auto k = static_cast<std::size_t>(i);
        parts.push_back(ad::matvec(weights[k], block) + tape.parameter(bias[k]));
    }
    return ad::concat(parts);
}

ad::Var modulate_exo(const ad::Var& embedded, const ad::Var& modulation) {
    if (embedded.size() != modulation.size()) {
        throw ShapeError("modulate_exo: vector of size " + std::to_string(embedded.size()) + " vs modulation of size " +
                         std::to_string(modulation.size()));
    }
    return embedded * modulation;
}

ad::Var modulate_context(const ad::Var& context, const ad::Var& modulation) {
    if (context.size() != modulation.size()) {
        throw ShapeError("modulate_context: vector of size " + std::to_string(context.size()) +
                         " vs modulation of size " + std::to_string(modulation.size()));
    }
    return context * modulation;
}

ad::Var track_forward(TrackParameters& track, const NetworkConfig& /*config*/, const ad::Var& pattern,
                      RecurrentState& state) {
    ad::Tape& tape = *pattern.tape();
    if (pattern.size() != track.layer1.cell.input_size) {
        throw ShapeError("track_forward: pattern has size " + std::to_string(pattern.size()) + ", track expects " +
                         std::to_string(track.layer1.cell.input_size));
    }
    const cells::AttentiveOutput first = cells::adrnn_step(track.layer1, pattern, state.attention, state.layer1);
    state.attention.push(first.attention_cell.h, first.attention_cell.c);
    state.layer1.push(first.cell.h, first.cell.c);

    const ad::Var second_input = ad::concat({first.cell.h, pattern});
    const cells::CellOutput second = cells::drnn_step(track.layer2, second_input, state.layer2);
    state.layer2.push(second.h, second.c);

    const ad::Var joined = second.h + ad::matvec(track.shortcut, first.cell.h);
    return ad::matvec(track.head_weights, joined) + tape.parameter(track.head_bias);
}

MainOutput main_forward(ModelParameters& model, const ad::Var& pattern, RecurrentState& state) {
    if (pattern.size() != model.config.main_input_size()) {
        throw ShapeError("main_forward: pattern has size " + std::to_string(pattern.size()) + ", expected " +
                         std::to_string(model.config.main_input_size()));
    }
    const ad::Var head = track_forward(model.main, model.config, pattern, state);
    const Eigen::Index h = model.config.horizon;
    return {ad::slice(head, 0, h), ad::slice(head, h, h), ad::slice(head, 2 * h, h), ad::slice(head, 3 * h, 1)};
}

ContextOutput context_forward(ModelParameters& model, const ad::Var& pattern, RecurrentState& state) {
    if (pattern.size() != model.config.context_input_size()) {
        throw ShapeError("context_forward: pattern has size " + std::to_string(pattern.size()) + ", expected " +
                         std::to_string(model.config.context_input_size()));
    }
    const ad::Var head = track_forward(model.context, model.config, pattern, state);
    const Eigen::Index u = model.config.context_size;
    return {ad::slice(head, 0, u), ad::slice(head, u, 1)};
}

std::vector<double> training_means(const dataset::CoinSeries& coin, std::ptrdiff_t train_end) {
    const std::ptrdiff_t last_local = std::min(coin.local(train_end), static_cast<std::ptrdiff_t>(coin.length()) - 1);
    if (last_local < 0) {
        throw RangeError("coin `" + coin.coin_id + "` has no data before the end of the training period");
    }
    std::vector<double> means;
    for (const auto& p : coin.exogenous) {
        means.push_back(preprocess::exo_mean(p, dataset::DayRange{0, last_local + 1}));
    }
    return means;
}

PreparedSeries prepare_series(const dataset::CoinSeries& coin, const std::vector<double>& exo_means) {
    if (exo_means.size() != coin.exogenous.size()) {
        throw ShapeError("prepare_series: " + std::to_string(exo_means.size()) + " means for " +
                         std::to_string(coin.exogenous.size()) + " exogenous variables");
    }
    PreparedSeries s;
    s.coin_id = coin.coin_id;
    s.offset = coin.offset;
    s.prices = coin.prices;
    s.exo_means = exo_means;
    for (std::size_t i = 0; i < coin.exogenous.size(); ++i) {
        preprocess::NormalizedExo norm = preprocess::normalize_exo_series(coin.exogenous[i], exo_means[i]);
        s.exogenous.push_back(std::move(norm.values));
        s.degenerate.push_back(norm.degenerate);
    }
    return s;
}

void EngineState::rebind(ad::Tape& to) {
    auto move_run = [&to](TrackRun& run) {
        if (run.level) {
            run.level = to.constant(run.level->value());
        }
        if (run.alpha) {
            run.alpha = to.constant(run.alpha->value());
        }
        run.rnn.rebind(to);
    };
    if (context) {
        move_run(*context);
    }
    for (TrackRun& run : main) {
        move_run(run);
    }
    tape = &to;
}

EngineState make_engine(ModelParameters& model, ad::Tape& tape, const PreparedSeries* context_series,
                        const std::vector<const PreparedSeries*>& main_series) {
    EngineState engine;
    engine.tape = &tape;
    if (context_series != nullptr) {
        TrackRun run;
        run.series = context_series;
        run.rnn = RecurrentState(model.config);
        engine.context = std::move(run);
    }
    for (const PreparedSeries* s : main_series) {
        const auto index = model.series_index(s->coin_id);
        if (!index) {
            throw StateError("series `" + s->coin_id + "` has no trained parameters");
        }
        TrackRun run;
        run.series = s;
        run.param_index = *index;
        run.rnn = RecurrentState(model.config);
        engine.main.push_back(std::move(run));
    }
    return engine;
}

namespace {

// Advances the level of `run` to local day t. Returns true when a level exists.
bool advance_level(EngineState& engine, TrackRun& run, std::ptrdiff_t t, ad::Parameter& alpha_logit,
                   int warmup) {
    ad::Tape& tape = *engine.tape;
    const std::vector<double>& z = run.series->prices;
    if (t < warmup - 1) {
        return false;
    }
    if (t == warmup - 1) {
        const es::LevelState init = es::init_level(std::span<const double>(z.data(), static_cast<std::size_t>(warmup)));
        run.level = tape.constant(init.level);
        run.alpha = ad::sigmoid(tape.parameter(alpha_logit));
    } else {
        if (!run.level || !run.alpha) {
            throw StateError("level state of `" + run.series->coin_id + "` was not initialized");
        }
        run.level = es::level_update(*run.alpha, z[static_cast<std::size_t>(t)], *run.level);
    }
    ++engine.level_updates;
    return true;
}

ad::Var exo_blocks(ad::Tape& tape, const PreparedSeries& s, std::ptrdiff_t t, int n) {
    const auto first = static_cast<std::size_t>(t - n + 1);
    ad::Vector blocks(static_cast<Eigen::Index>(s.exogenous.size()) * n);
    for (std::size_t i = 0; i < s.exogenous.size(); ++i) {
        for (int k = 0; k < n; ++k) {
            blocks[static_cast<Eigen::Index>(i) * n + k] = s.exogenous[i][first + static_cast<std::size_t>(k)];
        }
    }
    return tape.constant(std::move(blocks));
}

ad::Var price_input(ad::Tape& tape, const PreparedSeries& s, std::ptrdiff_t t, int n, const ad::Var& level) {
    const auto first = static_cast<std::size_t>(t - n + 1);
    return preprocess::normalize_input(tape, std::span<const double>(s.prices.data() + first, static_cast<std::size_t>(n)),
                                       level);
}

} // namespace

std::vector<DayOutput> step_day(ModelParameters& model, EngineState& engine, std::ptrdiff_t panel_day) {
    if (engine.tape == nullptr) {
        throw StateError("step_day: engine has no tape");
    }
    ad::Tape& tape = *engine.tape;
    const NetworkConfig& cfg = model.config;
    const int n = cfg.input_window;
    const std::ptrdiff_t network_day = cfg.first_network_day();

    ad::Var context_vector = tape.constant(ad::Vector::Zero(cfg.context_size));
    if (engine.context && engine.context->series->covers(panel_day)) {
        TrackRun& run = *engine.context;
        const std::ptrdiff_t t = panel_day - run.series->offset;
        if (advance_level(engine, run, t, model.context_alpha_logit, cfg.es_warmup) && t >= network_day) {
            const ad::Var x_in = price_input(tape, *run.series, t, n, *run.level);
            const ad::Var embedded =
                embed_exo(exo_blocks(tape, *run.series, t, n), model.context.embed_weights, model.context.embed_bias, n);
            const ad::Var pattern = preprocess::assemble_input(x_in, embedded, *run.level, std::nullopt);
            const ContextOutput out = context_forward(model, pattern, run.rnn);
            context_vector = out.context;
            run.alpha = es::alpha_update(tape.parameter(model.context_alpha_logit), out.delta_alpha);
            ++engine.alpha_updates;
            ++run.network_steps;
        }
    }
    if (engine.zero_context) {
        context_vector = tape.constant(ad::Vector::Zero(cfg.context_size));
    }

    std::vector<DayOutput> outputs;
    for (std::size_t r = 0; r < engine.main.size(); ++r) {
        TrackRun& run = engine.main[r];
        if (!run.series->covers(panel_day)) {
            continue;
        }
        SeriesParameters& sp = model.series[run.param_index];
        const std::ptrdiff_t t = panel_day - run.series->offset;
        if (!advance_level(engine, run, t, sp.alpha_logit, cfg.es_warmup) || t < network_day) {
            continue;
        }
        const ad::Var x_in = price_input(tape, *run.series, t, n, *run.level);
        const ad::Var embedded =
            embed_exo(exo_blocks(tape, *run.series, t, n), model.main.embed_weights, model.main.embed_bias, n);
        const ad::Var exo = modulate_exo(embedded, tape.parameter(sp.exo_modulation));
        const ad::Var context = modulate_context(context_vector, tape.parameter(sp.context_modulation));
        const ad::Var pattern = preprocess::assemble_input(x_in, exo, *run.level, context);
        MainOutput out = main_forward(model, pattern, run.rnn);
        run.alpha = es::alpha_update(tape.parameter(sp.alpha_logit), out.delta_alpha);
        ++engine.alpha_updates;
        ++run.network_steps;
        outputs.push_back(DayOutput{r, t, *run.level, std::move(out)});
    }
    return outputs;
}

} // namespace cesrnn::network
