#include "cesrnn/trainer.hpp"

#include "cesrnn/baselines.hpp"
#include "cesrnn/errors.hpp"
#include "cesrnn/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace cesrnn::trainer {

namespace {

int schedule_at(const std::vector<int>& schedule, int epoch) {
    const auto i = static_cast<std::size_t>(std::max(epoch, 1) - 1);
    return schedule[std::min(i, schedule.size() - 1)];
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

std::vector<int> parse_ints(const std::vector<std::string>& items, const std::string& key) {
    std::vector<int> out;
    for (const std::string& s : items) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(s, &used));
            if (used != s.size()) {
                throw std::invalid_argument(s);
            }
        } catch (const std::exception&) {
            throw ConfigError("`" + key + "` must be a comma-separated list of integers, got `" + s + "`");
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Runs `fn(k)` for k in [0, count) on up to `jobs` threads; rethrows the
// exception of the lowest failing k.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
    jobs = std::clamp(jobs, 1, std::max(count, 1));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(count, 0)));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int k = next++; k < count; k = next++) {
            try {
                fn(k);
            } catch (...) {
                errors[static_cast<std::size_t>(k)] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) {
            pool.emplace_back(worker);
        }
        for (std::thread& t : pool) {
            t.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// Value-only advance over panel days [from, to]. The engine hops between two
// scratch tapes whenever the current one grows past a bound, so memory stays
// bounded. `on_day` sees each day's outputs.
void run_value_only(network::ModelParameters& model, network::EngineState& engine, std::ptrdiff_t from,
                    std::ptrdiff_t to, ad::Tape& a, ad::Tape& b,
                    const std::function<void(std::ptrdiff_t, std::vector<network::DayOutput>&)>& on_day = {}) {
    constexpr std::size_t kMaxNodes = 1 << 15;
    for (std::ptrdiff_t day = from; day <= to; ++day) {
        if (engine.tape != &a && engine.tape != &b) {
            a.clear();
            engine.rebind(a);
        } else if (engine.tape->size() > kMaxNodes) {
            ad::Tape& next = (engine.tape == &a) ? b : a;
            next.clear();
            engine.rebind(next);
        }
        std::vector<network::DayOutput> outputs = network::step_day(model, engine, day);
        if (on_day) {
            on_day(day, outputs);
        }
    }
}

bool loss_anchor(const network::PreparedSeries& s, std::ptrdiff_t t, int loss_start, int h) {
    return t >= loss_start && t + h <= s.length() - 1;
}

ad::Var loss_term(ad::Tape& tape, const network::PreparedSeries& s, const network::DayOutput& out, int h,
                  const metrics::QuantileSpec& q) {
    const auto first = static_cast<std::size_t>(out.anchor + 1);
    const ad::Var target = preprocess::normalize_target(
        tape, std::span<const double>(s.prices.data() + first, static_cast<std::size_t>(h)), out.level);
    return metrics::composite_loss(target, out.output.point, out.output.lower, out.output.upper, q);
}

std::vector<const network::PreparedSeries*> pointers(const TrainingData& data) {
    std::vector<const network::PreparedSeries*> out;
    for (const auto& s : data.series) {
        out.push_back(&s);
    }
    return out;
}

const network::PreparedSeries* context_of(const TrainingData& data) {
    return data.context ? &data.series[*data.context] : nullptr;
}

// Full unroll of every series from panel day 0 on `tape`; mean loss over all
// valid anchors.
ad::Var unrolled_loss(network::ModelParameters& model, const TrainingData& data, const TrainingConfig& config,
                      ad::Tape& tape) {
    network::EngineState engine = network::make_engine(model, tape, context_of(data), pointers(data));
    std::ptrdiff_t last = 0;
    std::ptrdiff_t first = std::numeric_limits<std::ptrdiff_t>::max();
    for (const auto& s : data.series) {
        last = std::max(last, s.last_day());
        first = std::min(first, s.offset);
    }
    const int h = config.network.horizon;
    std::vector<ad::Var> terms;
    for (std::ptrdiff_t day = first; day <= last; ++day) {
        for (const network::DayOutput& out : network::step_day(model, engine, day)) {
            const network::PreparedSeries& s = *engine.main[out.run].series;
            if (loss_anchor(s, out.anchor, config.loss_start(), h)) {
                terms.push_back(loss_term(tape, s, out, h, config.quantiles));
            }
        }
    }
    if (terms.empty()) {
        throw RangeError("no series is long enough to produce a loss term");
    }
    return ad::affine(ad::sum(ad::concat(terms)), 1.0 / static_cast<double>(terms.size()), 0.0);
}

} // namespace

std::string to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "median"; }

Aggregation parse_aggregation(const std::string& text) {
    if (text == "mean") {
        return Aggregation::mean;
    }
    if (text == "median") {
        return Aggregation::median;
    }
    throw ConfigError("aggregation must be `mean` or `median`, got `" + text + "`");
}

int TrainingConfig::batch_size(int epoch) const { return schedule_at(batch_schedule, epoch); }

int TrainingConfig::steps_per_batch(int epoch) const { return schedule_at(steps_schedule, epoch); }

int TrainingConfig::updates(int /*epoch*/) const {
    return updates_per_epoch > 0 ? updates_per_epoch : default_updates(network.horizon);
}

double TrainingConfig::learning_rate_at(int epoch) const {
    if (lr_decay_every <= 0) {
        return learning_rate;
    }
    return learning_rate * std::pow(lr_decay, (epoch - 1) / lr_decay_every);
}

int TrainingConfig::default_updates(int horizon) {
    if (horizon <= 1) {
        return 400;
    }
    if (horizon <= 7) {
        return 175;
    }
    return 60;
}

int TrainingConfig::loss_start() const {
    return std::max({network.input_window, 2 * network::NetworkConfig::dilation2, network.es_warmup});
}

void TrainingConfig::validate(std::size_t panel_series) const {
    network.validate();
    quantiles.validate();
    if (network.horizon < 1) {
        throw ConfigError("horizon must be positive");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be at least 1");
    }
    if (batch_schedule.empty() || steps_schedule.empty()) {
        throw ConfigError("batch and steps schedules must not be empty");
    }
    for (int v : batch_schedule) {
        if (v < 1) {
            throw ConfigError("batch sizes must be positive");
        }
    }
    for (int v : steps_schedule) {
        if (v < 1) {
            throw ConfigError("steps per batch must be positive");
        }
    }
    if (updates_per_epoch < 0) {
        throw ConfigError("updates_per_epoch must be nonnegative (0 selects the horizon default)");
    }
    if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || !(grad_clip >= 0.0)) {
        throw ConfigError("learning rate and decay must be positive");
    }
    if (ensemble_size < 1) {
        throw ConfigError("ensemble_size must be at least 1");
    }
    for (int e = 1; e <= epochs; ++e) {
        if (static_cast<std::size_t>(batch_size(e)) > panel_series) {
            throw ConfigError("batch size " + std::to_string(batch_size(e)) + " in epoch " + std::to_string(e) +
                              " exceeds the " + std::to_string(panel_series) + " trainable series");
        }
    }
}

void TrainingConfig::write(KeyValueConfig& out) const {
    network.write(out);
    quantiles.write(out);
    out.set("epochs", std::to_string(epochs));
    out.set("batch_schedule", join_ints(batch_schedule));
    out.set("steps_schedule", join_ints(steps_schedule));
    out.set("updates_per_epoch", std::to_string(updates_per_epoch));
    out.set("learning_rate", fmt(learning_rate));
    out.set("lr_decay", fmt(lr_decay));
    out.set("lr_decay_every", std::to_string(lr_decay_every));
    out.set("grad_clip", fmt(grad_clip));
    out.set("ensemble_size", std::to_string(ensemble_size));
    out.set("seed", std::to_string(seed));
    out.set("context_series", context_series);
    out.set("aggregation", to_string(aggregation));
}

TrainingConfig TrainingConfig::read(const KeyValueConfig& in) {
    TrainingConfig c;
    c.network = network::NetworkConfig::read(in);
    c.quantiles = metrics::QuantileSpec::read(in);
    c.epochs = in.get_int("epochs", c.epochs);
    if (in.contains("batch_schedule")) {
        c.batch_schedule = parse_ints(in.get_list("batch_schedule"), "batch_schedule");
    }
    if (in.contains("steps_schedule")) {
        c.steps_schedule = parse_ints(in.get_list("steps_schedule"), "steps_schedule");
    }
    c.updates_per_epoch = in.get_int("updates_per_epoch", c.updates_per_epoch);
    c.learning_rate = in.get_double("learning_rate", c.learning_rate);
    c.lr_decay = in.get_double("lr_decay", c.lr_decay);
    c.lr_decay_every = in.get_int("lr_decay_every", c.lr_decay_every);
    c.grad_clip = in.get_double("grad_clip", c.grad_clip);
    c.ensemble_size = in.get_int("ensemble_size", c.ensemble_size);
    const long long seed = in.get_int("seed", static_cast<long long>(c.seed));
    if (seed < 0) {
        throw ConfigError("seed must be nonnegative");
    }
    c.seed = static_cast<std::uint64_t>(seed);
    c.context_series = in.get_string("context_series", c.context_series);
    c.aggregation = parse_aggregation(in.get_string("aggregation", to_string(c.aggregation)));
    return c;
}

void Adam::step(const std::vector<ad::Parameter*>& params, double learning_rate) {
    for (ad::Parameter* p : params) {
        if (!p->touched()) {
            continue;
        }
        Slot& s = slots_[p];
        if (s.t == 0) {
            s.m = ad::Matrix::Zero(p->rows(), p->cols());
            s.v = ad::Matrix::Zero(p->rows(), p->cols());
        }
        ++s.t;
        const ad::Matrix& g = p->grad();
        s.m = beta1_ * s.m + (1.0 - beta1_) * g;
        s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
        p->value().array() -=
            learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + epsilon_);
    }
}

TrainingData prepare_training_data(const dataset::SeriesPanel& panel, const TrainingConfig& config) {
    if (static_cast<std::size_t>(config.network.n_exogenous) != panel.n_exogenous()) {
        throw ConfigError("network expects " + std::to_string(config.network.n_exogenous) +
                          " exogenous variables, panel has " + std::to_string(panel.n_exogenous()));
    }
    TrainingData data;
    for (const dataset::CoinSeries& coin : panel.coins) {
        data.series.push_back(network::prepare_series(coin, network::training_means(coin, panel.last_day())));
    }
    if (!config.context_series.empty()) {
        const auto idx = panel.find(config.context_series);
        if (!idx) {
            throw ConfigError("context series `" + config.context_series + "` is not in the panel");
        }
        data.context = *idx;
    }
    return data;
}

MemberResult train_member(const dataset::SeriesPanel& panel, const TrainingConfig& config, std::uint64_t seed,
                          int member_index) {
    config.validate(panel.coins.size());
    const TrainingData data = prepare_training_data(panel, config);
    const int h = config.network.horizon;
    const int loss_start = config.loss_start();

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < data.series.size(); ++i) {
        if (data.series[i].length() - 1 - h >= loss_start) {
            eligible.push_back(i);
        }
    }
    for (int e = 1; e <= config.epochs; ++e) {
        if (static_cast<std::size_t>(config.batch_size(e)) > eligible.size()) {
            throw ConfigError("batch size " + std::to_string(config.batch_size(e)) + " exceeds the " +
                              std::to_string(eligible.size()) + " series long enough to train on (need more than " +
                              std::to_string(loss_start + h) + " days)");
        }
    }

    std::vector<std::string> ids;
    for (const auto& s : data.series) {
        ids.push_back(s.coin_id);
    }
    MemberResult result;
    network::ModelParameters& model = result.checkpoint.model;
    model = network::ModelParameters(config.network, ids, config.context_series);
    model.initialize(seed);
    const std::vector<ad::Parameter*> params = model.parameters();

    Adam adam;
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
    ad::Tape scratch_a(false), scratch_b(false), tape(true);
    const network::PreparedSeries* context = context_of(data);

    int global = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const int batch = config.batch_size(epoch);
        const int steps = config.steps_per_batch(epoch);
        const int updates = config.updates(epoch);
        const double lr = config.learning_rate_at(epoch);
        double epoch_loss = 0.0;
        for (int u = 0; u < updates; ++u) {
            ++global;
            // J series without replacement: partial Fisher-Yates.
            std::vector<std::size_t> pool = eligible;
            for (int k = 0; k < batch; ++k) {
                std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
                std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
            }
            pool.resize(static_cast<std::size_t>(batch));
            std::sort(pool.begin(), pool.end());

            std::ptrdiff_t lo = std::numeric_limits<std::ptrdiff_t>::max(), hi = 0;
            std::ptrdiff_t begin = context ? context->offset : std::numeric_limits<std::ptrdiff_t>::max();
            std::vector<const network::PreparedSeries*> chosen;
            for (std::size_t i : pool) {
                const auto& s = data.series[i];
                chosen.push_back(&s);
                lo = std::min(lo, s.offset + loss_start);
                hi = std::max(hi, s.offset + s.length() - 1 - h);
                begin = std::min(begin, s.offset);
            }
            auto has_terms = [&](std::ptrdiff_t a, std::ptrdiff_t b) {
                for (const auto* s : chosen) {
                    if (std::max(a, s->offset + loss_start) <= std::min(b, s->offset + s->length() - 1 - h)) {
                        return true;
                    }
                }
                return false;
            };
            std::uniform_int_distribution<std::ptrdiff_t> pick_start(lo, std::max(lo, hi - steps + 1));
            std::ptrdiff_t start = pick_start(rng);
            for (int attempt = 0; attempt < 64 && !has_terms(start, start + steps - 1); ++attempt) {
                start = pick_start(rng);
            }
            if (!has_terms(start, start + steps - 1)) {
                start = chosen.front()->offset + loss_start;
            }
            const std::ptrdiff_t end = std::min(start + steps - 1, hi);

            ad::Var loss;
            try {
                scratch_a.clear();
                network::EngineState engine = network::make_engine(model, scratch_a, context, chosen);
                run_value_only(model, engine, begin, start - 1, scratch_a, scratch_b);

                tape.clear();
                engine.rebind(tape);
                model.zero_grad();
                std::vector<ad::Var> terms;
                for (std::ptrdiff_t day = start; day <= end; ++day) {
                    for (const network::DayOutput& out : network::step_day(model, engine, day)) {
                        const network::PreparedSeries& s = *engine.main[out.run].series;
                        if (loss_anchor(s, out.anchor, loss_start, h)) {
                            terms.push_back(loss_term(tape, s, out, h, config.quantiles));
                        }
                    }
                }
                loss = ad::affine(ad::sum(ad::concat(terms)), 1.0 / static_cast<double>(terms.size()), 0.0);
            } catch (const NumericError& e) {
                // Blown-up parameters surface as non-finite states before the loss exists.
                throw DivergenceError(global, std::string(e.what()) + " (member " + std::to_string(member_index) +
                                                  ", epoch " + std::to_string(epoch) + ")");
            }
            const double value = loss.scalar();
            if (!std::isfinite(value)) {
                throw DivergenceError(global, "non-finite loss (member " + std::to_string(member_index) + ", epoch " +
                                                  std::to_string(epoch) + ")");
            }
            tape.backward(loss);
            double norm2 = 0.0;
            for (const ad::Parameter* p : params) {
                if (p->touched()) {
                    norm2 += p->grad().squaredNorm();
                }
            }
            if (!std::isfinite(norm2)) {
                throw DivergenceError(global, "non-finite gradient (member " + std::to_string(member_index) + ")");
            }
            if (config.grad_clip > 0.0 && norm2 > config.grad_clip * config.grad_clip) {
                const double scale = config.grad_clip / std::sqrt(norm2);
                for (ad::Parameter* p : params) {
                    p->grad() *= scale;
                }
            }
            adam.step(params, lr);
            epoch_loss += value;
            result.updates.push_back(UpdateLog{member_index, epoch, global, batch, steps, value});
        }
        result.epochs.push_back(EpochLog{epoch, batch, steps, updates, epoch_loss / std::max(updates, 1)});
    }

    for (const auto& s : data.series) {
        result.checkpoint.exo_means[s.coin_id] = s.exo_means;
    }
    KeyValueConfig& meta = result.checkpoint.metadata;
    meta.set("member", std::to_string(member_index));
    meta.set("seed", std::to_string(seed));
    meta.set("horizon", std::to_string(h));
    meta.set("epochs", std::to_string(config.epochs));
    meta.set("train_end", dataset::format_date(panel.date_of(panel.last_day())));
    model.zero_grad();
    return result;
}

std::vector<MemberResult> train_ensemble(const dataset::SeriesPanel& panel, const TrainingConfig& config, int jobs) {
    config.validate(panel.coins.size());
    std::vector<MemberResult> members(static_cast<std::size_t>(config.ensemble_size));
    parallel_for(config.ensemble_size, jobs, [&](int k) {
        members[static_cast<std::size_t>(k)] =
            train_member(panel, config, config.seed + static_cast<std::uint64_t>(k), k);
    });
    return members;
}

double panel_loss(network::ModelParameters& model, const TrainingData& data, const TrainingConfig& config) {
    ad::Tape tape(false);
    return unrolled_loss(model, data, config, tape).scalar();
}

GradientCheckReport gradient_check(const TrainingConfig& config, const GradientCheckOptions& options) {
    synthetic::PanelSpec spec;
    spec.n_series = options.series;
    spec.days = options.days;
    spec.n_exogenous = config.network.n_exogenous;
    spec.seed = options.seed;
    spec.noise = 0.05;
    if (!config.context_series.empty()) {
        spec.first_coin = config.context_series;
    }
    const dataset::SeriesPanel panel = synthetic::make_panel(spec);
    const TrainingData data = prepare_training_data(panel, config);

    std::vector<std::string> ids;
    for (const auto& s : data.series) {
        ids.push_back(s.coin_id);
    }
    network::ModelParameters model(config.network, ids, config.context_series);
    model.initialize(options.seed);
    std::mt19937_64 rng(options.seed * 7919 + 17);
    const std::vector<ad::Parameter*> params = model.parameters();
    if (options.zero_parameters) {
        for (ad::Parameter* p : params) {
            p->value().setZero();
        }
    } else {
        // Move the neutral initial values (zero attention projection, unit
        // modulations, zero logits) to generic points.
        std::uniform_real_distribution<double> jitter(-0.3, 0.3);
        for (ad::Parameter* p : params) {
            for (Eigen::Index i = 0; i < p->size(); ++i) {
                p->value().data()[i] += jitter(rng);
            }
        }
    }

    ad::Tape tape(true);
    model.zero_grad();
    tape.backward(unrolled_loss(model, data, config, tape));

    GradientCheckReport report;
    for (ad::Parameter* p : params) {
        ad::Matrix analytic = p->touched() ? p->grad() : ad::Matrix::Zero(p->rows(), p->cols());
        if (p->name() == options.corrupt_tensor) {
            analytic = analytic * 1.1 + ad::Matrix::Constant(p->rows(), p->cols(), 1e-3);
        }
        std::vector<Eigen::Index> entries(static_cast<std::size_t>(p->size()));
        for (Eigen::Index i = 0; i < p->size(); ++i) {
            entries[static_cast<std::size_t>(i)] = i;
        }
        if (options.entries_per_tensor > 0 && entries.size() > static_cast<std::size_t>(options.entries_per_tensor)) {
            std::shuffle(entries.begin(), entries.end(), rng);
            entries.resize(static_cast<std::size_t>(options.entries_per_tensor));
        }
        TensorCheck check;
        check.name = p->name();
        for (Eigen::Index i : entries) {
            double& theta = p->value().data()[i];
            const double saved = theta;
            const double step = options.relative_step * std::max(1.0, std::abs(saved));
            theta = saved + step;
            const double up = panel_loss(model, data, config);
            theta = saved - step;
            const double down = panel_loss(model, data, config);
            theta = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            check.max_relative_error = std::max(check.max_relative_error, std::abs(a - numeric) / denom);
            ++check.checked;
        }
        report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
        if (check.max_relative_error > options.tolerance) {
            report.flagged.push_back(check.name);
        }
        report.tensors.push_back(std::move(check));
    }
    return report;
}

int Ensemble::horizon() const {
    if (members.empty()) {
        throw StateError("ensemble has no trained members");
    }
    return members.front().model.config.horizon;
}

preprocess::ForecastBundle aggregate(const std::vector<preprocess::ForecastBundle>& bundles, Aggregation mode) {
    if (bundles.empty()) {
        throw StateError("aggregate: no member forecasts");
    }
    const std::size_t h = bundles.front().horizon();
    for (const auto& b : bundles) {
        if (b.horizon() != h || b.lower.size() != h || b.upper.size() != h) {
            throw ShapeError("aggregate: member forecasts have different horizons");
        }
    }
    auto combine = [&](auto get) {
        std::vector<double> values;
        for (const auto& b : bundles) {
            values.push_back(get(b));
        }
        if (mode == Aggregation::mean) {
            double s = 0.0;
            for (double v : values) {
                s += v;
            }
            return s / static_cast<double>(values.size());
        }
        std::sort(values.begin(), values.end());
        const std::size_t m = values.size() / 2;
        return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
    };
    preprocess::ForecastBundle out;
    for (std::size_t k = 0; k < h; ++k) {
        out.point.push_back(combine([k](const auto& b) { return b.point[k]; }));
        out.lower.push_back(combine([k](const auto& b) { return b.lower[k]; }));
        out.upper.push_back(combine([k](const auto& b) { return b.upper[k]; }));
    }
    out.delta_alpha = combine([](const auto& b) { return b.delta_alpha; });
    return out;
}

std::map<CoinAnchor, preprocess::ForecastBundle> member_forecasts(const network::Checkpoint& member,
                                                                  const dataset::SeriesPanel& panel,
                                                                  const std::vector<std::ptrdiff_t>& anchors) {
    std::map<CoinAnchor, preprocess::ForecastBundle> out;
    if (anchors.empty()) {
        return out;
    }
    network::ModelParameters model = member.model;
    if (static_cast<std::size_t>(model.config.n_exogenous) != panel.n_exogenous()) {
        throw StateError("checkpoint expects " + std::to_string(model.config.n_exogenous) +
                         " exogenous variables, panel has " + std::to_string(panel.n_exogenous()));
    }
    auto means_of = [&](const std::string& coin) -> const std::vector<double>& {
        const auto it = member.exo_means.find(coin);
        if (it == member.exo_means.end()) {
            throw StateError("checkpoint has no normalization for coin `" + coin + "`");
        }
        return it->second;
    };
    std::vector<network::PreparedSeries> prepared;
    for (const dataset::CoinSeries& coin : panel.coins) {
        if (model.series_index(coin.coin_id)) {
            prepared.push_back(network::prepare_series(coin, means_of(coin.coin_id)));
        }
    }
    std::optional<network::PreparedSeries> context;
    if (!model.context_series.empty()) {
        const auto idx = panel.find(model.context_series);
        if (!idx) {
            throw StateError("context series `" + model.context_series + "` is not in the panel");
        }
        context = network::prepare_series(panel.coins[*idx], means_of(model.context_series));
    }
    std::vector<const network::PreparedSeries*> mains;
    std::ptrdiff_t begin = context ? context->offset : std::numeric_limits<std::ptrdiff_t>::max();
    for (const auto& s : prepared) {
        mains.push_back(&s);
        begin = std::min(begin, s.offset);
    }
    const std::set<std::ptrdiff_t> wanted(anchors.begin(), anchors.end());
    ad::Tape a(false), b(false);
    network::EngineState engine = network::make_engine(model, a, context ? &*context : nullptr, mains);
    run_value_only(model, engine, std::min(begin, *wanted.begin()), *wanted.rbegin(), a, b,
                   [&](std::ptrdiff_t day, std::vector<network::DayOutput>& outputs) {
                       if (!wanted.contains(day)) {
                           return;
                       }
                       for (const network::DayOutput& o : outputs) {
                           preprocess::ForecastBundle norm;
                           const auto& v = o.output;
                           norm.point.assign(v.point.value().begin(), v.point.value().end());
                           norm.lower.assign(v.lower.value().begin(), v.lower.value().end());
                           norm.upper.assign(v.upper.value().begin(), v.upper.value().end());
                           norm.delta_alpha = v.delta_alpha.scalar();
                           out[{engine.main[o.run].series->coin_id, day}] =
                               preprocess::denormalize(norm, o.level.scalar());
                       }
                   });
    return out;
}

namespace {

std::map<CoinAnchor, preprocess::ForecastBundle> ensemble_forecasts(const Ensemble& ensemble,
                                                                    const dataset::SeriesPanel& panel,
                                                                    const std::vector<std::ptrdiff_t>& anchors,
                                                                    int jobs) {
    if (ensemble.members.empty()) {
        throw StateError("ensemble has no trained members");
    }
    std::vector<std::map<CoinAnchor, preprocess::ForecastBundle>> per_member(ensemble.members.size());
    parallel_for(static_cast<int>(ensemble.members.size()), jobs, [&](int k) {
        per_member[static_cast<std::size_t>(k)] =
            member_forecasts(ensemble.members[static_cast<std::size_t>(k)], panel, anchors);
    });
    std::map<CoinAnchor, preprocess::ForecastBundle> out;
    for (const auto& [key, first] : per_member.front()) {
        std::vector<preprocess::ForecastBundle> bundles{first};
        for (std::size_t k = 1; k < per_member.size(); ++k) {
            const auto it = per_member[k].find(key);
            if (it == per_member[k].end()) {
                throw StateError("ensemble members disagree on the forecastable coins");
            }
            bundles.push_back(it->second);
        }
        out[key] = aggregate(bundles, ensemble.aggregation);
    }
    return out;
}

} // namespace

std::map<std::string, preprocess::ForecastBundle> forecast(const Ensemble& ensemble, const dataset::SeriesPanel& panel,
                                                           std::ptrdiff_t anchor_day, int jobs) {
    if (anchor_day < 0 || anchor_day > panel.last_day()) {
        throw RangeError("forecast anchor outside the panel");
    }
    std::map<std::string, preprocess::ForecastBundle> out;
    for (auto& [key, bundle] : ensemble_forecasts(ensemble, panel, {anchor_day}, jobs)) {
        out[key.first] = std::move(bundle);
    }
    return out;
}

BacktestResult score_forecasts(const dataset::SeriesPanel& panel, const dataset::TestSplit& split, int horizon,
                               const std::map<CoinAnchor, preprocess::ForecastBundle>& forecasts,
                               bool with_intervals) {
    BacktestResult result;
    result.horizon = horizon;
    const std::ptrdiff_t test_last = split.anchors.empty() ? panel.last_day() : split.anchors.back() + 1;
    std::vector<double> all_actual, all_point, all_lower, all_upper;
    for (const dataset::CoinSeries& coin : panel.coins) {
        std::vector<double> actual, point, lower, upper;
        for (std::ptrdiff_t anchor : split.anchors) {
            const auto it = forecasts.find({coin.coin_id, anchor});
            if (it == forecasts.end()) {
                continue;
            }
            const preprocess::ForecastBundle& b = it->second;
            if (static_cast<int>(b.horizon()) != horizon) {
                throw ShapeError("forecast for `" + coin.coin_id + "` has the wrong horizon");
            }
            const bool truncated = split.truncated(coin, anchor, horizon);
            double ape = 0.0;
            for (int k = 1; k <= horizon; ++k) {
                const auto i = static_cast<std::size_t>(k - 1);
                ForecastRow row{coin.coin_id, anchor, k, b.point[i], b.lower[i], b.upper[i], std::nullopt, truncated};
                const std::ptrdiff_t day = anchor + k;
                if (coin.covers(day) && day <= test_last) {
                    row.actual = coin.prices[static_cast<std::size_t>(coin.local(day))];
                }
                if (!truncated) {
                    actual.push_back(*row.actual);
                    point.push_back(row.point);
                    lower.push_back(row.lower);
                    upper.push_back(row.upper);
                    ape += 100.0 * std::abs(*row.actual - row.point) / std::abs(*row.actual);
                }
                result.rows.push_back(row);
            }
            if (!truncated) {
                result.losses.push_back(AnchorLoss{coin.coin_id, anchor, ape / horizon});
            }
        }
        if (actual.empty()) {
            continue;
        }
        const std::span<const double> none;
        result.report.rows.push_back(metrics::MetricsRow{
            coin.coin_id, horizon,
            metrics::compute_metrics(actual, point, with_intervals ? std::span<const double>(lower) : none,
                                     with_intervals ? std::span<const double>(upper) : none)});
        all_actual.insert(all_actual.end(), actual.begin(), actual.end());
        all_point.insert(all_point.end(), point.begin(), point.end());
        all_lower.insert(all_lower.end(), lower.begin(), lower.end());
        all_upper.insert(all_upper.end(), upper.begin(), upper.end());
    }
    if (!all_actual.empty()) {
        const std::span<const double> none;
        result.report.rows.push_back(metrics::MetricsRow{
            "ALL", horizon,
            metrics::compute_metrics(all_actual, all_point, with_intervals ? std::span<const double>(all_lower) : none,
                                     with_intervals ? std::span<const double>(all_upper) : none)});
    }
    return result;
}

std::string BacktestResult::forecast_csv(const dataset::SeriesPanel& panel) const {
    std::ostringstream out;
    out << "coin,anchor_date,step,point,lower,upper,actual\n";
    char buf[256];
    for (const ForecastRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%.10g,%.10g,%.10g,", r.coin.c_str(),
                      dataset::format_date(panel.date_of(r.anchor)).c_str(), r.step, r.point, r.lower, r.upper);
        out << buf;
        if (r.actual) {
            std::snprintf(buf, sizeof buf, "%.10g", *r.actual);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string BacktestResult::loss_csv(const dataset::SeriesPanel& panel) const {
    std::ostringstream out;
    out << "coin,anchor_date,loss\n";
    char buf[128];
    for (const AnchorLoss& l : losses) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g\n", l.coin.c_str(),
                      dataset::format_date(panel.date_of(l.anchor)).c_str(), l.loss);
        out << buf;
    }
    return out.str();
}

BacktestResult backtest(const Ensemble& ensemble, const dataset::SeriesPanel& panel, const dataset::TestSplit& split,
                        int jobs) {
    return score_forecasts(panel, split, ensemble.horizon(), ensemble_forecasts(ensemble, panel, split.anchors, jobs));
}

BacktestResult rolling_backtest(const dataset::SeriesPanel& panel, const TrainingConfig& config,
                                const dataset::TestSplit& split, int retrain_every, int jobs) {
    if (retrain_every < 1) {
        throw ArgumentError("retrain_every must be positive");
    }
    std::map<CoinAnchor, preprocess::ForecastBundle> all;
    for (std::size_t i = 0; i < split.anchors.size(); i += static_cast<std::size_t>(retrain_every)) {
        const std::size_t stop = std::min(split.anchors.size(), i + static_cast<std::size_t>(retrain_every));
        const std::vector<std::ptrdiff_t> block(split.anchors.begin() + static_cast<std::ptrdiff_t>(i),
                                                split.anchors.begin() + static_cast<std::ptrdiff_t>(stop));
        const dataset::SeriesPanel train = dataset::truncate_panel(panel, block.front());
        Ensemble ensemble;
        ensemble.aggregation = config.aggregation;
        for (MemberResult& m : train_ensemble(train, config, jobs)) {
            ensemble.members.push_back(std::move(m.checkpoint));
        }
        for (auto& [key, bundle] : ensemble_forecasts(ensemble, panel, block, jobs)) {
            all[key] = std::move(bundle);
        }
    }
    return score_forecasts(panel, split, config.network.horizon, all);
}

BaselineModel parse_baseline(const std::string& text) {
    if (text == "naive") {
        return BaselineModel::naive;
    }
    if (text == "es") {
        return BaselineModel::simple_es;
    }
    throw ArgumentError("baseline model must be `naive` or `es`, got `" + text + "`");
}

BacktestResult baseline_backtest(const dataset::SeriesPanel& panel, const dataset::TestSplit& split, int horizon,
                                 BaselineModel model, double alpha) {
    if (horizon < 1) {
        throw ArgumentError("horizon must be positive");
    }
    std::map<CoinAnchor, preprocess::ForecastBundle> forecasts;
    for (const dataset::CoinSeries& coin : panel.coins) {
        for (std::ptrdiff_t anchor : split.anchors) {
            const std::ptrdiff_t t = coin.local(anchor);
            if (t < 0 || t >= static_cast<std::ptrdiff_t>(coin.length())) {
                continue;
            }
            std::vector<double> f;
            if (model == BaselineModel::naive) {
                if (t < horizon - 1) {
                    continue;
                }
                f = baselines::naive_forecast(coin.prices, t, horizon);
            } else {
                f = baselines::simple_es_forecast(coin.prices, t, horizon, alpha);
            }
            forecasts[{coin.coin_id, anchor}] = preprocess::ForecastBundle{f, f, f, 0.0};
        }
    }
    return score_forecasts(panel, split, horizon, forecasts, false);
}

std::string train_log_csv(const std::vector<MemberResult>& members) {
    std::ostringstream out;
    out << "member,epoch,update,batch_size,steps,loss\n";
    char buf[160];
    for (const MemberResult& m : members) {
        for (const UpdateLog& u : m.updates) {
            std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%d,%.17g\n", u.member, u.epoch, u.update, u.batch_size,
                          u.steps, u.loss);
            out << buf;
        }
    }
    return out.str();
}

void save_run(const std::filesystem::path& dir, const TrainingConfig& config,
              const std::vector<MemberResult>& members) {
    std::filesystem::create_directories(dir);
    KeyValueConfig kv;
    config.write(kv);
    std::ofstream(dir / "config.txt") << kv.to_text();
    for (std::size_t k = 0; k < members.size(); ++k) {
        network::save_checkpoint(dir / ("member_" + std::to_string(k) + ".ckpt"), members[k].checkpoint);
    }
    std::ofstream(dir / "train_log.csv") << train_log_csv(members);
}

TrainingConfig load_run_config(const std::filesystem::path& dir) {
    const std::filesystem::path path = dir / "config.txt";
    if (!std::filesystem::exists(path)) {
        throw StateError("no trained run in " + dir.string() + " (config.txt missing)");
    }
    return TrainingConfig::read(KeyValueConfig::from_file(path));
}

Ensemble load_run(const std::filesystem::path& dir) {
    const TrainingConfig config = load_run_config(dir);
    Ensemble ensemble;
    ensemble.aggregation = config.aggregation;
    for (int k = 0;; ++k) {
        const std::filesystem::path path = dir / ("member_" + std::to_string(k) + ".ckpt");
        if (!std::filesystem::exists(path)) {
            break;
        }
        ensemble.members.push_back(network::load_checkpoint(path));
    }
    if (ensemble.members.empty()) {
        throw StateError("no member checkpoints in " + dir.string());
    }
    return ensemble;
}

} // namespace cesrnn::trainer
