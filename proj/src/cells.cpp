#include "cesrnn/cells.hpp"

#include "cesrnn/errors.hpp"

#include <cmath>

namespace cesrnn::cells {

CellParameters::CellParameters(const std::string& name, int input_size_, int hidden_size_)
    : input_size(input_size_),
      hidden_size(hidden_size_),
      weights(name + ".weights", 4 * hidden_size_, input_size_ + 2 * hidden_size_),
      bias(name + ".bias", 4 * hidden_size_) {}

void CellParameters::initialize(std::mt19937_64& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(weights.cols()));
    std::uniform_real_distribution<double> dist(-k, k);
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        weights.value().data()[i] = dist(rng);
    }
    bias.value().setZero();
}

std::vector<ad::Parameter*> CellParameters::parameters() { return {&weights, &bias}; }

AttentiveCellParameters::AttentiveCellParameters(const std::string& name, int input_size, int hidden_size)
    : attention(name + ".attention", input_size, hidden_size),
      projection(name + ".projection", input_size, hidden_size),
      projection_bias(name + ".projection_bias", input_size),
      cell(name + ".cell", input_size, hidden_size) {}

void AttentiveCellParameters::initialize(std::mt19937_64& rng) {
    attention.initialize(rng);
    projection.value().setZero();
    projection_bias.value().setZero();
    cell.initialize(rng);
}

std::vector<ad::Parameter*> AttentiveCellParameters::parameters() {
    return {&attention.weights, &attention.bias, &projection, &projection_bias, &cell.weights, &cell.bias};
}

CellState::CellState(int hidden_size, int dilation) : hidden_(hidden_size), dilation_(dilation) {
    if (hidden_size < 1 || dilation < 1) {
        throw ArgumentError("cell state needs a positive hidden size and dilation");
    }
}

ad::Var CellState::slot(ad::Tape& tape, std::size_t back, bool cell) const {
    if (history_.size() < back) {
        return tape.constant(ad::Vector::Zero(hidden_));
    }
    const auto& entry = history_[history_.size() - back];
    return cell ? entry.second : entry.first;
}

ad::Var CellState::h_recent(ad::Tape& tape) const { return slot(tape, 1, false); }
ad::Var CellState::h_delayed(ad::Tape& tape) const { return slot(tape, static_cast<std::size_t>(dilation_), false); }
ad::Var CellState::c_recent(ad::Tape& tape) const { return slot(tape, 1, true); }
ad::Var CellState::c_delayed(ad::Tape& tape) const { return slot(tape, static_cast<std::size_t>(dilation_), true); }

void CellState::push(const ad::Var& h, const ad::Var& c) {
    if (h.size() != hidden_ || c.size() != hidden_) {
        throw ShapeError("cell state push: expected size " + std::to_string(hidden_));
    }
    history_.emplace_back(h, c);
    while (history_.size() > static_cast<std::size_t>(dilation_)) {
        history_.pop_front();
    }
    ++steps_;
}

void CellState::rebind(ad::Tape& to) {
    for (auto& [h, c] : history_) {
        h = to.constant(h.value());
        c = to.constant(c.value());
    }
}

CellOutput drnn_step(CellParameters& params, const ad::Var& x, const ad::Var& h_recent, const ad::Var& h_delayed,
                     const ad::Var& c_recent, const ad::Var& c_delayed) {
    const Eigen::Index s = params.hidden_size;
    if (x.size() != params.input_size) {
        throw ShapeError("drnn_step: input has size " + std::to_string(x.size()) + ", cell expects " +
                         std::to_string(params.input_size));
    }
    if (h_recent.size() != s || h_delayed.size() != s || c_recent.size() != s || c_delayed.size() != s) {
        throw ShapeError("drnn_step: state size does not match hidden size " + std::to_string(s));
    }
    ad::Tape& tape = *x.tape();
    const ad::Var u = ad::concat({x, h_recent, h_delayed});
    const ad::Var pre = ad::matvec(params.weights, u) + tape.parameter(params.bias);

    const ad::Var fusion = ad::sigmoid(ad::slice(pre, 0, s));
    const ad::Var input = ad::sigmoid(ad::slice(pre, s, s));
    const ad::Var candidate = ad::tanh(ad::slice(pre, 2 * s, s));
    const ad::Var output = ad::sigmoid(ad::slice(pre, 3 * s, s));

    const ad::Var c_mix = c_delayed + fusion * (c_recent - c_delayed);
    const ad::Var c_new = c_mix + input * (candidate - c_mix);
    const ad::Var h_new = output * ad::tanh(c_new);
    return {h_new, c_new};
}

CellOutput drnn_step(CellParameters& params, const ad::Var& x, const CellState& state) {
    ad::Tape& tape = *x.tape();
    return drnn_step(params, x, state.h_recent(tape), state.h_delayed(tape), state.c_recent(tape),
                     state.c_delayed(tape));
}

AttentiveOutput adrnn_step(AttentiveCellParameters& params, const ad::Var& x, const CellState& state_a,
                           const CellState& state_b) {
    if (state_a.dilation() != state_b.dilation()) {
        throw ShapeError("adrnn_step: attention and main cells must share a dilation");
    }
    ad::Tape& tape = *x.tape();
    AttentiveOutput out;
    out.attention_cell = drnn_step(params.attention, x, state_a);
    const ad::Var m = ad::matvec(params.projection, out.attention_cell.h) + tape.parameter(params.projection_bias);
    out.attention = ad::affine(ad::sigmoid(m), 2.0, 0.0);
    out.cell = drnn_step(params.cell, x * out.attention, state_b);
    return out;
}

} // namespace cesrnn::cells
