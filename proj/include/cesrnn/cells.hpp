#pragma once

#include "cesrnn/autodiff.hpp"

#include <deque>
#include <random>
#include <string>
#include <vector>

namespace cesrnn::cells {

// Weights of one dilated cell. Rows of `weights`/`bias` are the stacked
// gates [fusion; input; candidate; output], each `hidden` rows tall, acting
// on u = [x; h_recent; h_delayed].
struct CellParameters {
    CellParameters() = default;
    CellParameters(const std::string& name, int input_size, int hidden_size);

    int input_size = 0;
    int hidden_size = 0;
    ad::Parameter weights;
    ad::Parameter bias;

    // Uniform in [-k, k], k = 1 / sqrt(fan_in); biases zero.
    void initialize(std::mt19937_64& rng);
    std::vector<ad::Parameter*> parameters();
};

// Attention cell A, its projection onto the input width, and cell B.
struct AttentiveCellParameters {
    AttentiveCellParameters() = default;
    AttentiveCellParameters(const std::string& name, int input_size, int hidden_size);

    CellParameters attention;
    ad::Parameter projection;      // input_size x hidden_size
    ad::Parameter projection_bias; // input_size
    CellParameters cell;

    // Cells as CellParameters::initialize; the projection starts at zero so
    // the initial attention is exactly 1 on every component.
    void initialize(std::mt19937_64& rng);
    std::vector<ad::Parameter*> parameters();
};

// Rolling history of one cell's (h, c) outputs. Before `dilation` steps have
// been taken, the delayed slot reads the zero vector; before the first step,
// so does the recent slot.
class CellState {
public:
    CellState() = default;
    CellState(int hidden_size, int dilation);

    int hidden_size() const { return hidden_; }
    int dilation() const { return dilation_; }
    std::size_t steps() const { return steps_; }

    ad::Var h_recent(ad::Tape& tape) const;
    ad::Var h_delayed(ad::Tape& tape) const;
    ad::Var c_recent(ad::Tape& tape) const;
    ad::Var c_delayed(ad::Tape& tape) const;

    void push(const ad::Var& h, const ad::Var& c);

    // Re-creates every stored var as a constant on `to`, cutting the graph.
    void rebind(ad::Tape& to);

private:
    ad::Var slot(ad::Tape& tape, std::size_t back, bool cell) const;

    int hidden_ = 0;
    int dilation_ = 1;
    std::size_t steps_ = 0;
    std::deque<std::pair<ad::Var, ad::Var>> history_; // most recent last
};

struct CellOutput {
    ad::Var h;
    ad::Var c;
};

// One step of the dilated cell:
//   f = sig(W_f u + b_f), c_mix = f * c_recent + (1 - f) * c_delayed
//   i = sig(W_i u + b_i), c_hat = tanh(W_c u + b_c), o = sig(W_o u + b_o)
//   c = (1 - i) * c_mix + i * c_hat, h = o * tanh(c)
// Throws ShapeError on mismatched sizes.
CellOutput drnn_step(CellParameters& params, const ad::Var& x, const ad::Var& h_recent, const ad::Var& h_delayed,
                     const ad::Var& c_recent, const ad::Var& c_delayed);
CellOutput drnn_step(CellParameters& params, const ad::Var& x, const CellState& state);

struct AttentiveOutput {
    CellOutput attention_cell;
    CellOutput cell;
    ad::Var attention; // 2 * sigmoid(m), in (0, 2)
};

// Cell A reads x; its projected output m sets the attention a = 2 sig(m);
// cell B reads x * a. States are not advanced here.
AttentiveOutput adrnn_step(AttentiveCellParameters& params, const ad::Var& x, const CellState& state_a,
                           const CellState& state_b);

} // namespace cesrnn::cells
