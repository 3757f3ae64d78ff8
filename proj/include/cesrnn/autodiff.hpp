#pragma once

// Reverse-mode automatic differentiation over dense double vectors.
//
// A Tape records every operation applied to Var handles together with a
// closure that pushes the output gradient back to the operation's inputs.
// Trainable tensors live in Parameter objects outside the tape; matrix-vector
// products and parameter leaves accumulate straight into Parameter::grad().
//
// Parameters must outlive (and keep a stable address for) any tape that
// references them.

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cesrnn::ad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Eigen::Index rows, Eigen::Index cols = 1);

    const std::string& name() const { return name_; }
    Eigen::Index rows() const { return value_.rows(); }
    Eigen::Index cols() const { return value_.cols(); }
    Eigen::Index size() const { return value_.size(); }

    Matrix& value() { return value_; }
    const Matrix& value() const { return value_; }
    Matrix& grad() { return grad_; }
    const Matrix& grad() const { return grad_; }

    // True once any backward pass has written into grad() since zero_grad().
    bool touched() const { return touched_; }
    void mark_touched() { touched_ = true; }
    void zero_grad();

private:
    std::string name_;
    Matrix value_;
    Matrix grad_;
    bool touched_ = false;
};

class Tape;

class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int index() const { return index_; }

    const Vector& value() const;
    Eigen::Index size() const { return value().size(); }
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, int index) : tape_(tape), index_(index) {}

    Tape* tape_ = nullptr;
    int index_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Vector& output_grad)>;

    // A tape built with record=false computes values only; backward() is then an error.
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Vector value);
    Var constant(double value);
    // Leaf for a (flattened) parameter; its gradient is added to p.grad().
    Var parameter(Parameter& p);

    template <class F>
    Var push(Vector value, F&& backward) {
        const int index = append(std::move(value));
        if (record_) {
            nodes_.back().backward = Backward(std::forward<F>(backward));
        }
        return Var(this, index);
    }

    // Uninitialized vector of size n, reusing storage released by clear().
    Vector take(Eigen::Index n);

    const Vector& value(int index) const { return nodes_[static_cast<std::size_t>(index)].value; }
    void accumulate(int index, const Vector& grad);

    // Seeds d(root)/d(root) = 1 for a scalar root and propagates to every leaf.
    void backward(const Var& root);
    void clear();

private:
    struct Node {
        Vector value;
        Vector grad;
        Backward backward;
    };

    int append(Vector value);
    void recycle(Vector& v);

    bool record_;
    std::vector<Node> nodes_;
    std::vector<std::vector<Vector>> pool_; // released buffers by size
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b); // Hadamard
Var affine(const Var& a, double scale, double shift); // scale * a + shift

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var log10(const Var& a);

// Repeats a size-1 var n times.
Var broadcast(const Var& scalar, Eigen::Index n);
Var sum(const Var& a);
Var mean(const Var& a);

Var matvec(Parameter& w, const Var& x);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(const Var& a, Eigen::Index start, Eigen::Index length);

// Componentwise pinball loss (x - x_hat)(q - 1[x < x_hat]) with a zero
// subgradient at x == x_hat.
Var pinball(const Var& target, const Var& prediction, double q);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

} // namespace cesrnn::ad
