#include "cesrnn/autodiff.hpp"

#include "cesrnn/errors.hpp"

#include <cmath>
#include <numbers>

namespace cesrnn::ad {

Parameter::Parameter(std::string name, Eigen::Index rows, Eigen::Index cols)
    : name_(std::move(name)), value_(Matrix::Zero(rows, cols)), grad_(Matrix::Zero(rows, cols)) {}

void Parameter::zero_grad() {
    grad_.setZero();
    touched_ = false;
}

const Vector& Var::value() const {
    if (tape_ == nullptr) {
        throw StateError("use of an unbound autodiff variable");
    }
    return tape_->value(index_);
}

double Var::scalar() const {
    const Vector& v = value();
    if (v.size() != 1) {
        throw ShapeError("scalar() on a variable of size " + std::to_string(v.size()));
    }
    return v[0];
}

Var Tape::constant(Vector value) { return push(std::move(value), nullptr); }

Var Tape::constant(double value) {
    Vector v = take(1);
    v[0] = value;
    return push(std::move(v), nullptr);
}

Var Tape::parameter(Parameter& p) {
    Vector flat = take(p.size());
    flat = Eigen::Map<const Vector>(p.value().data(), p.size());
    return push(std::move(flat), [&p](Tape&, const Vector& g) {
        Eigen::Map<Vector>(p.grad().data(), p.size()) += g;
        p.mark_touched();
    });
}

int Tape::append(Vector value) {
    nodes_.emplace_back();
    nodes_.back().value = std::move(value);
    return static_cast<int>(nodes_.size()) - 1;
}

namespace {
constexpr Eigen::Index kPooledSize = 4096;
}

Vector Tape::take(Eigen::Index n) {
    const auto k = static_cast<std::size_t>(n);
    if (n > 0 && n <= kPooledSize && k < pool_.size() && !pool_[k].empty()) {
        Vector v = std::move(pool_[k].back());
        pool_[k].pop_back();
        return v;
    }
    return Vector(n);
}

void Tape::recycle(Vector& v) {
    const Eigen::Index n = v.size();
    if (n <= 0 || n > kPooledSize) {
        return;
    }
    const auto k = static_cast<std::size_t>(n);
    if (pool_.size() <= k) {
        pool_.resize(k + 1);
    }
    pool_[k].push_back(std::move(v));
}

void Tape::accumulate(int index, const Vector& grad) {
    Node& node = nodes_[static_cast<std::size_t>(index)];
    if (node.grad.size() == 0) {
        node.grad = take(grad.size());
        node.grad = grad;
    } else {
        node.grad += grad;
    }
}

void Tape::backward(const Var& root) {
    if (!record_) {
        throw StateError("backward() on a tape that does not record");
    }
    if (root.tape() != this) {
        throw StateError("backward() root belongs to another tape");
    }
    if (root.size() != 1) {
        throw ShapeError("backward() root must be a scalar");
    }
    for (Node& node : nodes_) {
        recycle(node.grad);
        node.grad.resize(0);
    }
    nodes_[static_cast<std::size_t>(root.index())].grad = Vector::Ones(1);
    for (int i = root.index(); i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.grad.size() == 0 || !node.backward) {
            continue;
        }
        // The closure may accumulate into lower-index nodes only, so this
        // reference stays valid.
        node.backward(*this, node.grad);
    }
}

void Tape::clear() {
    for (Node& node : nodes_) {
        recycle(node.value);
        recycle(node.grad);
    }
    nodes_.clear();
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw StateError("operands live on different tapes");
    }
    return *a.tape();
}

void require_same_size(const Var& a, const Var& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
}

template <class Derived>
Vector make(Tape& t, const Eigen::MatrixBase<Derived>& expr) {
    Vector v = t.take(expr.size());
    v.noalias() = expr;
    return v;
}

} // namespace

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_size(a, b, "add");
    const int ia = a.index(), ib = b.index();
    return t.push(make(t, a.value() + b.value()), [ia, ib](Tape& tp, const Vector& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_size(a, b, "sub");
    const int ia = a.index(), ib = b.index();
    return t.push(make(t, a.value() - b.value()), [ia, ib](Tape& tp, const Vector& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_size(a, b, "mul");
    const int ia = a.index(), ib = b.index();
    return t.push(make(t, a.value().cwiseProduct(b.value())), [ia, ib](Tape& tp, const Vector& g) {
        const Vector ga = g.cwiseProduct(tp.value(ib));
        const Vector gb = g.cwiseProduct(tp.value(ia));
        tp.accumulate(ia, ga);
        tp.accumulate(ib, gb);
    });
}

Var affine(const Var& a, double scale, double shift) {
    Tape& t = *a.tape();
    const int ia = a.index();
    Vector v = make(t, (scale * a.value().array() + shift).matrix());
    return t.push(std::move(v), [ia, scale](Tape& tp, const Vector& g) { tp.accumulate(ia, scale * g); });
}

Var sigmoid(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    const int self = static_cast<int>(t.size());
    Vector y = make(t, a.value().unaryExpr([](double x) {
        // Split by sign so exp never overflows.
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }));
    return t.push(std::move(y), [ia, self](Tape& tp, const Vector& g) {
        const Vector& y = tp.value(self);
        tp.accumulate(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var tanh(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    const int self = static_cast<int>(t.size());
    Vector y = make(t, a.value().array().tanh().matrix());
    return t.push(std::move(y), [ia, self](Tape& tp, const Vector& g) {
        tp.accumulate(ia, (g.array() * (1.0 - tp.value(self).array().square())).matrix());
    });
}

Var exp(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    const int self = static_cast<int>(t.size());
    Vector y = make(t, a.value().array().exp().matrix());
    return t.push(std::move(y), [ia, self](Tape& tp, const Vector& g) {
        tp.accumulate(ia, g.cwiseProduct(tp.value(self)));
    });
}

Var log(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    if ((a.value().array() <= 0.0).any()) {
        throw DomainError("log of a nonpositive value");
    }
    return t.push(make(t, a.value().array().log().matrix()), [ia](Tape& tp, const Vector& g) {
        tp.accumulate(ia, g.cwiseQuotient(tp.value(ia)));
    });
}

Var log10(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    if ((a.value().array() <= 0.0).any()) {
        throw DomainError("log10 of a nonpositive value");
    }
    return t.push(make(t, a.value().array().log10().matrix()), [ia](Tape& tp, const Vector& g) {
        tp.accumulate(ia, (g.array() / (tp.value(ia).array() * std::numbers::ln10)).matrix());
    });
}

Var broadcast(const Var& scalar, Eigen::Index n) {
    Tape& t = *scalar.tape();
    const double s = scalar.scalar();
    const int ia = scalar.index();
    return t.push(Vector::Constant(n, s), [ia](Tape& tp, const Vector& g) {
        tp.accumulate(ia, Vector::Constant(1, g.sum()));
    });
}

Var sum(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.index();
    const Eigen::Index n = a.size();
    return t.push(Vector::Constant(1, a.value().sum()), [ia, n](Tape& tp, const Vector& g) {
        tp.accumulate(ia, Vector::Constant(n, g[0]));
    });
}

Var mean(const Var& a) {
    const Eigen::Index n = a.size();
    if (n == 0) {
        throw ShapeError("mean of an empty vector");
    }
    return affine(sum(a), 1.0 / static_cast<double>(n), 0.0);
}

Var matvec(Parameter& w, const Var& x) {
    Tape& t = *x.tape();
    if (w.cols() != x.size()) {
        throw ShapeError("matvec: " + w.name() + " has " + std::to_string(w.cols()) + " columns, input has " +
                         std::to_string(x.size()));
    }
    const int ix = x.index();
    Vector y = t.take(w.rows());
    y.noalias() = w.value() * x.value();
    return t.push(std::move(y), [&w, ix](Tape& tp, const Vector& g) {
        w.grad().noalias() += g * tp.value(ix).transpose();
        w.mark_touched();
        tp.accumulate(ix, w.value().transpose() * g);
    });
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat of zero parts");
    }
    Tape& t = *parts.front().tape();
    Eigen::Index total = 0;
    for (const Var& p : parts) {
        if (p.tape() != &t) {
            throw StateError("concat operands live on different tapes");
        }
        total += p.size();
    }
    Vector v = t.take(total);
    std::vector<std::pair<int, Eigen::Index>> layout;
    layout.reserve(parts.size());
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
        const Eigen::Index n = p.size();
        v.segment(offset, n) = p.value();
        layout.emplace_back(p.index(), n);
        offset += n;
    }
    return t.push(std::move(v), [layout = std::move(layout)](Tape& tp, const Vector& g) {
        Eigen::Index at = 0;
        for (const auto& [index, n] : layout) {
            tp.accumulate(index, g.segment(at, n));
            at += n;
        }
    });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(const Var& a, Eigen::Index start, Eigen::Index length) {
    if (start < 0 || length < 0 || start + length > a.size()) {
        throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") of size " +
                         std::to_string(a.size()));
    }
    Tape& t = *a.tape();
    const int ia = a.index();
    const Eigen::Index n = a.size();
    return t.push(make(t, a.value().segment(start, length)), [ia, n, start, length](Tape& tp, const Vector& g) {
        Vector full = Vector::Zero(n);
        full.segment(start, length) = g;
        tp.accumulate(ia, full);
    });
}

Var pinball(const Var& target, const Var& prediction, double q) {
    Tape& t = same_tape(target, prediction);
    require_same_size(target, prediction, "pinball");
    const Eigen::Index n = target.size();
    Vector loss(n);
    Vector d_target(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double x = target.value()[k];
        const double xh = prediction.value()[k];
        const double indicator = x < xh ? 1.0 : 0.0;
        loss[k] = (x - xh) * (q - indicator);
        d_target[k] = x == xh ? 0.0 : q - indicator;
    }
    const int it = target.index(), ip = prediction.index();
    return t.push(std::move(loss), [it, ip, d_target = std::move(d_target)](Tape& tp, const Vector& g) {
        const Vector gt = g.cwiseProduct(d_target);
        tp.accumulate(it, gt);
        tp.accumulate(ip, -gt);
    });
}

} // namespace cesrnn::ad
