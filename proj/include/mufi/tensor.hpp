// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode differentiation on an explicit
// tape. Row-major layout, no views; broadcasting only between a tensor and a
// scalar (numel-1) tensor, which keeps every pullback auditable.
//
// Recording model: a Tape is made active for the current thread via
// TapeScope. While active, any op whose inputs carry requires_grad records a
// pullback closure. Adjoints live on the tape, not on tensors, so parameter
// tensors can be shared by concurrent forward passes as long as each thread
// uses its own tape.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mufi/common.hpp"

namespace mufi {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
  public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<Index>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        validate_shape(shape);
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), 0.0);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        validate_shape(shape);
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), v);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, {v}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    Index numel() const { return static_cast<Index>(node_->value.size()); }
    Index dim(std::size_t axis) const { return node_->shape.at(axis); }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    bool is_scalar() const { return numel() == 1; }

    std::span<const double> value() const { return node_->value; }
    std::span<double> mutable_value() { return node_->value; }
    double item() const {
        if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }
    double at(Index i) const { return node_->value.at(static_cast<std::size_t>(i)); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    // Deep copy; detaches from any recorded history.
    Tensor clone() const {
        return Tensor(node_->shape, node_->value, node_->requires_grad);
    }

    const detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> share() const { return node_; }

    std::uint64_t content_hash(std::uint64_t h = kFnvOffset) const {
        h = fnv1a64(node_->shape.data(), node_->shape.size() * sizeof(Index), h);
        h = fnv1a64(node_->value.data(), node_->value.size() * sizeof(double), h);
        return h;
    }

  private:
    static void validate_shape(const Shape& s) {
        if (s.empty()) throw ShapeError("empty shape; scalars use shape [1]");
        for (Index e : s)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    }

    std::shared_ptr<detail::TensorNode> node_;
};

// ----------------------------- tape ---------------------------------------

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void(Tape&)> pullback) {
        records_.push_back(std::move(pullback));
    }

    std::size_t num_ops() const { return records_.size(); }

    // Replays pullbacks in reverse recorded order, seeding d(root)/d(root)=1.
    void backward(const Tensor& root) {
        if (!root.is_scalar())
            throw NumericError("backward requires a scalar root, got shape " +
                               shape_str(root.shape()));
        adjoint_slot(root.node(), 1)[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(*this);
    }

    bool has_grad(const Tensor& t) const { return adjoints_.count(t.node()) != 0; }

    std::span<const double> grad(const Tensor& t) const {
        auto it = adjoints_.find(t.node());
        if (it == adjoints_.end())
            throw NumericError("no gradient recorded for tensor " + shape_str(t.shape()));
        return it->second;
    }

    Tensor grad_tensor(const Tensor& t) const {
        auto it = adjoints_.find(t.node());
        if (it == adjoints_.end()) return Tensor::zeros(t.shape());
        return Tensor(t.shape(), it->second);
    }

    // Adjoint buffer for a node, created zeroed on first touch.
    std::vector<double>& adjoint_slot(const detail::TensorNode* n, std::size_t numel) {
        auto it = adjoints_.find(n);
        if (it == adjoints_.end())
            it = adjoints_.emplace(n, std::vector<double>(numel, 0.0)).first;
        return it->second;
    }

    const std::vector<double>* adjoint_if_any(const detail::TensorNode* n) const {
        auto it = adjoints_.find(n);
        return it == adjoints_.end() ? nullptr : &it->second;
    }

  private:
    std::vector<std::function<void(Tape&)>> records_;
    std::unordered_map<const detail::TensorNode*, std::vector<double>> adjoints_;
};

namespace detail {
inline Tape*& active_tape_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
}
}  // namespace detail

inline Tape* Tape::active() { return detail::active_tape_slot(); }

class TapeScope {
  public:
    explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
        detail::active_tape_slot() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// ----------------------------- op helpers ----------------------------------

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Fetches the output adjoint if it exists; pullbacks are no-ops for outputs
// never touched by the backward sweep.
inline const std::vector<double>* out_adjoint(Tape& tape, const std::shared_ptr<TensorNode>& out) {
    return tape.adjoint_if_any(out.get());
}

inline std::vector<double>* in_slot(Tape& tape, const std::shared_ptr<TensorNode>& in) {
    if (!in->requires_grad) return nullptr;
    return &tape.adjoint_slot(in.get(), in->value.size());
}

}  // namespace detail

// ----------------------------- primitive ops -------------------------------

namespace ops_detail {

enum class Ew { Add, Sub, Mul };

inline Tensor ewise(const Tensor& a, const Tensor& b, Ew kind, const char* name) {
    const bool a_scalar = a.is_scalar(), b_scalar = b.is_scalar();
    if (a.shape() != b.shape() && !a_scalar && !b_scalar)
        throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    const Index n = shape_numel(out_shape);
    std::vector<double> out(static_cast<std::size_t>(n));
    auto av = a.value(), bv = b.value();
    for (Index i = 0; i < n; ++i) {
        const double x = av[a_scalar ? 0 : static_cast<std::size_t>(i)];
        const double y = bv[b_scalar ? 0 : static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] =
            kind == Ew::Add ? x + y : (kind == Ew::Sub ? x - y : x * y);
    }
    Tensor result(out_shape, std::move(out), a.requires_grad() || b.requires_grad());
    if (detail::should_record({&a, &b})) {
        auto an = a.share(), bn = b.share(), on = result.share();
        Tape::active()->record([an, bn, on, kind, a_scalar, b_scalar](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            const Index n = static_cast<Index>(on->value.size());
            if (auto* da = detail::in_slot(tape, an)) {
                for (Index i = 0; i < n; ++i) {
                    const std::size_t ai = a_scalar ? 0 : static_cast<std::size_t>(i);
                    double gi = (*g)[static_cast<std::size_t>(i)];
                    if (kind == Ew::Mul)
                        gi *= bn->value[b_scalar ? 0 : static_cast<std::size_t>(i)];
                    (*da)[ai] += gi;
                }
            }
            if (auto* db = detail::in_slot(tape, bn)) {
                for (Index i = 0; i < n; ++i) {
                    const std::size_t bi = b_scalar ? 0 : static_cast<std::size_t>(i);
                    double gi = (*g)[static_cast<std::size_t>(i)];
                    if (kind == Ew::Sub) gi = -gi;
                    if (kind == Ew::Mul)
                        gi *= an->value[a_scalar ? 0 : static_cast<std::size_t>(i)];
                    (*db)[bi] += gi;
                }
            }
        });
    }
    return result;
}

template <typename Fwd, typename Dget>
Tensor unary(const Tensor& a, Fwd fwd, Dget dval, const char*) {
    const Index n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    auto av = a.value();
    for (Index i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = fwd(av[static_cast<std::size_t>(i)]);
    Tensor result(a.shape(), std::move(out), a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        Tape::active()->record([an, on, dval](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an)) {
                const std::size_t n = on->value.size();
                for (std::size_t i = 0; i < n; ++i)
                    (*da)[i] += (*g)[i] * dval(an->value[i], on->value[i]);
            }
        });
    }
    return result;
}

}  // namespace ops_detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return ops_detail::ewise(a, b, ops_detail::Ew::Add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return ops_detail::ewise(a, b, ops_detail::Ew::Sub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return ops_detail::ewise(a, b, ops_detail::Ew::Mul, "mul");
}

inline Tensor exp(const Tensor& a) {
    return ops_detail::unary(
        a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; }, "exp");
}

inline Tensor log(const Tensor& a) {
    return ops_detail::unary(
        a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; }, "log");
}

inline Tensor relu(const Tensor& a) {
    return ops_detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Tensor neg(const Tensor& a) {
    return ops_detail::unary(
        a, [](double x) { return -x; }, [](double, double) { return -1.0; }, "neg");
}

inline Tensor mul_scalar(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor add_scalar(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* A = a.value().data();
    const double* B = b.value().data();
    double* C = out.data();
    const bool parallel = m * n * k >= (1 << 17);
    auto kernel = [&](Index r0, Index r1) {
        for (Index i = r0; i < r1; ++i) {
            for (Index p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* brow = B + p * n;
                double* crow = C + i * n;
                for (Index j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    };
    if (parallel)
        ThreadPool::instance().parallel_for(m, kernel);
    else
        kernel(0, m);

    Tensor result(Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad());
    if (detail::should_record({&a, &b})) {
        auto an = a.share(), bn = b.share(), on = result.share();
        Tape::active()->record([an, bn, on, m, n, k](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            const double* G = g->data();
            if (auto* da = detail::in_slot(tape, an)) {
                // dA += G * B^T, row-disjoint over i
                const double* B = bn->value.data();
                double* DA = da->data();
                auto kern = [&](Index r0, Index r1) {
                    for (Index i = r0; i < r1; ++i)
                        for (Index p = 0; p < k; ++p) {
                            const double* grow = G + i * n;
                            const double* brow = B + p * n;
                            double acc = 0.0;
                            for (Index j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            DA[i * k + p] += acc;
                        }
                };
                if (m * n * k >= (1 << 17))
                    ThreadPool::instance().parallel_for(m, kern);
                else
                    kern(0, m);
            }
            if (auto* db = detail::in_slot(tape, bn)) {
                // dB += A^T * G, row-disjoint over p
                const double* A = an->value.data();
                double* DB = db->data();
                auto kern = [&](Index p0, Index p1) {
                    for (Index p = p0; p < p1; ++p)
                        for (Index i = 0; i < m; ++i) {
                            const double aip = A[i * k + p];
                            if (aip == 0.0) continue;
                            const double* grow = G + i * n;
                            double* brow = DB + p * n;
                            for (Index j = 0; j < n; ++j) brow[j] += aip * grow[j];
                        }
                };
                if (m * n * k >= (1 << 17))
                    ThreadPool::instance().parallel_for(k, kern);
                else
                    kern(0, k);
            }
        });
    }
    return result;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
        throw ShapeError("dot expects equal-length vectors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    double acc = 0.0;
    auto av = a.value(), bv = b.value();
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    Tensor result(Shape{1}, {acc}, a.requires_grad() || b.requires_grad());
    if (detail::should_record({&a, &b})) {
        auto an = a.share(), bn = b.share(), on = result.share();
        Tape::active()->record([an, bn, on](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            const double g0 = (*g)[0];
            if (auto* da = detail::in_slot(tape, an))
                for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += g0 * bn->value[i];
            if (auto* db = detail::in_slot(tape, bn))
                for (std::size_t i = 0; i < db->size(); ++i) (*db)[i] += g0 * an->value[i];
        });
    }
    return result;
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.value()) acc += v;
    Tensor result(Shape{1}, {acc}, a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        Tape::active()->record([an, on](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an))
                for (double& d : *da) d += (*g)[0];
        });
    }
    return result;
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    return mul_scalar(sum(a), inv);
}

inline Tensor l2_norm_sq(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.value()) acc += v * v;
    Tensor result(Shape{1}, {acc}, a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        Tape::active()->record([an, on](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an)) {
                const double g0 = (*g)[0];
                for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += 2.0 * g0 * an->value[i];
            }
        });
    }
    return result;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor result(shape, std::vector<double>(a.value().begin(), a.value().end()),
                  a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        Tape::active()->record([an, on](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an))
                for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += (*g)[i];
        });
    }
    return result;
}

// Concatenates along axis 0; all inputs must share trailing dimensions.
inline Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    Index rows = 0;
    for (const Tensor& t : parts) {
        Shape ttail(t.shape().begin() + 1, t.shape().end());
        if (ttail != tail || t.rank() != parts[0].rank())
            throw ShapeError("concat: mismatched shapes " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(t.shape()));
        rows += t.dim(0);
    }
    Shape out_shape = parts[0].shape();
    out_shape[0] = rows;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(shape_numel(out_shape)));
    bool rg = false;
    for (const Tensor& t : parts) {
        out.insert(out.end(), t.value().begin(), t.value().end());
        rg = rg || t.requires_grad();
    }
    Tensor result(std::move(out_shape), std::move(out), rg);
    bool record = false;
    for (const Tensor& t : parts)
        if (t.requires_grad()) record = true;
    if (Tape::active() && record) {
        std::vector<std::shared_ptr<detail::TensorNode>> ins;
        ins.reserve(parts.size());
        for (const Tensor& t : parts) ins.push_back(t.share());
        auto on = result.share();
        Tape::active()->record([ins, on](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            std::size_t offset = 0;
            for (const auto& in : ins) {
                const std::size_t n = in->value.size();
                if (auto* da = detail::in_slot(tape, in))
                    for (std::size_t i = 0; i < n; ++i) (*da)[i] += (*g)[offset + i];
                offset += n;
            }
        });
    }
    return result;
}

inline Tensor concat(std::initializer_list<Tensor> parts) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Row selection along axis 0 (gather). Duplicate indices accumulate in the
// pullback.
inline Tensor index_select(const Tensor& a, std::span<const Index> rows) {
    const Index r = a.dim(0);
    Index row_elems = 1;
    for (int d = 1; d < a.rank(); ++d) row_elems *= a.dim(static_cast<std::size_t>(d));
    for (Index idx : rows)
        if (idx < 0 || idx >= r)
            throw InputError("index_select: row " + std::to_string(idx) + " out of range [0," +
                             std::to_string(r) + ")");
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<Index>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(rows.size() * row_elems));
    auto av = a.value();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(av.begin() + rows[i] * row_elems, row_elems,
                    out.begin() + static_cast<Index>(i) * row_elems);
    Tensor result(std::move(out_shape), std::move(out), a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        std::vector<Index> idx(rows.begin(), rows.end());
        Tape::active()->record([an, on, idx, row_elems](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an)) {
                for (std::size_t i = 0; i < idx.size(); ++i)
                    for (Index j = 0; j < row_elems; ++j)
                        (*da)[static_cast<std::size_t>(idx[i] * row_elems + j)] +=
                            (*g)[i * static_cast<std::size_t>(row_elems) +
                                 static_cast<std::size_t>(j)];
            }
        });
    }
    return result;
}

inline Tensor index_select(const Tensor& a, std::initializer_list<Index> rows) {
    return index_select(a, std::span<const Index>(rows.begin(), rows.size()));
}

// Softmax along one axis of a rank-1 or rank-2 tensor, max-subtracted for
// stability.
inline Tensor softmax(const Tensor& a, int axis) {
    if (a.rank() > 2) throw ShapeError("softmax supports rank-1/2, got " + shape_str(a.shape()));
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " +
                         shape_str(a.shape()));
    const bool rowwise = (a.rank() == 1) || axis == 1;
    const Index slices = a.rank() == 1 ? 1 : (rowwise ? a.dim(0) : a.dim(1));
    const Index len = a.rank() == 1 ? a.numel() : (rowwise ? a.dim(1) : a.dim(0));
    const Index stride = rowwise ? 1 : a.dim(1);
    const Index slice_step = rowwise ? len : 1;

    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    auto av = a.value();
    for (Index s = 0; s < slices; ++s) {
        const Index base = s * slice_step;
        double mx = av[static_cast<std::size_t>(base)];
        for (Index i = 1; i < len; ++i)
            mx = std::max(mx, av[static_cast<std::size_t>(base + i * stride)]);
        double z = 0.0;
        for (Index i = 0; i < len; ++i) {
            const double e = std::exp(av[static_cast<std::size_t>(base + i * stride)] - mx);
            out[static_cast<std::size_t>(base + i * stride)] = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (Index i = 0; i < len; ++i) out[static_cast<std::size_t>(base + i * stride)] *= inv;
    }
    Tensor result(a.shape(), std::move(out), a.requires_grad());
    if (detail::should_record({&a})) {
        auto an = a.share(), on = result.share();
        Tape::active()->record([an, on, slices, len, stride, slice_step](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* da = detail::in_slot(tape, an)) {
                for (Index s = 0; s < slices; ++s) {
                    const Index base = s * slice_step;
                    double dot = 0.0;
                    for (Index i = 0; i < len; ++i) {
                        const std::size_t k = static_cast<std::size_t>(base + i * stride);
                        dot += (*g)[k] * on->value[k];
                    }
                    for (Index i = 0; i < len; ++i) {
                        const std::size_t k = static_cast<std::size_t>(base + i * stride);
                        (*da)[k] += on->value[k] * ((*g)[k] - dot);
                    }
                }
            }
        });
    }
    return result;
}

// mat [R x C] + vec [C], broadcast over rows.
inline Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    if (mat.rank() != 2 || vec.rank() != 1 || mat.dim(1) != vec.numel())
        throw ShapeError("add_rowvec: " + shape_str(mat.shape()) + " + " +
                         shape_str(vec.shape()));
    const Index r = mat.dim(0), c = mat.dim(1);
    std::vector<double> out(static_cast<std::size_t>(r * c));
    auto mv = mat.value(), vv = vec.value();
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i * c + j)] =
                mv[static_cast<std::size_t>(i * c + j)] + vv[static_cast<std::size_t>(j)];
    Tensor result(mat.shape(), std::move(out), mat.requires_grad() || vec.requires_grad());
    if (detail::should_record({&mat, &vec})) {
        auto mn = mat.share(), vn = vec.share(), on = result.share();
        Tape::active()->record([mn, vn, on, r, c](Tape& tape) {
            const auto* g = detail::out_adjoint(tape, on);
            if (!g) return;
            if (auto* dm = detail::in_slot(tape, mn))
                for (std::size_t i = 0; i < dm->size(); ++i) (*dm)[i] += (*g)[i];
            if (auto* dv = detail::in_slot(tape, vn))
                for (Index i = 0; i < r; ++i)
                    for (Index j = 0; j < c; ++j)
                        (*dv)[static_cast<std::size_t>(j)] +=
                            (*g)[static_cast<std::size_t>(i * c + j)];
        });
    }
    return result;
}

// ----------------------------- gradient check ------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_coordinate;
};

// Central finite differences against the tape gradient. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|) per coordinate.
inline GradCheckReport grad_check_report(
    const std::function<Tensor(std::span<Tensor>)>& f, std::span<Tensor> params, double eps) {
    if (eps <= 0.0) throw InputError("grad_check: eps must be positive");

    Tape tape;
    std::vector<std::vector<double>> analytic;
    {
        TapeScope scope(tape);
        Tensor y = f(params);
        tape.backward(y);
    }
    analytic.reserve(params.size());
    for (Tensor& p : params) {
        Tensor g = tape.grad_tensor(p);
        analytic.emplace_back(g.value().begin(), g.value().end());
    }

    auto eval = [&]() {
        Tensor y = f(params);
        if (!y.is_scalar()) throw NumericError("grad_check: f must return a scalar");
        return y.item();
    };

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].mutable_value();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + eps;
            const double fp = eval();
            vals[i] = saved - eps;
            const double fm = eval();
            vals[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                throw NumericError("grad_check: non-finite gradient at param " +
                                   std::to_string(pi) + " coordinate " + std::to_string(i));
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_coordinate =
                    "param " + std::to_string(pi) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

inline double grad_check(const std::function<Tensor(std::span<Tensor>)>& f,
                         std::span<Tensor> params, double eps) {
    return grad_check_report(f, params, eps).max_rel_err;
}

}  // namespace mufi
