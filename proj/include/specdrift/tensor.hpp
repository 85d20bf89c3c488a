#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "specdrift/errors.hpp"
#include "specdrift/fft.hpp"
#include "specdrift/rng.hpp"

// Minimal deterministic tensor arithmetic with reverse-mode autodiff.
// Tensors are immutable value types holding shared row-major f64 buffers;
// a Tape records backward closures in forward order and replays them in
// reverse. One Tape per training step, single-writer.

namespace specdrift {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Global toggle for post-op finiteness checks. On by default: NaN/Inf after a
// forward op is an error state, not a value to propagate.
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

namespace detail {
inline void check_finite(const std::vector<double>& v, const char* op) {
    if (!finite_checks()) return;
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in forward output");
    }
}
}  // namespace detail

class Tape;

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    bool requires_grad = false;
    Tape* tape = nullptr;
    int64_t node = -1;

    Tensor() : data(std::make_shared<std::vector<double>>()) {}

    size_t numel() const { return shape_numel(shape); }
    size_t ndim() const { return shape.size(); }
    size_t size(size_t axis) const { return shape.at(axis); }
    const std::vector<double>& vals() const { return *data; }
    double at(size_t i) const { return (*data)[i]; }
    double scalar_value() const {
        if (numel() != 1) throw DimensionError("scalar_value: tensor has " + std::to_string(numel()) + " elements");
        return (*data)[0];
    }

    static Tensor from(Shape s, std::vector<double> v) {
        if (shape_numel(s) != v.size())
            throw DimensionError("Tensor::from: shape " + shape_str(s) + " does not match " +
                                 std::to_string(v.size()) + " values");
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<double>>(std::move(v));
        return t;
    }
    static Tensor zeros(Shape s) { return full(std::move(s), 0.0); }
    static Tensor full(Shape s, double v) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<double>>(shape_numel(t.shape), v);
        return t;
    }
    static Tensor scalar(double v) { return from({1}, {v}); }
};

struct ComplexTensor {
    Tensor re;
    Tensor im;
    const Shape& shape() const { return re.shape; }
    size_t numel() const { return re.numel(); }
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int64_t add_node(size_t numel) {
        nodes_.push_back({nullptr, numel});
        grads_.emplace_back();
        return static_cast<int64_t>(nodes_.size()) - 1;
    }
    void set_backward(int64_t node, std::function<void(Tape&)> fn) {
        nodes_[static_cast<size_t>(node)].backward = std::move(fn);
    }

    // Accumulation target for `node`; zero-filled on first touch.
    std::vector<double>& grad_buf(int64_t node) {
        auto& g = grads_[static_cast<size_t>(node)];
        if (g.empty()) g.assign(nodes_[static_cast<size_t>(node)].numel, 0.0);
        return g;
    }
    bool reached(int64_t node) const { return !grads_[static_cast<size_t>(node)].empty(); }

    // Reverse sweep from a scalar root. Each node is visited exactly once, in
    // reverse topological (= reverse recording) order.
    void backward(const Tensor& root, double seed = 1.0) {
        if (root.tape != this || root.node < 0) throw DimensionError("backward: root is not recorded on this tape");
        if (root.numel() != 1) throw DimensionError("backward: root must be scalar");
        grad_buf(root.node)[0] += seed;
        for (int64_t i = root.node; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (!grads_[static_cast<size_t>(i)].empty() && n.backward) n.backward(*this);
        }
    }

    // Gradient of a watched/recorded tensor after backward(); zeros if unreached.
    std::vector<double> grad_of(const Tensor& t) {
        if (t.tape != this || t.node < 0) throw DimensionError("grad_of: tensor is not recorded on this tape");
        return grad_buf(t.node);
    }

    // Register `t` as a differentiable source on this tape.
    Tensor watch(const Tensor& t) {
        Tensor out = t;
        out.tape = this;
        out.requires_grad = true;
        out.node = add_node(t.numel());
        return out;
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        std::function<void(Tape&)> backward;
        size_t numel;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// Flat registry of named learnable arrays with gradient slots. Shared by all
// model modules and the optimizer; iteration order is the sorted name order.
class ParameterStore {
  public:
    struct Param {
        Shape shape;
        std::shared_ptr<std::vector<double>> value;
        std::vector<double> grad;
    };

    Param& define(const std::string& name, Shape shape, std::vector<double> init) {
        if (params_.count(name)) throw ConfigError("parameter already defined: " + name);
        if (shape_numel(shape) != init.size())
            throw DimensionError("parameter " + name + ": shape/init size mismatch");
        Param p;
        p.shape = std::move(shape);
        p.value = std::make_shared<std::vector<double>>(std::move(init));
        p.grad.assign(p.value->size(), 0.0);
        return params_.emplace(name, std::move(p)).first->second;
    }
    Param& define_zeros(const std::string& name, Shape shape) {
        return define(name, shape, std::vector<double>(shape_numel(shape), 0.0));
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    Param& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    // Leaf tensor for a parameter. With a live tape the tape's backward sweep
    // flushes the accumulated gradient into the parameter's grad slot; with
    // tape == nullptr the value is wrapped as a plain constant (inference).
    Tensor tensor(const std::string& name, Tape* tape) {
        Param& p = at(name);
        Tensor t;
        t.shape = p.shape;
        t.data = p.value;
        if (tape != nullptr) {
            t = tape->watch(t);
            Param* praw = &p;
            int64_t self = t.node;
            tape->set_backward(self, [praw, self](Tape& tp) {
                const auto& g = tp.grad_buf(self);
                for (size_t i = 0; i < g.size(); ++i) praw->grad[i] += g[i];
            });
        }
        return t;
    }

    void zero_grad() {
        for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, p] : params_) out.push_back(name);
        return out;
    }
    size_t total_elements() const {
        size_t n = 0;
        for (const auto& [name, p] : params_) n += p.value->size();
        return n;
    }
    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }

  private:
    std::map<std::string, Param> params_;
};

// ---------------------------------------------------------------------------
// op plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline Tape* result_tape(std::initializer_list<const Tensor*> ins) {
    Tape* t = nullptr;
    for (const Tensor* x : ins) {
        if (x->tape == nullptr) continue;
        if (t == nullptr) t = x->tape;
        else if (t != x->tape) throw DimensionError("operands recorded on different tapes");
    }
    return t;
}

inline bool any_grad(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* x : ins)
        if (x->requires_grad) return true;
    return false;
}

// Finalize an op result: attach tape node + backward closure when any input
// participates in differentiation. `make_bw` receives the fresh node id.
template <typename MakeBw>
inline Tensor finish(Tensor out, std::initializer_list<const Tensor*> ins, const char* opname, MakeBw make_bw) {
    check_finite(*out.data, opname);
    Tape* tp = result_tape(ins);
    if (tp != nullptr && any_grad(ins)) {
        out.tape = tp;
        out.requires_grad = true;
        out.node = tp->add_node(out.numel());
        tp->set_backward(out.node, make_bw(out.node));
    }
    return out;
}

struct BCast {
    Shape out;
    std::vector<size_t> sa, sb;  // element strides, 0 on broadcast dims
};

inline BCast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b) +
                             " (reshape operands to equal rank)");
    const size_t nd = a.size();
    BCast bc;
    bc.out.resize(nd);
    bc.sa.resize(nd);
    bc.sb.resize(nd);
    for (size_t d = 0; d < nd; ++d) {
        if (a[d] == b[d]) bc.out[d] = a[d];
        else if (a[d] == 1) bc.out[d] = b[d];
        else if (b[d] == 1) bc.out[d] = a[d];
        else throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    }
    // row-major strides, zeroed where the operand extent is 1 but output is not
    size_t stra = 1, strb = 1;
    std::vector<size_t> fa(nd), fb(nd);
    for (size_t d = nd; d-- > 0;) {
        fa[d] = stra;
        fb[d] = strb;
        stra *= a[d];
        strb *= b[d];
    }
    for (size_t d = 0; d < nd; ++d) {
        bc.sa[d] = (a[d] == 1 && bc.out[d] != 1) ? 0 : fa[d];
        bc.sb[d] = (b[d] == 1 && bc.out[d] != 1) ? 0 : fb[d];
    }
    return bc;
}

// Odometer walk over `shape`, calling f(flat_out, offset_a, offset_b).
template <typename F>
inline void bcast_walk(const Shape& shape, const std::vector<size_t>& sa, const std::vector<size_t>& sb, F f) {
    const size_t nd = shape.size();
    const size_t n = shape_numel(shape);
    if (nd == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<size_t> idx(nd, 0);
    size_t ia = 0, ib = 0;
    for (size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < shape[d]) break;
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (NumPy-style broadcasting over equal ranks)
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdF, typename BwdF>
inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdF fwd, BwdF bwd) {
    Tensor out;
    if (same_shape(a.shape, b.shape)) {
        out.shape = a.shape;
        out.data = std::make_shared<std::vector<double>>(a.numel());
        const auto& av = *a.data;
        const auto& bv = *b.data;
        auto& ov = *out.data;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
        return finish(std::move(out), {&a, &b}, name, [&](int64_t self) {
            auto ad = a.data;
            auto bd = b.data;
            int64_t an = a.node, bn = b.node;
            return [=](Tape& t) {
                const auto& g = t.grad_buf(self);
                if (an >= 0) {
                    auto& ga = t.grad_buf(an);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd(g[i], (*ad)[i], (*bd)[i], true);
                }
                if (bn >= 0) {
                    auto& gb = t.grad_buf(bn);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += bwd(g[i], (*ad)[i], (*bd)[i], false);
                }
            };
        });
    }
    BCast bc = broadcast_shapes(a.shape, b.shape, name);
    out.shape = bc.out;
    out.data = std::make_shared<std::vector<double>>(shape_numel(bc.out));
    {
        const auto& av = *a.data;
        const auto& bv = *b.data;
        auto& ov = *out.data;
        bcast_walk(bc.out, bc.sa, bc.sb, [&](size_t i, size_t ia, size_t ib) { ov[i] = fwd(av[ia], bv[ib]); });
    }
    return finish(std::move(out), {&a, &b}, name, [&](int64_t self) {
        auto ad = a.data;
        auto bd = b.data;
        int64_t an = a.node, bn = b.node;
        return [=, shape = bc.out, sa = bc.sa, sb = bc.sb](Tape& t) {
            const auto& g = t.grad_buf(self);
            std::vector<double>* ga = an >= 0 ? &t.grad_buf(an) : nullptr;
            std::vector<double>* gb = bn >= 0 ? &t.grad_buf(bn) : nullptr;
            bcast_walk(shape, sa, sb, [&](size_t i, size_t ia, size_t ib) {
                if (ga) (*ga)[ia] += bwd(g[i], (*ad)[ia], (*bd)[ib], true);
                if (gb) (*gb)[ib] += bwd(g[i], (*ad)[ia], (*bd)[ib], false);
            });
        };
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "add", [](double x, double y) { return x + y; },
                             [](double g, double, double, bool) { return g; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                             [](double g, double, double, bool is_a) { return is_a ? g : -g; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                             [](double g, double x, double y, bool is_a) { return is_a ? g * y : g * x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "div", [](double x, double y) { return x / y; },
                             [](double g, double x, double y, bool is_a) {
                                 return is_a ? g / y : -g * x / (y * y);
                             });
}

// ---------------------------------------------------------------------------
// unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdF, typename BwdF>
inline Tensor unary_op(const Tensor& a, const char* name, FwdF fwd, BwdF bwd) {
    Tensor out;
    out.shape = a.shape;
    out.data = std::make_shared<std::vector<double>>(a.numel());
    const auto& av = *a.data;
    auto& ov = *out.data;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    auto od = out.data;  // capture before `out` is moved into finish()
    return finish(std::move(out), {&a}, name, [&](int64_t self) {
        auto ad = a.data;
        int64_t an = a.node;
        return [=](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd((*ad)[i], (*od)[i]);
        };
    });
}

}  // namespace detail

inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary_op(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Tensor mul_scalar(const Tensor& a, double c) {
    return detail::unary_op(a, "mul_scalar", [c](double x) { return x * c; }, [c](double, double) { return c; });
}
inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log_t(const Tensor& a) {
    return detail::unary_op(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                            [](double, double y) { return 1.0 - y * y; });
}
inline Tensor sin_t(const Tensor& a) {
    return detail::unary_op(a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}
inline Tensor cos_t(const Tensor& a) {
    return detail::unary_op(a, "cos", [](double x) { return std::cos(x); },
                            [](double x, double) { return -std::sin(x); });
}
// backward guarded at the 0 kink; values are exact
inline Tensor sqrt_t(const Tensor& a) {
    return detail::unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                            [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}
inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(a, "abs", [](double x) { return std::fabs(x); },
                            [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                            [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
// exact erf formulation
inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                            [=](double x, double) {
                                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                                return cdf + x * pdf;
                            });
}

// Identity values, exactly zero gradient to the input.
inline Tensor stopgrad(const Tensor& a) {
    Tensor out;
    out.shape = a.shape;
    out.data = a.data;
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape s) {
    if (shape_numel(s) != a.numel())
        throw DimensionError("reshape: " + shape_str(a.shape) + " -> " + shape_str(s) + " changes element count");
    Tensor out;
    out.shape = std::move(s);
    out.data = a.data;  // same buffer; row-major layout is unchanged
    return detail::finish(std::move(out), {&a}, "reshape", [&](int64_t self) {
        int64_t an = a.node;
        return [=](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    });
}

inline Tensor permute(const Tensor& a, const std::vector<size_t>& perm) {
    const size_t nd = a.ndim();
    if (perm.size() != nd) throw DimensionError("permute: perm rank mismatch");
    std::vector<bool> seen(nd, false);
    for (size_t p : perm) {
        if (p >= nd || seen[p]) throw DimensionError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape os(nd);
    for (size_t d = 0; d < nd; ++d) os[d] = a.shape[perm[d]];
    std::vector<size_t> astr(nd, 1);
    for (size_t d = nd; d-- > 1;) astr[d - 1] = astr[d] * a.shape[d];
    std::vector<size_t> src_stride(nd);  // stride in `a` for each output dim
    for (size_t d = 0; d < nd; ++d) src_stride[d] = astr[perm[d]];

    Tensor out;
    out.shape = os;
    out.data = std::make_shared<std::vector<double>>(a.numel());
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        std::vector<size_t> zero(nd, 0);
        detail::bcast_walk(os, src_stride, zero, [&](size_t i, size_t ia, size_t) { ov[i] = av[ia]; });
    }
    return detail::finish(std::move(out), {&a}, "permute", [&](int64_t self) {
        int64_t an = a.node;
        return [=, shape = os](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            std::vector<size_t> zero(shape.size(), 0);
            detail::bcast_walk(shape, src_stride, zero, [&](size_t i, size_t ia, size_t) { ga[ia] += g[i]; });
        };
    });
}

inline Tensor transpose_last2(const Tensor& a) {
    std::vector<size_t> perm(a.ndim());
    std::iota(perm.begin(), perm.end(), size_t{0});
    if (a.ndim() < 2) throw DimensionError("transpose_last2: need rank >= 2");
    std::swap(perm[a.ndim() - 1], perm[a.ndim() - 2]);
    return permute(a, perm);
}

inline Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len) {
    if (axis >= a.ndim()) throw DimensionError("slice: axis out of range");
    if (start + len > a.shape[axis]) throw DimensionError("slice: range out of bounds");
    Shape os = a.shape;
    os[axis] = len;
    // flatten dims around the axis: [outer, axis, inner]
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= a.shape[d];
    for (size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape[d];
    const size_t ext = a.shape[axis];

    Tensor out;
    out.shape = os;
    out.data = std::make_shared<std::vector<double>>(outer * len * inner);
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < len; ++j) {
                const double* src = av.data() + (o * ext + start + j) * inner;
                double* dst = ov.data() + (o * len + j) * inner;
                std::copy(src, src + inner, dst);
            }
    }
    return detail::finish(std::move(out), {&a}, "slice", [&](int64_t self) {
        int64_t an = a.node;
        return [=](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t o = 0; o < outer; ++o)
                for (size_t j = 0; j < len; ++j) {
                    const double* src = g.data() + (o * len + j) * inner;
                    double* dst = ga.data() + (o * ext + start + j) * inner;
                    for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        };
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const size_t nd = parts[0].ndim();
    if (axis >= nd) throw DimensionError("concat: axis out of range");
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw DimensionError("concat: rank mismatch");
        for (size_t d = 0; d < nd; ++d)
            if (d != axis && p.shape[d] != parts[0].shape[d])
                throw DimensionError("concat: shape mismatch on non-concat axis");
        total += p.shape[axis];
    }
    Shape os = parts[0].shape;
    os[axis] = total;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= os[d];
    for (size_t d = axis + 1; d < nd; ++d) inner *= os[d];

    Tensor out;
    out.shape = os;
    out.data = std::make_shared<std::vector<double>>(outer * total * inner);
    {
        auto& ov = *out.data;
        size_t off = 0;
        for (const Tensor& p : parts) {
            const size_t ext = p.shape[axis];
            const auto& pv = *p.data;
            for (size_t o = 0; o < outer; ++o) {
                const double* src = pv.data() + o * ext * inner;
                double* dst = ov.data() + (o * total + off) * inner;
                std::copy(src, src + ext * inner, dst);
            }
            off += ext;
        }
    }
    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    Tape* tp = nullptr;
    bool grad = false;
    for (const Tensor* p : ins) {
        if (p->tape) {
            if (tp && tp != p->tape) throw DimensionError("concat: operands on different tapes");
            tp = p->tape;
        }
        grad = grad || p->requires_grad;
    }
    detail::check_finite(*out.data, "concat");
    if (tp && grad) {
        out.tape = tp;
        out.requires_grad = true;
        out.node = tp->add_node(out.numel());
        std::vector<int64_t> pnodes;
        std::vector<size_t> pext;
        for (const Tensor& p : parts) {
            pnodes.push_back(p.node);
            pext.push_back(p.shape[axis]);
        }
        int64_t self = out.node;
        tp->set_backward(self, [=](Tape& t) {
            const auto& g = t.grad_buf(self);
            size_t off = 0;
            for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                const size_t ext = pext[pi];
                if (pnodes[pi] >= 0) {
                    auto& gp = t.grad_buf(pnodes[pi]);
                    for (size_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + (o * total + off) * inner;
                        double* dst = gp.data() + o * ext * inner;
                        for (size_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
                    }
                }
                off += ext;
            }
        });
    }
    return out;
}

inline Tensor broadcast_to(const Tensor& a, const Shape& target) {
    if (a.ndim() != target.size()) throw DimensionError("broadcast_to: rank mismatch (reshape first)");
    detail::BCast bc = detail::broadcast_shapes(a.shape, target, "broadcast_to");
    if (bc.out != target) throw DimensionError("broadcast_to: shape " + shape_str(a.shape) + " cannot reach " + shape_str(target));
    Tensor zero_like = Tensor::zeros(target);
    return add(a, zero_like);
}

// ---------------------------------------------------------------------------
// reductions (last axis) and general-axis wrappers
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<size_t, size_t> rows_cols(const Tensor& a) {
    if (a.ndim() == 0) throw DimensionError("reduction: rank-0 tensor");
    size_t cols = a.shape.back();
    size_t rows = a.numel() / std::max<size_t>(cols, 1);
    if (cols == 0) throw DimensionError("reduction: empty last axis");
    return {rows, cols};
}

inline Shape drop_last(const Shape& s, bool keepdim) {
    Shape os = s;
    if (keepdim) os.back() = 1;
    else os.pop_back();
    if (os.empty()) os = {1};
    return os;
}

}  // namespace detail

inline Tensor sum_last(const Tensor& a, bool keepdim = false) {
    auto [rows, cols] = detail::rows_cols(a);
    Tensor out;
    out.shape = detail::drop_last(a.shape, keepdim);
    out.data = std::make_shared<std::vector<double>>(rows);
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t r = 0; r < rows; ++r) {
            double s = 0;
            const double* row = av.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) s += row[c];
            ov[r] = s;
        }
    }
    size_t cols_c = cols, rows_c = rows;
    return detail::finish(std::move(out), {&a}, "sum_last", [&](int64_t self) {
        int64_t an = a.node;
        return [=](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t r = 0; r < rows_c; ++r)
                for (size_t c = 0; c < cols_c; ++c) ga[r * cols_c + c] += g[r];
        };
    });
}

inline Tensor mean_last(const Tensor& a, bool keepdim = false) {
    auto [rows, cols] = detail::rows_cols(a);
    (void)rows;
    return mul_scalar(sum_last(a, keepdim), 1.0 / static_cast<double>(cols));
}

// population variance (divide by N)
inline Tensor var_last(const Tensor& a, bool keepdim = false) {
    auto [rows, cols] = detail::rows_cols(a);
    Tensor out;
    out.shape = detail::drop_last(a.shape, keepdim);
    out.data = std::make_shared<std::vector<double>>(rows);
    std::vector<double> means(rows);
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t r = 0; r < rows; ++r) {
            const double* row = av.data() + r * cols;
            double m = 0;
            for (size_t c = 0; c < cols; ++c) m += row[c];
            m /= static_cast<double>(cols);
            means[r] = m;
            double v = 0;
            for (size_t c = 0; c < cols; ++c) {
                double d = row[c] - m;
                v += d * d;
            }
            ov[r] = v / static_cast<double>(cols);
        }
    }
    size_t cols_c = cols, rows_c = rows;
    return detail::finish(std::move(out), {&a}, "var_last", [&](int64_t self) {
        int64_t an = a.node;
        auto ad = a.data;
        return [=, mu = std::move(means)](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            const double inv_n = 1.0 / static_cast<double>(cols_c);
            for (size_t r = 0; r < rows_c; ++r) {
                const double* row = ad->data() + r * cols_c;
                for (size_t c = 0; c < cols_c; ++c)
                    ga[r * cols_c + c] += g[r] * 2.0 * inv_n * (row[c] - mu[r]);
            }
        };
    });
}

// max over last axis; gradient routes to the (first) argmax element
inline Tensor max_last(const Tensor& a, bool keepdim = false) {
    auto [rows, cols] = detail::rows_cols(a);
    Tensor out;
    out.shape = detail::drop_last(a.shape, keepdim);
    out.data = std::make_shared<std::vector<double>>(rows);
    std::vector<size_t> arg(rows);
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t r = 0; r < rows; ++r) {
            const double* row = av.data() + r * cols;
            size_t best = 0;
            for (size_t c = 1; c < cols; ++c)
                if (row[c] > row[best]) best = c;
            arg[r] = best;
            ov[r] = row[best];
        }
    }
    size_t cols_c = cols, rows_c = rows;
    return detail::finish(std::move(out), {&a}, "max_last", [&](int64_t self) {
        int64_t an = a.node;
        return [=, am = std::move(arg)](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t r = 0; r < rows_c; ++r) ga[r * cols_c + am[r]] += g[r];
        };
    });
}

// data-level argmax along the last axis (no gradient; positions are integers)
inline std::vector<size_t> argmax_last(const Tensor& a) {
    auto [rows, cols] = detail::rows_cols(a);
    std::vector<size_t> out(rows);
    const auto& av = *a.data;
    for (size_t r = 0; r < rows; ++r) {
        const double* row = av.data() + r * cols;
        size_t best = 0;
        for (size_t c = 1; c < cols; ++c)
            if (row[c] > row[best]) best = c;
        out[r] = best;
    }
    return out;
}

namespace detail {
template <typename RedF>
inline Tensor reduce_axis(const Tensor& a, size_t axis, bool keepdim, RedF red) {
    if (axis >= a.ndim()) throw DimensionError("reduction: axis out of range");
    if (axis == a.ndim() - 1) return red(a, keepdim);
    std::vector<size_t> perm;
    for (size_t d = 0; d < a.ndim(); ++d)
        if (d != axis) perm.push_back(d);
    perm.push_back(axis);
    Tensor moved = permute(a, perm);
    Tensor reduced = red(moved, keepdim);
    if (!keepdim) return reduced;  // axes stay in perm order minus the reduced one == original order
    // restore the kept singleton axis to its original position
    std::vector<size_t> inv(a.ndim());
    for (size_t d = 0; d < a.ndim(); ++d) inv[perm[d]] = d;
    return permute(reduced, inv);
}
}  // namespace detail

inline Tensor mean(const Tensor& a, size_t axis, bool keepdim = false) {
    return detail::reduce_axis(a, axis, keepdim, [](const Tensor& x, bool k) { return mean_last(x, k); });
}
inline Tensor variance(const Tensor& a, size_t axis, bool keepdim = false) {
    return detail::reduce_axis(a, axis, keepdim, [](const Tensor& x, bool k) { return var_last(x, k); });
}
inline Tensor sum(const Tensor& a, size_t axis, bool keepdim = false) {
    return detail::reduce_axis(a, axis, keepdim, [](const Tensor& x, bool k) { return sum_last(x, k); });
}
inline Tensor max_reduce(const Tensor& a, size_t axis, bool keepdim = false) {
    return detail::reduce_axis(a, axis, keepdim, [](const Tensor& x, bool k) { return max_last(x, k); });
}

inline Tensor sum_all(const Tensor& a) { return sum_last(reshape(a, {a.numel()})); }
inline Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

// ---------------------------------------------------------------------------
// softmax / layer norm (fused along last axis)
// ---------------------------------------------------------------------------

inline Tensor softmax_last(const Tensor& a) {
    auto [rows, cols] = detail::rows_cols(a);
    Tensor out;
    out.shape = a.shape;
    out.data = std::make_shared<std::vector<double>>(a.numel());
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t r = 0; r < rows; ++r) {
            const double* row = av.data() + r * cols;
            double mx = row[0];
            for (size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
            double s = 0;
            for (size_t c = 0; c < cols; ++c) {
                double e = std::exp(row[c] - mx);
                ov[r * cols + c] = e;
                s += e;
            }
            for (size_t c = 0; c < cols; ++c) ov[r * cols + c] /= s;
        }
    }
    size_t cols_c = cols, rows_c = rows;
    auto od = out.data;
    return detail::finish(std::move(out), {&a}, "softmax", [&](int64_t self) {
        int64_t an = a.node;
        return [=](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            for (size_t r = 0; r < rows_c; ++r) {
                const double* y = od->data() + r * cols_c;
                const double* gr = g.data() + r * cols_c;
                double dot = 0;
                for (size_t c = 0; c < cols_c; ++c) dot += gr[c] * y[c];
                for (size_t c = 0; c < cols_c; ++c) ga[r * cols_c + c] += y[c] * (gr[c] - dot);
            }
        };
    });
}

inline Tensor softmax(const Tensor& a, size_t axis) {
    if (axis == a.ndim() - 1) return softmax_last(a);
    std::vector<size_t> perm;
    for (size_t d = 0; d < a.ndim(); ++d)
        if (d != axis) perm.push_back(d);
    perm.push_back(axis);
    std::vector<size_t> inv(a.ndim());
    for (size_t d = 0; d < a.ndim(); ++d) inv[perm[d]] = d;
    return permute(softmax_last(permute(a, perm)), inv);
}

// (x - mean) / sqrt(var + eps) over the last axis; no affine terms
inline Tensor layer_norm_last(const Tensor& a, double eps = 1e-5) {
    auto [rows, cols] = detail::rows_cols(a);
    Tensor out;
    out.shape = a.shape;
    out.data = std::make_shared<std::vector<double>>(a.numel());
    std::vector<double> inv_std(rows);
    {
        const auto& av = *a.data;
        auto& ov = *out.data;
        for (size_t r = 0; r < rows; ++r) {
            const double* row = av.data() + r * cols;
            double m = 0;
            for (size_t c = 0; c < cols; ++c) m += row[c];
            m /= static_cast<double>(cols);
            double v = 0;
            for (size_t c = 0; c < cols; ++c) {
                double d = row[c] - m;
                v += d * d;
            }
            v /= static_cast<double>(cols);
            double is = 1.0 / std::sqrt(v + eps);
            inv_std[r] = is;
            for (size_t c = 0; c < cols; ++c) ov[r * cols + c] = (row[c] - m) * is;
        }
    }
    size_t cols_c = cols, rows_c = rows;
    auto od = out.data;
    return detail::finish(std::move(out), {&a}, "layer_norm", [&](int64_t self) {
        int64_t an = a.node;
        return [=, istd = std::move(inv_std)](Tape& t) {
            if (an < 0) return;
            const auto& g = t.grad_buf(self);
            auto& ga = t.grad_buf(an);
            const double inv_n = 1.0 / static_cast<double>(cols_c);
            for (size_t r = 0; r < rows_c; ++r) {
                const double* y = od->data() + r * cols_c;
                const double* gr = g.data() + r * cols_c;
                double gsum = 0, gysum = 0;
                for (size_t c = 0; c < cols_c; ++c) {
                    gsum += gr[c];
                    gysum += gr[c] * y[c];
                }
                for (size_t c = 0; c < cols_c; ++c)
                    ga[r * cols_c + c] += istd[r] * (gr[c] - inv_n * gsum - y[c] * inv_n * gysum);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {
// C[n,m] += A[n,k] * B[k,m]
inline void gemm_acc(const double* a, const double* b, double* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * m;
            for (size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}
// C[n,k] += A[n,m] * B^T (B is [k,m])
inline void gemm_bt_acc(const double* a, const double* b, double* c, size_t n, size_t m, size_t k) {
    for (size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * k;
        for (size_t p = 0; p < k; ++p) {
            const double* brow = b + p * m;
            double s = 0;
            for (size_t j = 0; j < m; ++j) s += arow[j] * brow[j];
            crow[p] += s;
        }
    }
}
// C[k,m] += A^T (A is [n,k]) * B[n,m]
inline void gemm_at_acc(const double* a, const double* b, double* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * m;
            for (size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}
}  // namespace detail

// a [..., k] x b [k, m]  (shared weight), or batched a [..., n, k] x b [..., k, m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.ndim() == 2) {
        const size_t k = b.shape[0], m = b.shape[1];
        if (a.shape.back() != k)
            throw DimensionError("matmul: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
        const size_t n = a.numel() / k;
        Shape os = a.shape;
        os.back() = m;
        Tensor out;
        out.shape = os;
        out.data = std::make_shared<std::vector<double>>(n * m, 0.0);
        detail::gemm_acc(a.data->data(), b.data->data(), out.data->data(), n, k, m);
        return detail::finish(std::move(out), {&a, &b}, "matmul", [&](int64_t self) {
            auto ad = a.data;
            auto bd = b.data;
            int64_t an = a.node, bn = b.node;
            return [=](Tape& t) {
                const auto& g = t.grad_buf(self);
                if (an >= 0) detail::gemm_bt_acc(g.data(), bd->data(), t.grad_buf(an).data(), n, m, k);
                if (bn >= 0) detail::gemm_at_acc(ad->data(), g.data(), t.grad_buf(bn).data(), n, k, m);
            };
        });
    }
    // batched: equal leading dims
    if (a.ndim() != b.ndim() || a.ndim() < 3)
        throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape) + " x " + shape_str(b.shape));
    for (size_t d = 0; d + 2 < a.ndim(); ++d)
        if (a.shape[d] != b.shape[d]) throw DimensionError("matmul: batch dims differ");
    const size_t n = a.shape[a.ndim() - 2], k = a.shape[a.ndim() - 1];
    const size_t k2 = b.shape[b.ndim() - 2], m = b.shape[b.ndim() - 1];
    if (k != k2) throw DimensionError("matmul: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
    size_t batch = 1;
    for (size_t d = 0; d + 2 < a.ndim(); ++d) batch *= a.shape[d];
    Shape os = a.shape;
    os[os.size() - 1] = m;
    Tensor out;
    out.shape = os;
    out.data = std::make_shared<std::vector<double>>(batch * n * m, 0.0);
    for (size_t bi = 0; bi < batch; ++bi)
        detail::gemm_acc(a.data->data() + bi * n * k, b.data->data() + bi * k * m,
                         out.data->data() + bi * n * m, n, k, m);
    return detail::finish(std::move(out), {&a, &b}, "matmul", [&](int64_t self) {
        auto ad = a.data;
        auto bd = b.data;
        int64_t an = a.node, bn = b.node;
        return [=](Tape& t) {
            const auto& g = t.grad_buf(self);
            for (size_t bi = 0; bi < batch; ++bi) {
                const double* gb = g.data() + bi * n * m;
                if (an >= 0)
                    detail::gemm_bt_acc(gb, bd->data() + bi * k * m, t.grad_buf(an).data() + bi * n * k, n, m, k);
                if (bn >= 0)
                    detail::gemm_at_acc(ad->data() + bi * n * k, gb, t.grad_buf(bn).data() + bi * k * m, n, k, m);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

// Same-length 1-D convolution along the last axis with replicate (edge-clamp)
// padding. x: [B, C, L]; kernel: [r] shared, or [B, r] per-sample. Odd r.
inline Tensor conv1d_same(const Tensor& x, const Tensor& w) {
    if (x.ndim() != 3) throw DimensionError("conv1d_same: x must be [B, C, L]");
    const size_t B = x.shape[0], C = x.shape[1], L = x.shape[2];
    size_t r = 0;
    bool per_sample = false;
    if (w.ndim() == 1) r = w.shape[0];
    else if (w.ndim() == 2) {
        if (w.shape[0] != B) throw DimensionError("conv1d_same: per-sample kernel batch mismatch");
        r = w.shape[1];
        per_sample = true;
    } else throw DimensionError("conv1d_same: kernel must be [r] or [B, r]");
    if (r % 2 == 0 || r < 1) throw DimensionError("conv1d_same: kernel size must be odd and >= 1");
    const size_t p = (r - 1) / 2;

    auto clamp_idx = [L](long long i) -> size_t {
        if (i < 0) return 0;
        if (i >= static_cast<long long>(L)) return L - 1;
        return static_cast<size_t>(i);
    };

    Tensor out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<double>>(x.numel(), 0.0);
    {
        const auto& xv = *x.data;
        const auto& wv = *w.data;
        auto& ov = *out.data;
        for (size_t b = 0; b < B; ++b) {
            const double* wk = per_sample ? wv.data() + b * r : wv.data();
            for (size_t c = 0; c < C; ++c) {
                const double* row = xv.data() + (b * C + c) * L;
                double* orow = ov.data() + (b * C + c) * L;
                for (size_t i = 0; i < L; ++i) {
                    double s = 0;
                    for (size_t j = 0; j < r; ++j)
                        s += wk[j] * row[clamp_idx(static_cast<long long>(i + j) - static_cast<long long>(p))];
                    orow[i] = s;
                }
            }
        }
    }
    return detail::finish(std::move(out), {&x, &w}, "conv1d_same", [&](int64_t self) {
        auto xd = x.data;
        auto wd = w.data;
        int64_t xn = x.node, wn = w.node;
        return [=](Tape& t) {
            const auto& g = t.grad_buf(self);
            std::vector<double>* gx = xn >= 0 ? &t.grad_buf(xn) : nullptr;
            std::vector<double>* gw = wn >= 0 ? &t.grad_buf(wn) : nullptr;
            for (size_t b = 0; b < B; ++b) {
                const double* wk = per_sample ? wd->data() + b * r : wd->data();
                double* gwk = gw ? (per_sample ? gw->data() + b * r : gw->data()) : nullptr;
                for (size_t c = 0; c < C; ++c) {
                    const double* row = xd->data() + (b * C + c) * L;
                    const double* grow = g.data() + (b * C + c) * L;
                    double* gxr = gx ? gx->data() + (b * C + c) * L : nullptr;
                    for (size_t i = 0; i < L; ++i) {
                        const double gv = grow[i];
                        if (gv == 0.0) continue;
                        for (size_t j = 0; j < r; ++j) {
                            size_t src = clamp_idx(static_cast<long long>(i + j) - static_cast<long long>(p));
                            if (gwk) gwk[j] += gv * row[src];
                            if (gxr) gxr[src] += gv * wk[j];
                        }
                    }
                }
            }
        };
    });
}

// Strided channel-mixing 1-D convolution with replicate padding; windows are
// centered at i*stride, output length floor(L/stride).
// x: [B, Cin, L]; W: [Cout, Cin, r]; bias: [Cout].
inline Tensor conv1d_strided(const Tensor& x, const Tensor& w, const Tensor& bias, size_t stride) {
    if (x.ndim() != 3 || w.ndim() != 3 || bias.ndim() != 1)
        throw DimensionError("conv1d_strided: expected x[B,Cin,L], w[Cout,Cin,r], bias[Cout]");
    const size_t B = x.shape[0], Cin = x.shape[1], L = x.shape[2];
    const size_t Cout = w.shape[0], r = w.shape[2];
    if (w.shape[1] != Cin || bias.shape[0] != Cout) throw DimensionError("conv1d_strided: channel mismatch");
    if (r % 2 == 0) throw DimensionError("conv1d_strided: kernel size must be odd");
    if (stride == 0 || L < stride) throw DimensionError("conv1d_strided: invalid stride for length");
    const size_t Lout = L / stride;
    const long long half = static_cast<long long>((r - 1) / 2);
    auto clamp_idx = [L](long long i) -> size_t {
        if (i < 0) return 0;
        if (i >= static_cast<long long>(L)) return L - 1;
        return static_cast<size_t>(i);
    };

    Tensor out;
    out.shape = {B, Cout, Lout};
    out.data = std::make_shared<std::vector<double>>(B * Cout * Lout, 0.0);
    {
        const auto& xv = *x.data;
        const auto& wv = *w.data;
        const auto& bv = *bias.data;
        auto& ov = *out.data;
        for (size_t b = 0; b < B; ++b)
            for (size_t co = 0; co < Cout; ++co) {
                double* orow = ov.data() + (b * Cout + co) * Lout;
                for (size_t i = 0; i < Lout; ++i) {
                    double s = bv[co];
                    for (size_t ci = 0; ci < Cin; ++ci) {
                        const double* row = xv.data() + (b * Cin + ci) * L;
                        const double* wk = wv.data() + (co * Cin + ci) * r;
                        for (size_t j = 0; j < r; ++j)
                            s += wk[j] * row[clamp_idx(static_cast<long long>(i * stride) + static_cast<long long>(j) - half)];
                    }
                    orow[i] = s;
                }
            }
    }
    return detail::finish(std::move(out), {&x, &w, &bias}, "conv1d_strided", [&](int64_t self) {
        auto xd = x.data;
        auto wd = w.data;
        int64_t xn = x.node, wn = w.node, bn = bias.node;
        return [=](Tape& t) {
            const auto& g = t.grad_buf(self);
            std::vector<double>* gx = xn >= 0 ? &t.grad_buf(xn) : nullptr;
            std::vector<double>* gw = wn >= 0 ? &t.grad_buf(wn) : nullptr;
            std::vector<double>* gb = bn >= 0 ? &t.grad_buf(bn) : nullptr;
            for (size_t b = 0; b < B; ++b)
                for (size_t co = 0; co < Cout; ++co) {
                    const double* grow = g.data() + (b * Cout + co) * Lout;
                    for (size_t i = 0; i < Lout; ++i) {
                        const double gv = grow[i];
                        if (gv == 0.0) continue;
                        if (gb) (*gb)[co] += gv;
                        for (size_t ci = 0; ci < Cin; ++ci) {
                            const double* row = xd->data() + (b * Cin + ci) * L;
                            const double* wk = wd->data() + (co * Cin + ci) * r;
                            double* gwk = gw ? gw->data() + (co * Cin + ci) * r : nullptr;
                            double* gxr = gx ? gx->data() + (b * Cin + ci) * L : nullptr;
                            for (size_t j = 0; j < r; ++j) {
                                size_t src = clamp_idx(static_cast<long long>(i * stride) + static_cast<long long>(j) - half);
                                if (gwk) gwk[j] += gv * row[src];
                                if (gxr) gxr[src] += gv * wk[j];
                            }
                        }
                    }
                }
        };
    });
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

// Mean cross-entropy over the batch from raw logits [B, K].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy: logits must be [B, K]");
    const size_t B = logits.shape[0], K = logits.shape[1];
    if (labels.size() != B) throw DimensionError("cross_entropy: label count mismatch");
    std::vector<double> probs(B * K);
    double loss = 0;
    {
        const auto& lv = *logits.data;
        for (size_t b = 0; b < B; ++b) {
            const int y = labels[b];
            if (y < 0 || static_cast<size_t>(y) >= K) throw DimensionError("cross_entropy: label out of range");
            const double* row = lv.data() + b * K;
            double mx = row[0];
            for (size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
            double s = 0;
            for (size_t k = 0; k < K; ++k) {
                double e = std::exp(row[k] - mx);
                probs[b * K + k] = e;
                s += e;
            }
            for (size_t k = 0; k < K; ++k) probs[b * K + k] /= s;
            loss -= std::log(std::max(probs[b * K + static_cast<size_t>(y)], 1e-300));
        }
        loss /= static_cast<double>(B);
    }
    Tensor out = Tensor::scalar(loss);
    return detail::finish(std::move(out), {&logits}, "cross_entropy", [&](int64_t self) {
        int64_t ln = logits.node;
        return [=, pr = std::move(probs), lb = labels](Tape& t) {
            if (ln < 0) return;
            const double g = t.grad_buf(self)[0];
            auto& gl = t.grad_buf(ln);
            const double inv_b = 1.0 / static_cast<double>(B);
            for (size_t b = 0; b < B; ++b)
                for (size_t k = 0; k < K; ++k) {
                    double d = pr[b * K + k] - (static_cast<size_t>(lb[b]) == k ? 1.0 : 0.0);
                    gl[b * K + k] += g * inv_b * d;
                }
        };
    });
}

// ---------------------------------------------------------------------------
// FFT ops (differentiable)
// ---------------------------------------------------------------------------

// Real FFT along the last axis: [..., T] -> re/im [..., T/2+1]. Unnormalized
// forward; bin 0 is DC, bin T/2 (even T) the Nyquist bin with zero imag part.
inline ComplexTensor rfft(const Tensor& x) {
    if (x.ndim() == 0 || x.shape.back() < 2) throw DimensionError("rfft: temporal length must be >= 2");
    const size_t T = x.shape.back();
    const size_t K = fft::rfft_bins(T);
    const size_t rows = x.numel() / T;
    Shape os = x.shape;
    os.back() = K;

    Tensor re, im;
    re.shape = os;
    im.shape = os;
    re.data = std::make_shared<std::vector<double>>(rows * K);
    im.data = std::make_shared<std::vector<double>>(rows * K);
    {
        const auto& xv = *x.data;
        for (size_t rw = 0; rw < rows; ++rw)
            fft::rfft_raw(xv.data() + rw * T, T, re.data->data() + rw * K, im.data->data() + rw * K);
    }
    // Two output nodes; each contributes its half of the adjoint.
    auto attach = [&](Tensor& out, bool is_re) {
        out = detail::finish(std::move(out), {&x}, "rfft", [&](int64_t self) {
            int64_t xn = x.node;
            return [=](Tape& t) {
                if (xn < 0) return;
                const auto& g = t.grad_buf(self);
                auto& gx = t.grad_buf(xn);
                std::vector<double> zeros(K, 0.0), gxrow(T);
                for (size_t rw = 0; rw < rows; ++rw) {
                    const double* gre = is_re ? g.data() + rw * K : zeros.data();
                    const double* gim = is_re ? zeros.data() : g.data() + rw * K;
                    fft::rfft_adjoint(gre, gim, T, gxrow.data());
                    double* dst = gx.data() + rw * T;
                    for (size_t s = 0; s < T; ++s) dst[s] += gxrow[s];
                }
            };
        });
    };
    attach(re, true);
    attach(im, false);
    return {re, im};
}

// Inverse real FFT with 1/T normalization; Hermitian symmetry enforced by
// construction (imaginary residue of DC/Nyquist bins discarded).
inline Tensor irfft(const ComplexTensor& z, size_t T) {
    if (z.re.shape != z.im.shape) throw DimensionError("irfft: re/im shape mismatch");
    const size_t K = z.re.shape.back();
    if (K != fft::rfft_bins(T))
        throw DimensionError("irfft: bin count " + std::to_string(K) + " does not match length " + std::to_string(T));
    const size_t rows = z.re.numel() / K;
    Shape os = z.re.shape;
    os.back() = T;
    Tensor out;
    out.shape = os;
    out.data = std::make_shared<std::vector<double>>(rows * T);
    {
        for (size_t rw = 0; rw < rows; ++rw)
            fft::irfft_raw(z.re.data->data() + rw * K, z.im.data->data() + rw * K, T,
                           out.data->data() + rw * T);
    }
    return detail::finish(std::move(out), {&z.re, &z.im}, "irfft", [&](int64_t self) {
        int64_t rn = z.re.node, in_ = z.im.node;
        return [=](Tape& t) {
            if (rn < 0 && in_ < 0) return;
            const auto& g = t.grad_buf(self);
            std::vector<double>* gre = rn >= 0 ? &t.grad_buf(rn) : nullptr;
            std::vector<double>* gim = in_ >= 0 ? &t.grad_buf(in_) : nullptr;
            std::vector<double> tr(K), ti(K);
            for (size_t rw = 0; rw < rows; ++rw) {
                fft::irfft_adjoint(g.data() + rw * T, T, tr.data(), ti.data());
                if (gre)
                    for (size_t i = 0; i < K; ++i) (*gre)[rw * K + i] += tr[i];
                if (gim)
                    for (size_t i = 0; i < K; ++i) (*gim)[rw * K + i] += ti[i];
            }
        };
    });
}

// |z| with a guarded backward at the origin
inline Tensor complex_abs(const Tensor& re, const Tensor& im) {
    if (re.shape != im.shape) throw DimensionError("complex_abs: re/im shape mismatch");
    Tensor out;
    out.shape = re.shape;
    out.data = std::make_shared<std::vector<double>>(re.numel());
    {
        const auto& rv = *re.data;
        const auto& iv = *im.data;
        auto& ov = *out.data;
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::hypot(rv[i], iv[i]);
    }
    auto od = out.data;
    return detail::finish(std::move(out), {&re, &im}, "complex_abs", [&](int64_t self) {
        auto rd = re.data;
        auto id = im.data;
        int64_t rn = re.node, in_ = im.node;
        return [=](Tape& t) {
            const auto& g = t.grad_buf(self);
            std::vector<double>* gr = rn >= 0 ? &t.grad_buf(rn) : nullptr;
            std::vector<double>* gi = in_ >= 0 ? &t.grad_buf(in_) : nullptr;
            for (size_t i = 0; i < g.size(); ++i) {
                const double d = g[i] / std::max((*od)[i], 1e-150);
                if (gr) (*gr)[i] += d * (*rd)[i];
                if (gi) (*gi)[i] += d * (*id)[i];
            }
        };
    });
}

}  // namespace specdrift
