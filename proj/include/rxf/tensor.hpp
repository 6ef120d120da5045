#pragma once

#include "rxf/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>

namespace rxf {

template <typename T>
class Tape;
template <typename T>
class GradientMap;

// Value handle. Copies are cheap and share storage; tensors are immutable
// after creation except for the optimizer's explicit in-place update.
template <typename T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> values;
    Tape<T>* tape = nullptr; // non-owning; nullptr = constant
    int node = -1;           // id on the tape, -1 when not recorded
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.values = std::make_shared<std::vector<T>>(shape_size(t.shape), T(0));
        return t;
    }

    static Tensor full(Shape s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.values->begin(), t.values->end(), v);
        return t;
    }

    static Tensor from(Shape s, std::vector<T> data) {
        if (shape_size(s) != static_cast<long long>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.values = std::make_shared<std::vector<T>>(std::move(data));
        return t;
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    static Tensor uniform_init(Shape s, Rng& rng, double lo, double hi) {
        Tensor t = zeros(std::move(s));
        for (auto& v : *t.values) v = static_cast<T>(rxf::uniform(rng, lo, hi));
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    long long size() const { return shape_size(shape); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    const std::vector<T>& data() const { return *values; }
    std::vector<T>& mut_data() { return *values; }
    const T* ptr() const { return values->data(); }
    T* mut_ptr() { return values->data(); }

    T item() const {
        if (size() != 1) throw UsageError("item() requires a scalar tensor, got " + shape_str(shape));
        return (*values)[0];
    }

    T at(std::initializer_list<int> idx) const {
        long long flat = 0;
        size_t i = 0;
        for (int v : idx) flat = flat * shape[i++] + v;
        return (*values)[static_cast<size_t>(flat)];
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.values = std::make_shared<std::vector<T>>(*values);
        return t;
    }

    // Same storage, detached from any tape.
    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.values = values;
        return t;
    }
};

// Per-node gradient buffers for one backward pass.
template <typename T>
class GradientMap {
public:
    explicit GradientMap(size_t num_nodes) : slots_(num_nodes) {}

    bool has(int node) const {
        return node >= 0 && static_cast<size_t>(node) < slots_.size() && slots_[node] != nullptr;
    }

    // Get-or-create the accumulation buffer for a node.
    std::vector<T>& accum(int node, long long numel) {
        auto& slot = slots_[static_cast<size_t>(node)];
        if (!slot) slot = std::make_unique<std::vector<T>>(static_cast<size_t>(numel), T(0));
        return *slot;
    }

    const std::vector<T>* peek(int node) const {
        if (!has(node)) return nullptr;
        return slots_[static_cast<size_t>(node)].get();
    }

    // Gradient for a tensor; zero tensor of identical shape when off-path.
    Tensor<T> grad(const Tensor<T>& t) const {
        Tensor<T> g = Tensor<T>::zeros(t.shape);
        if (t.node >= 0 && has(t.node)) *g.values = *slots_[static_cast<size_t>(t.node)];
        return g;
    }

private:
    std::vector<std::unique_ptr<std::vector<T>>> slots_;
};

// Wengert list: ops are appended in execution order, which is a topological
// order by construction; backward replays them once, in reverse.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(const std::vector<T>& dout, GradientMap<T>& grads)>;

    struct OpRecord {
        const char* name;
        std::vector<int> inputs;
        int output;
        BackwardFn backward;
    };

    int add_node(const Shape& s) {
        node_shapes_.push_back(s);
        return static_cast<int>(node_shapes_.size()) - 1;
    }

    // Register a leaf; returns a handle bound to this tape over the same storage.
    Tensor<T> watch(const Tensor<T>& t) {
        Tensor<T> w = t.detached();
        w.tape = this;
        w.node = add_node(t.shape);
        w.requires_grad = true;
        return w;
    }

    void record(const char* name, std::vector<int> inputs, int output, BackwardFn fn) {
        ops_.push_back(OpRecord{name, std::move(inputs), output, std::move(fn)});
    }

    GradientMap<T> backward(const Tensor<T>& loss) const {
        if (loss.size() != 1) throw UsageError("backward() requires a scalar loss, got " + shape_str(loss.shape));
        if (loss.tape != this || loss.node < 0) throw UsageError("backward() loss was not produced on this tape");
        GradientMap<T> grads(node_shapes_.size());
        grads.accum(loss.node, 1)[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            const std::vector<T>* dout = grads.peek(it->output);
            if (dout == nullptr) continue; // output not on the path to the loss
            it->backward(*dout, grads);
        }
        return grads;
    }

    const std::vector<OpRecord>& ops() const { return ops_; }
    size_t num_nodes() const { return node_shapes_.size(); }
    const Shape& node_shape(int id) const { return node_shapes_[static_cast<size_t>(id)]; }

private:
    std::vector<Shape> node_shapes_;
    std::vector<OpRecord> ops_;
};

namespace detail {

template <typename T>
Tape<T>* merge_tapes(std::initializer_list<const Tensor<T>*> ts) {
    Tape<T>* tp = nullptr;
    for (const Tensor<T>* t : ts) {
        if (t->tape == nullptr) continue;
        if (tp != nullptr && tp != t->tape) throw UsageError("operands recorded on different tapes");
        tp = t->tape;
    }
    return tp;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!flags().finite_checks) return;
    for (T v : *t.values)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
void axpy(std::vector<T>& dst, const std::vector<T>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace detail

// Multiply-add counter for the attention matmuls. Master switch gates the
// instrumentation; a Scope marks the region whose matmuls are counted.
namespace flopcount {

inline bool& master() {
    static bool on = true;
    return on;
}
inline int& scope_depth() {
    static int d = 0;
    return d;
}
inline long long& total() {
    static long long v = 0;
    return v;
}
inline bool active() { return master() && scope_depth() > 0; }
inline void add(long long macs) {
    if (active()) total() += macs;
}
inline void reset() { total() = 0; }

struct Scope {
    Scope() { ++scope_depth(); }
    ~Scope() { --scope_depth(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
};

} // namespace flopcount

// ---------------------------------------------------------------------------
// matmul

namespace detail {

// C[m x p] (+)= A[m x n] * B[n x p], plain row-major buffers.
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int n, int p) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * p;
        for (int k = 0; k < n; ++k) {
            const T av = a[static_cast<size_t>(i) * n + k];
            const T* brow = b + static_cast<size_t>(k) * p;
            for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x p] (+)= A[m x n] * B^T where B is [p x n].
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int n, int p) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * n;
        T* crow = c + static_cast<size_t>(i) * p;
        for (int j = 0; j < p; ++j) {
            const T* brow = b + static_cast<size_t>(j) * n;
            T acc = T(0);
            for (int k = 0; k < n; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C[m x p] (+)= A^T * B where A is [n x m], B is [n x p].
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int n, int p) {
    for (int k = 0; k < n; ++k) {
        const T* arow = a + static_cast<size_t>(k) * m;
        const T* brow = b + static_cast<size_t>(k) * p;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + static_cast<size_t>(i) * p;
            for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace detail

// Standard matrix product. Leading batch dimensions are allowed on either
// operand; when both carry them they must match, and a plain matrix
// broadcasts across the other side's batches.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul requires rank >= 2 operands, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    const int m = a.dim(a.rank() - 2), n = a.dim(a.rank() - 1);
    const int n2 = b.dim(b.rank() - 2), p = b.dim(b.rank() - 1);
    if (n != n2)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Shape abatch(a.shape.begin(), a.shape.end() - 2);
    Shape bbatch(b.shape.begin(), b.shape.end() - 2);
    if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
        throw ShapeError("matmul batch dimensions disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const Shape batch = abatch.empty() ? bbatch : abatch;
    const long long nb = shape_size(batch);
    const bool a_batched = !abatch.empty(), b_batched = !bbatch.empty();

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(p);
    Tensor<T> out = Tensor<T>::zeros(out_shape);

    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* cp = out.mut_ptr();
    for (long long i = 0; i < nb; ++i) {
        detail::matmul_nn(ap + (a_batched ? i * m * n : 0), bp + (b_batched ? i * n * p : 0),
                          cp + i * static_cast<long long>(m) * p, m, n, p);
    }
    flopcount::add(nb * m * n * p);
    detail::check_finite(out, "matmul");

    if (Tape<T>* tp = detail::merge_tapes<T>({&a, &b})) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto av = a.values;
        const auto bv = b.values;
        const int anode = a.node, bnode = b.node;
        const long long asz = a.size(), bsz = b.size();
        tp->record("matmul", {anode, bnode}, out.node,
                   [=](const std::vector<T>& dout, GradientMap<T>& g) {
                       // dA = dC * B^T, dB = A^T * dC
                       if (anode >= 0) {
                           auto& da = g.accum(anode, asz);
                           for (long long i = 0; i < nb; ++i)
                               detail::matmul_nt(dout.data() + i * static_cast<long long>(m) * p,
                                                 bv->data() + (b_batched ? i * n * p : 0),
                                                 da.data() + (a_batched ? i * m * n : 0), m, p, n);
                       }
                       if (bnode >= 0) {
                           auto& db = g.accum(bnode, bsz);
                           for (long long i = 0; i < nb; ++i)
                               detail::matmul_tn(av->data() + (a_batched ? i * m * n : 0),
                                                 dout.data() + i * static_cast<long long>(m) * p,
                                                 db.data() + (b_batched ? i * n * p : 0), n, m, p);
                       }
                   });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise

enum class EwKind { Add, Sub, Mul, Div };

namespace detail {

// Broadcasting is restricted to trailing singleton dims of b: b's shape must
// equal a's on a prefix and be all-1 afterwards.
template <typename T>
long long broadcast_block(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape == b.shape) return 1;
    if (a.rank() != b.rank())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                         " are not compatible");
    long long block = 1;
    bool tail = false;
    for (int i = 0; i < a.rank(); ++i) {
        if (b.dim(i) == a.dim(i) && !tail) continue;
        if (b.dim(i) != 1)
            throw ShapeError(std::string(op) + ": only trailing singleton broadcast is supported, got " +
                             shape_str(a.shape) + " vs " + shape_str(b.shape));
        tail = true;
        block *= a.dim(i);
    }
    return block; // elements of a covered by one element of b
}

} // namespace detail

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    const char* name = kind == EwKind::Add ? "add" : kind == EwKind::Sub ? "sub" : kind == EwKind::Mul ? "mul" : "div";
    const long long block = detail::broadcast_block(a, b, name);
    const long long na = a.size();

    if (kind == EwKind::Div && flags().strict_divide) {
        for (T v : *b.values)
            if (v == T(0)) throw NumericError("div: denominator tensor contains zero (strict mode)");
    }

    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.mut_ptr();
    for (long long i = 0; i < na; ++i) {
        const T bv = bp[i / block];
        switch (kind) {
        case EwKind::Add: op[i] = ap[i] + bv; break;
        case EwKind::Sub: op[i] = ap[i] - bv; break;
        case EwKind::Mul: op[i] = ap[i] * bv; break;
        case EwKind::Div: op[i] = ap[i] / bv; break;
        }
    }
    detail::check_finite(out, name);

    if (Tape<T>* tp = detail::merge_tapes<T>({&a, &b})) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto av = a.values;
        const auto bv = b.values;
        const int anode = a.node, bnode = b.node;
        const long long nb = b.size();
        tp->record(name, {anode, bnode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode >= 0) {
                auto& da = g.accum(anode, na);
                switch (kind) {
                case EwKind::Add:
                case EwKind::Sub:
                    for (long long i = 0; i < na; ++i) da[i] += dout[i];
                    break;
                case EwKind::Mul:
                    for (long long i = 0; i < na; ++i) da[i] += dout[i] * (*bv)[i / block];
                    break;
                case EwKind::Div:
                    for (long long i = 0; i < na; ++i) da[i] += dout[i] / (*bv)[i / block];
                    break;
                }
            }
            if (bnode >= 0) {
                auto& db = g.accum(bnode, nb);
                for (long long i = 0; i < na; ++i) {
                    const long long j = i / block;
                    switch (kind) {
                    case EwKind::Add: db[j] += dout[i]; break;
                    case EwKind::Sub: db[j] -= dout[i]; break;
                    case EwKind::Mul: db[j] += dout[i] * (*av)[i]; break;
                    case EwKind::Div: {
                        const T d = (*bv)[j];
                        db[j] -= dout[i] * (*av)[i] / (d * d);
                        break;
                    }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Mul, a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Div, a, b);
}

// a * c for a scalar literal.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const long long n = a.size();
    for (long long i = 0; i < n; ++i) (*out.values)[i] = (*a.values)[i] * static_cast<T>(c);
    detail::check_finite(out, "scale");
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        tp->record("scale", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, n);
            for (long long i = 0; i < n; ++i) da[i] += dout[i] * static_cast<T>(c);
        });
    }
    return out;
}

// a + c for a scalar literal.
template <typename T>
Tensor<T> offset(const Tensor<T>& a, double c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const long long n = a.size();
    for (long long i = 0; i < n; ++i) (*out.values)[i] = (*a.values)[i] + static_cast<T>(c);
    detail::check_finite(out, "offset");
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        tp->record("offset", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, n);
            detail::axpy(da, dout);
        });
    }
    return out;
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const long long n = a.size();
    for (long long i = 0; i < n; ++i) (*out.values)[i] = std::abs((*a.values)[i]);
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const auto av = a.values;
        tp->record("abs", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, n);
            // subgradient at 0 is defined as 0
            for (long long i = 0; i < n; ++i) {
                const T v = (*av)[i];
                da[i] += v > T(0) ? dout[i] : (v < T(0) ? -dout[i] : T(0));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax

// Numerically stabilized softmax along `axis` (per-slice max subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape));
    long long outer = 1, inner = 1;
    const long long len = a.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const T* ap = a.ptr();
    T* op = out.mut_ptr();
    for (long long o = 0; o < outer; ++o) {
        for (long long in = 0; in < inner; ++in) {
            const long long base = o * len * inner + in;
            T mx = ap[base];
            for (long long k = 1; k < len; ++k) mx = std::max(mx, ap[base + k * inner]);
            T sum = T(0);
            for (long long k = 0; k < len; ++k) {
                const T e = std::exp(ap[base + k * inner] - mx);
                op[base + k * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (long long k = 0; k < len; ++k) op[base + k * inner] *= inv;
        }
    }
    detail::check_finite(out, "softmax");

    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const auto yv = out.values;
        const long long n = a.size();
        tp->record("softmax", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, n);
            // dx = y * (dy - sum(dy * y) along axis)
            for (long long o = 0; o < outer; ++o) {
                for (long long in = 0; in < inner; ++in) {
                    const long long base = o * len * inner + in;
                    T dot = T(0);
                    for (long long k = 0; k < len; ++k) dot += dout[base + k * inner] * (*yv)[base + k * inner];
                    for (long long k = 0; k < len; ++k) {
                        const long long idx = base + k * inner;
                        da[idx] += (*yv)[idx] * (dout[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// x * (1 / alpha_eff) for a learnable scalar alpha; |alpha| is floored at
// 1e-3 to keep logits bounded. Distinct from elementwise div so the
// division-free structural check on the enhancement path stays meaningful.
template <typename T>
Tensor<T> attn_scale(const Tensor<T>& x, const Tensor<T>& alpha) {
    if (alpha.size() != 1) throw ShapeError("attn_scale: alpha must be a scalar tensor, got " + shape_str(alpha.shape));
    const T floor_v = T(1e-3);
    const T araw = (*alpha.values)[0];
    const bool clamped = std::abs(araw) < floor_v;
    const T aeff = clamped ? (araw < T(0) ? -floor_v : floor_v) : araw;
    const T inv = T(1) / aeff;

    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const long long n = x.size();
    for (long long i = 0; i < n; ++i) (*out.values)[i] = (*x.values)[i] * inv;
    detail::check_finite(out, "attn_scale");

    if (Tape<T>* tp = detail::merge_tapes<T>({&x, &alpha})) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int xnode = x.node, anode = alpha.node;
        const auto xv = x.values;
        tp->record("attn_scale", {xnode, anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (xnode >= 0) {
                auto& dx = g.accum(xnode, n);
                for (long long i = 0; i < n; ++i) dx[i] += dout[i] * inv;
            }
            if (anode >= 0 && !clamped) {
                auto& da = g.accum(anode, 1);
                T acc = T(0);
                for (long long i = 0; i < n; ++i) acc += dout[i] * (*xv)[i];
                da[0] -= acc * inv * inv;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_size(new_shape) != a.size())
        throw ShapeError("reshape: element count mismatch, " + shape_str(a.shape) + " -> " + shape_str(new_shape));
    Tensor<T> out;
    out.shape = std::move(new_shape);
    out.values = a.values; // row-major view, no copy
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const long long n = a.size();
        tp->record("reshape", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            detail::axpy(g.accum(anode, n), dout);
        });
    }
    return out;
}

// Swap the last two dims (batched matrices allowed).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() < 2) throw ShapeError("transpose requires rank >= 2, got " + shape_str(a.shape));
    const int m = a.dim(a.rank() - 2), n = a.dim(a.rank() - 1);
    const long long nb = a.size() / (static_cast<long long>(m) * n);
    Shape os = a.shape;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* ap = a.ptr();
    T* op = out.mut_ptr();
    for (long long b = 0; b < nb; ++b) {
        const T* as = ap + b * m * n;
        T* osl = op + b * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) osl[static_cast<size_t>(j) * m + i] = as[static_cast<size_t>(i) * n + j];
    }
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const long long total = a.size();
        tp->record("transpose", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, total);
            for (long long b = 0; b < nb; ++b) {
                const T* ds = dout.data() + b * m * n;
                T* dst = da.data() + b * m * n;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i) dst[static_cast<size_t>(i) * n + j] += ds[static_cast<size_t>(j) * m + i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const Tensor<T>& first = parts.front();
    if (axis < 0 || axis >= first.rank())
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for " + shape_str(first.shape));
    int axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < first.rank(); ++i)
            if (i != axis && p.dim(i) != first.dim(i))
                throw ShapeError("concat: off-axis shapes disagree: " + shape_str(first.shape) + " vs " +
                                 shape_str(p.shape));
        axis_total += p.dim(axis);
    }
    Shape os = first.shape;
    os[static_cast<size_t>(axis)] = axis_total;
    Tensor<T> out = Tensor<T>::zeros(os);

    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first.dim(i);
    for (int i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);

    long long off = 0;
    std::vector<long long> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const long long plen = p.dim(axis) * inner;
        const T* src = p.ptr();
        T* dst = out.mut_ptr();
        for (long long o = 0; o < outer; ++o)
            std::copy(src + o * plen, src + (o + 1) * plen, dst + o * axis_total * inner + off);
        off += plen;
    }

    Tape<T>* tp = nullptr;
    for (const auto& p : parts)
        if (p.tape) {
            if (tp && tp != p.tape) throw UsageError("concat: operands recorded on different tapes");
            tp = p.tape;
        }
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        std::vector<int> in_nodes;
        std::vector<long long> sizes, plens;
        for (const auto& p : parts) {
            in_nodes.push_back(p.node);
            sizes.push_back(p.size());
            plens.push_back(p.dim(axis) * inner);
        }
        tp->record("concat", in_nodes, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            for (size_t pi = 0; pi < in_nodes.size(); ++pi) {
                if (in_nodes[pi] < 0) continue;
                auto& da = g.accum(in_nodes[pi], sizes[pi]);
                for (long long o = 0; o < outer; ++o) {
                    const T* src = dout.data() + o * axis_total * inner + offsets[pi];
                    T* dst = da.data() + o * plens[pi];
                    for (long long j = 0; j < plens[pi]; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

// Split into k equal parts along `axis`.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, int axis, int k) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("split: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape));
    if (k <= 0 || a.dim(axis) % k != 0)
        throw ShapeError("split: axis length " + std::to_string(a.dim(axis)) + " not divisible by " +
                         std::to_string(k));
    const int part = a.dim(axis) / k;
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const long long axis_total = a.dim(axis);

    std::vector<Tensor<T>> outs;
    for (int pi = 0; pi < k; ++pi) {
        Shape os = a.shape;
        os[static_cast<size_t>(axis)] = part;
        Tensor<T> out = Tensor<T>::zeros(os);
        const long long plen = static_cast<long long>(part) * inner;
        const long long off = static_cast<long long>(pi) * plen;
        const T* src = a.ptr();
        T* dst = out.mut_ptr();
        for (long long o = 0; o < outer; ++o)
            std::copy(src + o * axis_total * inner + off, src + o * axis_total * inner + off + plen, dst + o * plen);
        if (Tape<T>* tp = a.tape) {
            out.tape = tp;
            out.node = tp->add_node(out.shape);
            out.requires_grad = true;
            const int anode = a.node;
            const long long asz = a.size();
            tp->record("split", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
                if (anode < 0) return;
                auto& da = g.accum(anode, asz);
                for (long long o = 0; o < outer; ++o) {
                    const T* ds = dout.data() + o * plen;
                    T* dst2 = da.data() + o * axis_total * inner + off;
                    for (long long j = 0; j < plen; ++j) dst2[j] += ds[j];
                }
            });
        }
        outs.push_back(std::move(out));
    }
    return outs;
}

// Mean along one axis, keeping it as a singleton (H x W x 3 -> H x W x 1).
template <typename T>
Tensor<T> mean_over_axis(const Tensor<T>& a, int axis) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape));
    long long outer = 1, inner = 1;
    const long long len = a.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    Shape os = a.shape;
    os[static_cast<size_t>(axis)] = 1;
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* ap = a.ptr();
    T* op = out.mut_ptr();
    const T invl = T(1) / static_cast<T>(len);
    for (long long o = 0; o < outer; ++o)
        for (long long in = 0; in < inner; ++in) {
            T acc = T(0);
            for (long long k = 0; k < len; ++k) acc += ap[o * len * inner + k * inner + in];
            op[o * inner + in] = acc * invl;
        }
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const long long asz = a.size();
        tp->record("mean_axis", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, asz);
            for (long long o = 0; o < outer; ++o)
                for (long long in = 0; in < inner; ++in) {
                    const T dv = dout[o * inner + in] * invl;
                    for (long long k = 0; k < len; ++k) da[o * len * inner + k * inner + in] += dv;
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (T v : *a.values) acc += v;
    (*out.values)[0] = acc;
    if (Tape<T>* tp = a.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const int anode = a.node;
        const long long n = a.size();
        tp->record("sum_all", {anode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (anode < 0) return;
            auto& da = g.accum(anode, n);
            for (long long i = 0; i < n; ++i) da[i] += dout[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

} // namespace rxf
