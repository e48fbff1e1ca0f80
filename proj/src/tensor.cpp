#include "tstcc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "tstcc/util.hpp"

namespace tstcc {

// ---------------------------------------------------------------- shape utils

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

namespace {

void check_shape_valid(const char* op, const Shape& s) {
    if (s.empty()) throw ShapeError(std::string(op) + ": rank-0 shapes are not supported");
    for (std::size_t d : s)
        if (d == 0) throw ShapeError(std::string(op) + ": zero-sized dimension in " + shape_str(s));
}

std::size_t check_axis(const char* op, const Shape& s, int axis) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
    return static_cast<std::size_t>(axis);
}

void check_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

std::shared_ptr<TensorNode> new_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    return n;
}

// Broadcast of b onto a: equal shapes, single element, suffix of a's shape,
// or same rank with equal leading dims and trailing dims of 1.
enum class Bcast { Same, One, Suffix, Prefix };

struct BPlan {
    Bcast kind = Bcast::Same;
    std::size_t bn = 1;     // numel of b (Suffix)
    std::size_t inner = 1;  // collapsed trailing extent of a (Prefix)
};

BPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return {Bcast::Same, 0, 0};
    std::size_t bn = shape_numel(b);
    if (bn == 1) return {Bcast::One, 1, 0};
    if (b.size() < a.size()) {
        bool ok = true;
        std::size_t off = a.size() - b.size();
        for (std::size_t i = 0; i < b.size(); ++i) ok = ok && b[i] == a[off + i];
        if (ok) return {Bcast::Suffix, bn, 0};
    }
    if (b.size() == a.size()) {
        std::size_t p = 0;
        while (p < a.size() && b[p] == a[p]) ++p;
        bool ok = p < a.size();
        for (std::size_t i = p; i < b.size(); ++i) ok = ok && b[i] == 1;
        if (ok) {
            std::size_t inner = 1;
            for (std::size_t i = p; i < a.size(); ++i) inner *= a[i];
            return {Bcast::Prefix, bn, inner};
        }
    }
    throw ShapeError(std::string(op) + ": shapes not broadcast-compatible: " + shape_str(a) +
                     " vs " + shape_str(b));
}

inline std::size_t b_index(const BPlan& p, std::size_t flat) {
    switch (p.kind) {
        case Bcast::Same: return flat;
        case Bcast::One: return 0;
        case Bcast::Suffix: return flat % p.bn;
        case Bcast::Prefix: return flat / p.inner;
    }
    return 0;
}

// Visit (flat index of a, matching index of b) pairs in ascending flat order,
// dispatching on the broadcast kind once so the inner loops stay tight.
template <class F>
inline void bcast_loop(const BPlan& p, std::size_t n, F&& f) {
    switch (p.kind) {
        case Bcast::Same:
            for (std::size_t i = 0; i < n; ++i) f(i, i);
            break;
        case Bcast::One:
            for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0});
            break;
        case Bcast::Suffix:
            for (std::size_t base = 0; base < n; base += p.bn)
                for (std::size_t c = 0; c < p.bn; ++c) f(base + c, c);
            break;
        case Bcast::Prefix:
            for (std::size_t r = 0; r * p.inner < n; ++r) {
                const std::size_t base = r * p.inner;
                for (std::size_t c = 0; c < p.inner; ++c) f(base + c, r);
            }
            break;
    }
}

bool grads_wanted(const Tensor& a) { return a.requires_grad(); }
bool grads_wanted(const Tensor& a, const Tensor& b) {
    return a.requires_grad() || b.requires_grad();
}

}  // namespace

// ---------------------------------------------------------------- TensorNode

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ------------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape_valid("zeros", shape);
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape_valid("full", shape);
    auto n = new_node(std::move(shape));
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_valid("from_data", shape);
    if (shape_numel(shape) != data.size())
        throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ValueError("shape: undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
    const Shape& s = shape();
    if (i >= s.size())
        throw ShapeError("dim: index " + std::to_string(i) + " out of range for " + shape_str(s));
    return s[i];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::data() const {
    if (!node_) throw ValueError("data: undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
    if (!node_) throw ValueError("mutable_data: undefined tensor");
    return node_->data;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ValueError("grad: no gradient present (did backward run?)");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1)
        throw ShapeError("item: tensor has shape " + shape_str(shape()) + ", expected one element");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size())
        throw ShapeError("at: got " + std::to_string(idx.size()) + " indices for " + shape_str(s));
    std::size_t flat = 0, i = 0;
    for (std::size_t v : idx) {
        if (v >= s[i]) throw ShapeError("at: index out of range for " + shape_str(s));
        flat = flat * s[i] + v;
        ++i;
    }
    return node_->data[flat];
}

Tensor Tensor::detach() const {
    if (!node_) throw ValueError("detach: undefined tensor");
    return Tensor::from_data(node_->shape, node_->data, false);
}

void Tensor::backward() const {
    if (!node_) throw ValueError("backward: undefined tensor");
    if (node_->data.size() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(node_->shape));
    if (!node_->requires_grad)
        throw ValueError("backward: loss does not depend on any requires_grad tensor");

    // Iterative post-order DFS over grad-requiring ancestry; reversing the
    // post-order yields consumers-before-producers.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& fr = stack.back();
        if (fr.next < fr.n->parents.size()) {
            TensorNode* p = fr.n->parents[fr.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(fr.n);
            stack.pop_back();
        }
    }

    // Interior grads are scratch for this sweep; leaves accumulate across
    // sweeps until explicitly zeroed.
    for (TensorNode* n : order)
        if (n->backward_fn) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backward_fn) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backward_fn(*n);
    }
}

// ------------------------------------------------------------- elementwise

Tensor add(const Tensor& a0, const Tensor& b0) {
    const bool flip = b0.numel() > a0.numel();
    const Tensor& a = flip ? b0 : a0;
    const Tensor& b = flip ? a0 : b0;
    BPlan plan = plan_broadcast("add", a.shape(), b.shape());
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    const std::size_t n = out->data.size();
    bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { po[f] = pa[f] + pb[bi]; });
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), plan](const TensorNode& self) {
            const double* g = self.grad.data();
            const std::size_t n = self.grad.size();
            if (na->requires_grad) {
                double* da = na->grad.data();
                for (std::size_t f = 0; f < n; ++f) da[f] += g[f];
            }
            if (nb->requires_grad) {
                double* db = nb->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { db[bi] += g[f]; });
            }
        };
    }
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BPlan plan = plan_broadcast("sub", a.shape(), b.shape());
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    const std::size_t n = out->data.size();
    bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { po[f] = pa[f] - pb[bi]; });
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), plan](const TensorNode& self) {
            const double* g = self.grad.data();
            const std::size_t n = self.grad.size();
            if (na->requires_grad) {
                double* da = na->grad.data();
                for (std::size_t f = 0; f < n; ++f) da[f] += g[f];
            }
            if (nb->requires_grad) {
                double* db = nb->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { db[bi] -= g[f]; });
            }
        };
    }
    return Tensor(out);
}

Tensor mul(const Tensor& a0, const Tensor& b0) {
    const bool flip = b0.numel() > a0.numel();
    const Tensor& a = flip ? b0 : a0;
    const Tensor& b = flip ? a0 : b0;
    BPlan plan = plan_broadcast("mul", a.shape(), b.shape());
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    const std::size_t n = out->data.size();
    bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { po[f] = pa[f] * pb[bi]; });
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), plan](const TensorNode& self) {
            const double* g = self.grad.data();
            const double* pa = na->data.data();
            const double* pb = nb->data.data();
            const std::size_t n = self.grad.size();
            if (na->requires_grad) {
                double* da = na->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { da[f] += g[f] * pb[bi]; });
            }
            if (nb->requires_grad) {
                double* db = nb->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { db[bi] += g[f] * pa[f]; });
            }
        };
    }
    return Tensor(out);
}

Tensor div(const Tensor& a, const Tensor& b) {
    BPlan plan = plan_broadcast("div", a.shape(), b.shape());
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    const std::size_t n = out->data.size();
    bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { po[f] = pa[f] / pb[bi]; });
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), plan](const TensorNode& self) {
            const double* g = self.grad.data();
            const double* y = self.data.data();
            const double* pb = nb->data.data();
            const std::size_t n = self.grad.size();
            if (na->requires_grad) {
                double* da = na->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) { da[f] += g[f] / pb[bi]; });
            }
            if (nb->requires_grad) {
                double* db = nb->grad.data();
                bcast_loop(plan, n, [&](std::size_t f, std::size_t bi) {
                    db[bi] -= g[f] * y[f] / pb[bi];
                });
            }
        };
    }
    return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = pa[f] * s;
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), s](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f] * s;
        };
    }
    return Tensor(out);
}

Tensor add_scalar(const Tensor& a, double s) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = pa[f] + s;
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f];
        };
    }
    return Tensor(out);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = pa[f] > 0.0 ? pa[f] : 0.0;
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* x = na->data.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f)
                da[f] += x[f] > 0.0 ? g[f] : 0.0;
        };
    }
    return Tensor(out);
}

Tensor exp(const Tensor& a) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = std::exp(pa[f]);
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* y = self.data.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f] * y[f];
        };
    }
    return Tensor(out);
}

Tensor log(const Tensor& a) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = std::log(pa[f]);
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* x = na->data.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f] / x[f];
        };
    }
    return Tensor(out);
}

Tensor sqrt(const Tensor& a) {
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t f = 0; f < out->data.size(); ++f) po[f] = std::sqrt(pa[f]);
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* y = self.data.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f] * 0.5 / y[f];
        };
    }
    return Tensor(out);
}

// -------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    auto out = new_node({1});
    const double* pa = a.data().data();
    double acc = 0.0;
    for (std::size_t f = 0; f < a.numel(); ++f) acc += pa[f];
    out->data[0] = acc;
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            const double g = self.grad[0];
            double* da = na->grad.data();
            for (std::size_t f = 0; f < na->data.size(); ++f) da[f] += g;
        };
    }
    return Tensor(out);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis) {
    std::size_t ax = check_axis("sum_axis", a.shape(), axis);
    const Shape& s = a.shape();
    Shape os = s;
    os[ax] = 1;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[ax];
    auto out = new_node(os);
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < n; ++j) {
            const double* row = pa + (o * n + j) * inner;
            double* dst = po + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
        }
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), outer, n, inner](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < n; ++j) {
                    double* row = da + (o * n + j) * inner;
                    const double* src = g + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) row[i] += src[i];
                }
        };
    }
    return Tensor(out);
}

Tensor mean_axis(const Tensor& a, int axis) {
    std::size_t ax = check_axis("mean_axis", a.shape(), axis);
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.shape()[ax]));
}

// --------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& a, Shape new_shape) {
    check_shape_valid("reshape", new_shape);
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    auto out = std::make_shared<TensorNode>();
    out->shape = std::move(new_shape);
    out->data = a.data();
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node()](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[f] += g[f];
        };
    }
    return Tensor(out);
}

Tensor swap_axes(const Tensor& a, int ax0_, int ax1_) {
    std::size_t ax0 = check_axis("swap_axes", a.shape(), ax0_);
    std::size_t ax1 = check_axis("swap_axes", a.shape(), ax1_);
    if (ax0 == ax1) return reshape(a, a.shape());
    if (ax0 > ax1) std::swap(ax0, ax1);
    Shape os = a.shape();
    std::swap(os[ax0], os[ax1]);

    // Factor the copy into (outer, d0, mid, d1, inner) so each innermost run
    // is contiguous in both layouts.
    const Shape& is = a.shape();
    std::size_t outer = 1, mid = 1, inner = 1;
    for (std::size_t i = 0; i < ax0; ++i) outer *= is[i];
    for (std::size_t i = ax0 + 1; i < ax1; ++i) mid *= is[i];
    for (std::size_t i = ax1 + 1; i < is.size(); ++i) inner *= is[i];
    const std::size_t d0 = is[ax0], d1 = is[ax1];

    auto out = new_node(os);
    const double* pa = a.data().data();
    double* po = out->data.data();
    const std::size_t run = inner, block = d0 * mid * d1 * inner;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i0 = 0; i0 < d0; ++i0)
            for (std::size_t m = 0; m < mid; ++m)
                for (std::size_t i1 = 0; i1 < d1; ++i1) {
                    const double* src = pa + o * block + ((i0 * mid + m) * d1 + i1) * run;
                    double* dst = po + o * block + ((i1 * mid + m) * d0 + i0) * run;
                    for (std::size_t f = 0; f < run; ++f) dst[f] = src[f];
                }
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), outer, d0, mid, d1, run, block](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i0 = 0; i0 < d0; ++i0)
                    for (std::size_t m = 0; m < mid; ++m)
                        for (std::size_t i1 = 0; i1 < d1; ++i1) {
                            double* dst = da + o * block + ((i0 * mid + m) * d1 + i1) * run;
                            const double* src = g + o * block + ((i1 * mid + m) * d0 + i0) * run;
                            for (std::size_t f = 0; f < run; ++f) dst[f] += src[f];
                        }
        };
    }
    return Tensor(out);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    std::size_t ax = check_axis("concat", a.shape(), axis);
    if (a.rank() != b.rank())
        throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != ax && a.shape()[i] != b.shape()[i])
            throw ShapeError("concat: shapes differ off-axis: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t na = s[ax], nb = b.shape()[ax];
    Shape os = s;
    os[ax] = na + nb;
    auto out = new_node(os);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    const std::size_t blk_a = na * inner, blk_b = nb * inner, blk_o = (na + nb) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(pa + o * blk_a, pa + (o + 1) * blk_a, po + o * blk_o);
        std::copy(pb + o * blk_b, pb + (o + 1) * blk_b, po + o * blk_o + blk_a);
    }
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na_ = a.node(), nb_ = b.node(), outer, blk_a, blk_b,
                            blk_o](const TensorNode& self) {
            const double* g = self.grad.data();
            if (na_->requires_grad) {
                double* da = na_->grad.data();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < blk_a; ++i) da[o * blk_a + i] += g[o * blk_o + i];
            }
            if (nb_->requires_grad) {
                double* db = nb_->grad.data();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < blk_b; ++i)
                        db[o * blk_b + i] += g[o * blk_o + blk_a + i];
            }
        };
    }
    return Tensor(out);
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t len) {
    std::size_t ax = check_axis("slice", a.shape(), axis);
    const Shape& s = a.shape();
    if (len == 0 || start + len > s[ax])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") invalid for axis extent " +
                         std::to_string(s[ax]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[ax];
    Shape os = s;
    os[ax] = len;
    auto out = new_node(os);
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(pa + (o * n + start) * inner, pa + (o * n + start + len) * inner,
                  po + o * len * inner);
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), outer, inner, n, start, len](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len * inner; ++i)
                    da[(o * n + start) * inner + i] += g[o * len * inner + i];
        };
    }
    return Tensor(out);
}

// ----------------------------------------------------------- linear algebra

namespace {

// Register-tiled microkernel: C (TIxTJ tile, stride ldc) += A (TI rows,
// stride lda) · B (k rows, stride ldb).  Each output element accumulates its
// k products in index order within exactly one call, so for fixed shapes the
// per-element operation sequence is fixed and results are reproducible.
template <std::size_t TI, std::size_t TJ>
inline void micro_block(std::size_t k, const double* __restrict A, std::size_t lda,
                        const double* __restrict B, std::size_t ldb, double* __restrict C,
                        std::size_t ldc) {
    double acc[TI][TJ] = {};
    for (std::size_t p = 0; p < k; ++p) {
        const double* __restrict Bp = B + p * ldb;
        for (std::size_t ii = 0; ii < TI; ++ii) {
            const double w = A[ii * lda + p];
            for (std::size_t jj = 0; jj < TJ; ++jj) acc[ii][jj] += w * Bp[jj];
        }
    }
    for (std::size_t ii = 0; ii < TI; ++ii)
        for (std::size_t jj = 0; jj < TJ; ++jj) C[ii * ldc + jj] += acc[ii][jj];
}

template <std::size_t TI>
inline void micro_rows(std::size_t n, std::size_t k, const double* A, std::size_t lda,
                       const double* B, std::size_t ldb, double* C, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 32 <= n; j += 32) micro_block<TI, 32>(k, A, lda, B + j, ldb, C + j, ldc);
    for (; j + 8 <= n; j += 8) micro_block<TI, 8>(k, A, lda, B + j, ldb, C + j, ldc);
    for (; j + 4 <= n; j += 4) micro_block<TI, 4>(k, A, lda, B + j, ldb, C + j, ldc);
    for (; j < n; ++j) micro_block<TI, 1>(k, A, lda, B + j, ldb, C + j, ldc);
}

// C (m×n) += A (m×k) · B (k×n), all row-major contiguous.  Six rows by four
// vector lanes keeps enough independent accumulator chains in flight to cover
// FMA latency on one core; leftover rows get the widest tile that still fits.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
             double* C) {
    std::size_t i = 0;
    for (; i + 6 <= m; i += 6) micro_rows<6>(n, k, A + i * k, k, B, n, C + i * n, n);
    switch (m - i) {
        case 5: micro_rows<5>(n, k, A + i * k, k, B, n, C + i * n, n); break;
        case 4: micro_rows<4>(n, k, A + i * k, k, B, n, C + i * n, n); break;
        case 3: micro_rows<3>(n, k, A + i * k, k, B, n, C + i * n, n); break;
        case 2: micro_rows<2>(n, k, A + i * k, k, B, n, C + i * n, n); break;
        case 1: micro_rows<1>(n, k, A + i * k, k, B, n, C + i * n, n); break;
        default: break;
    }
}

// rows×cols row-major -> cols×rows row-major into `out`.
void transpose_raw(const double* src, std::size_t rows, std::size_t cols, double* out) {
    constexpr std::size_t TB = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += TB)
        for (std::size_t c0 = 0; c0 < cols; c0 += TB) {
            const std::size_t r1 = std::min(rows, r0 + TB), c1 = std::min(cols, c0 + TB);
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = src[r * cols + c];
        }
}

struct MatDims {
    std::size_t m, n, k;
};

// C_i (m×n) += op(A_i)·op(B_i) for each of `batch` slices spaced sa/sb/sc
// doubles apart; everything row-major and contiguous.  Caller zeroes C when
// overwrite semantics are wanted.  Transposed operands are materialized once
// per call (all slices in one scratch pass) so the one streaming kernel
// serves all four layouts.
void gemm_acc_batched(bool trans_a, bool trans_b, const MatDims& d, std::size_t batch,
                      const double* A, std::size_t sa, const double* B, std::size_t sb, double* C,
                      std::size_t sc) {
    thread_local std::vector<double> scratch_a, scratch_b;
    if (trans_a) {
        scratch_a.resize(batch * d.m * d.k);
        for (std::size_t i = 0; i < batch; ++i)
            transpose_raw(A + i * sa, d.k, d.m, scratch_a.data() + i * d.m * d.k);
        A = scratch_a.data();
        sa = d.m * d.k;
    }
    if (trans_b) {
        scratch_b.resize(batch * d.k * d.n);
        for (std::size_t i = 0; i < batch; ++i)
            transpose_raw(B + i * sb, d.n, d.k, scratch_b.data() + i * d.k * d.n);
        B = scratch_b.data();
        sb = d.k * d.n;
    }
    for (std::size_t i = 0; i < batch; ++i)
        gemm_nn(d.m, d.n, d.k, A + i * sa, B + i * sb, C + i * sc);
}

// Single-slice convenience wrapper.
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              const double* A, const double* B, double* C) {
    gemm_acc_batched(trans_a, trans_b, {m, n, k}, 1, A, 0, B, 0, C, 0);
}

MatDims matmul_dims(const char* op, const Shape& a, const Shape& b, bool ta, bool tb,
                    std::size_t off) {
    const std::size_t m = ta ? a[off + 1] : a[off];
    const std::size_t ka = ta ? a[off] : a[off + 1];
    const std::size_t kb = tb ? b[off + 1] : b[off];
    const std::size_t n = tb ? b[off] : b[off + 1];
    if (ka != kb)
        throw ShapeError(std::string(op) + ": inner dimensions disagree: " + shape_str(a) +
                         (ta ? "^T" : "") + " vs " + shape_str(b) + (tb ? "^T" : ""));
    return {m, n, ka};
}

// Gradients of C_i = op(A_i)·op(B_i) accumulated straight into dA/dB via gemm
// on dC, all `batch` slices per scratch pass.
void matmul_backward_batched(bool ta, bool tb, const MatDims& d, std::size_t batch,
                             const double* A, std::size_t sa, const double* B, std::size_t sb,
                             const double* dC, double* dA, double* dB) {
    const std::size_t sc = d.m * d.n;
    if (dA) {
        if (!ta) {
            // dA (m×k) = dC·op(B)ᵀ
            gemm_acc_batched(false, !tb, {d.m, d.k, d.n}, batch, dC, sc, B, sb, dA, sa);
        } else if (!tb) {
            // dA (k×m) = B·dCᵀ
            gemm_acc_batched(false, true, {d.k, d.m, d.n}, batch, B, sb, dC, sc, dA, sa);
        } else {
            // dA (k×m) = Bᵀ·dCᵀ
            gemm_acc_batched(true, true, {d.k, d.m, d.n}, batch, B, sb, dC, sc, dA, sa);
        }
    }
    if (dB) {
        if (!tb) {
            // dB (k×n) = op(A)ᵀ·dC
            gemm_acc_batched(!ta, false, {d.k, d.n, d.m}, batch, A, sa, dC, sc, dB, sb);
        } else if (!ta) {
            // dB (n×k) = dCᵀ·A
            gemm_acc_batched(true, false, {d.n, d.k, d.m}, batch, dC, sc, A, sa, dB, sb);
        } else {
            // dB (n×k) = dCᵀ·Aᵀ
            gemm_acc_batched(true, true, {d.n, d.k, d.m}, batch, dC, sc, A, sa, dB, sb);
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_rank("matmul", a, 2);
    check_rank("matmul", b, 2);
    MatDims d = matmul_dims("matmul", a.shape(), b.shape(), trans_a, trans_b, 0);
    auto out = new_node({d.m, d.n});
    gemm_acc(trans_a, trans_b, d.m, d.n, d.k, a.data().data(), b.data().data(), out->data.data());
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), trans_a, trans_b,
                            d](const TensorNode& self) {
            matmul_backward_batched(trans_a, trans_b, d, 1, na->data.data(), 0, nb->data.data(), 0,
                                    self.grad.data(),
                                    na->requires_grad ? na->grad.data() : nullptr,
                                    nb->requires_grad ? nb->grad.data() : nullptr);
        };
    }
    return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_rank("bmm", a, 3);
    check_rank("bmm", b, 3);
    if (a.dim(0) != b.dim(0))
        throw ShapeError("bmm: batch dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    MatDims d = matmul_dims("bmm", a.shape(), b.shape(), trans_a, trans_b, 1);
    const std::size_t batch = a.dim(0);
    auto out = new_node({batch, d.m, d.n});
    const std::size_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), so = d.m * d.n;
    gemm_acc_batched(trans_a, trans_b, d, batch, a.data().data(), sa, b.data().data(), sb,
                     out->data.data(), so);
    if (grads_wanted(a, b)) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backward_fn = [na = a.node(), nb = b.node(), trans_a, trans_b, d, batch, sa,
                            sb](const TensorNode& self) {
            matmul_backward_batched(trans_a, trans_b, d, batch, na->data.data(), sa,
                                    nb->data.data(), sb, self.grad.data(),
                                    na->requires_grad ? na->grad.data() : nullptr,
                                    nb->requires_grad ? nb->grad.data() : nullptr);
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------- softmax primitives

namespace {

struct AxisSplit {
    std::size_t outer, n, inner;
};

AxisSplit axis_split(const Shape& s, std::size_t ax) {
    AxisSplit sp{1, s[ax], 1};
    for (std::size_t i = 0; i < ax; ++i) sp.outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    std::size_t ax = check_axis("softmax", a.shape(), axis);
    AxisSplit sp = axis_split(a.shape(), ax);
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double mx = pa[base];
            for (std::size_t j = 1; j < sp.n; ++j)
                mx = std::max(mx, pa[base + j * sp.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) {
                double e = std::exp(pa[base + j * sp.inner] - mx);
                po[base + j * sp.inner] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (std::size_t j = 0; j < sp.n; ++j) po[base + j * sp.inner] *= inv;
        }
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), sp](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* y = self.data.data();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.n * sp.inner + i;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < sp.n; ++j) {
                        const std::size_t f = base + j * sp.inner;
                        dot += g[f] * y[f];
                    }
                    for (std::size_t j = 0; j < sp.n; ++j) {
                        const std::size_t f = base + j * sp.inner;
                        da[f] += y[f] * (g[f] - dot);
                    }
                }
        };
    }
    return Tensor(out);
}

Tensor log_softmax(const Tensor& a, int axis) {
    std::size_t ax = check_axis("log_softmax", a.shape(), axis);
    AxisSplit sp = axis_split(a.shape(), ax);
    auto out = new_node(a.shape());
    const double* pa = a.data().data();
    double* po = out->data.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double mx = pa[base];
            for (std::size_t j = 1; j < sp.n; ++j)
                mx = std::max(mx, pa[base + j * sp.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) s += std::exp(pa[base + j * sp.inner] - mx);
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < sp.n; ++j) {
                const std::size_t f = base + j * sp.inner;
                po[f] = pa[f] - lse;
            }
        }
    if (grads_wanted(a)) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backward_fn = [na = a.node(), sp](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            const double* y = self.data.data();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.n * sp.inner + i;
                    double gs = 0.0;
                    for (std::size_t j = 0; j < sp.n; ++j) gs += g[base + j * sp.inner];
                    for (std::size_t j = 0; j < sp.n; ++j) {
                        const std::size_t f = base + j * sp.inner;
                        da[f] += g[f] - std::exp(y[f]) * gs;
                    }
                }
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------- convolution

Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (padding < 0) throw ValueError("conv1d: negative padding");
    return conv1d(input, kernel, stride, padding, padding);
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int pad_left, int pad_right) {
    check_rank("conv1d", input, 3);
    check_rank("conv1d", kernel, 3);
    if (stride < 1) throw ValueError("conv1d: stride must be >= 1, got " + std::to_string(stride));
    if (pad_left < 0 || pad_right < 0) throw ValueError("conv1d: negative padding");
    const std::size_t B = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const std::size_t Cout = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != Cin)
        throw ShapeError("conv1d: kernel channels " + shape_str(kernel.shape()) +
                         " do not match input " + shape_str(input.shape()));
    const std::size_t Lp = L + static_cast<std::size_t>(pad_left) + static_cast<std::size_t>(pad_right);
    if (k > Lp)
        throw ShapeError("conv1d: kernel width " + std::to_string(k) +
                         " exceeds padded input length " + std::to_string(Lp));
    const std::size_t st = static_cast<std::size_t>(stride);
    const std::size_t Lout = (Lp - k) / st + 1;
    const std::size_t pl = static_cast<std::size_t>(pad_left);

    auto out = new_node({B, Cout, Lout});
    const double* X = input.data().data();
    const double* K = kernel.data().data();
    double* Y = out->data.data();

    // One sample's patches as a (Cin*k, Lout) matrix so the convolution and
    // both of its gradients run through the shared GEMM kernel.  Cells that
    // fall into the padding are never written and stay zero, so the buffer is
    // zeroed once up front and only the in-range cells refresh per sample.
    const std::size_t kc = Cin * k;
    // valid outputs t for tap j are those with t*st + j - pl inside [0, L)
    auto tap_range = [=](std::size_t j) {
        const std::size_t lo = j >= pl ? 0 : (pl - j + st - 1) / st;
        const std::size_t hi = pl + L > j ? std::min(Lout, (pl + L - j + st - 1) / st) : 0;
        return std::pair<std::size_t, std::size_t>{lo, std::max(lo, hi)};
    };
    auto fill_patches = [=](const double* Xb, double* P) {
        for (std::size_t c = 0; c < Cin; ++c) {
            const double* Xr = Xb + c * L;
            for (std::size_t j = 0; j < k; ++j) {
                double* Pr = P + (c * k + j) * Lout;
                const auto [lo, hi] = tap_range(j);
                for (std::size_t t = lo; t < hi; ++t) Pr[t] = Xr[t * st + j - pl];
            }
        }
    };

    const bool track = grads_wanted(input, kernel);
    // Training keeps all samples' patches alive for the backward pass;
    // inference reuses one sample-sized buffer.
    auto patches = std::make_shared<std::vector<double>>(track ? B * kc * Lout : kc * Lout, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        double* Pb = patches->data() + (track ? b * kc * Lout : 0);
        fill_patches(X + b * Cin * L, Pb);
        gemm_acc(false, false, Cout, Lout, kc, K, Pb, Y + b * Cout * Lout);
    }

    if (track) {
        out->requires_grad = true;
        out->parents = {input.node(), kernel.node()};
        out->backward_fn = [ni = input.node(), nk = kernel.node(), patches, tap_range, B, Cin,
                            Cout, L, Lout, k, kc, st, pl](const TensorNode& self) {
            const double* K = nk->data.data();
            const double* G = self.grad.data();
            double* dX = ni->requires_grad ? ni->grad.data() : nullptr;
            double* dK = nk->requires_grad ? nk->grad.data() : nullptr;
            if (dK)
                gemm_acc_batched(false, true, {Cout, kc, Lout}, B, G, Cout * Lout,
                                 patches->data(), kc * Lout, dK, 0);
            if (dX) {
                std::vector<double> dP(kc * Lout);
                for (std::size_t b = 0; b < B; ++b) {
                    std::fill(dP.begin(), dP.end(), 0.0);
                    gemm_acc(true, false, kc, Lout, Cout, K, G + b * Cout * Lout, dP.data());
                    double* dXb = dX + b * Cin * L;
                    for (std::size_t c = 0; c < Cin; ++c)
                        for (std::size_t j = 0; j < k; ++j) {
                            const double* dPr = dP.data() + (c * k + j) * Lout;
                            double* dXr = dXb + c * L;
                            const auto [lo, hi] = tap_range(j);
                            for (std::size_t t = lo; t < hi; ++t) dXr[t * st + j - pl] += dPr[t];
                        }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor maxpool1d(const Tensor& input, int kernel, int stride) {
    check_rank("maxpool1d", input, 3);
    if (kernel < 1 || stride < 1) throw ValueError("maxpool1d: kernel and stride must be >= 1");
    const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
    const std::size_t k = static_cast<std::size_t>(kernel), st = static_cast<std::size_t>(stride);
    if (k > L)
        throw ShapeError("maxpool1d: window " + std::to_string(k) + " exceeds length " +
                         std::to_string(L));
    const std::size_t Lout = (L - k) / st + 1;
    auto out = new_node({B, C, Lout});
    const double* X = input.data().data();
    double* Y = out->data.data();
    std::vector<std::size_t> arg(out->data.size());
    for (std::size_t r = 0; r < B * C; ++r) {
        const double* Xr = X + r * L;
        double* Yr = Y + r * Lout;
        for (std::size_t t = 0; t < Lout; ++t) {
            std::size_t best = t * st;
            double v = Xr[best];
            for (std::size_t j = 1; j < k; ++j)
                if (Xr[t * st + j] > v) {
                    v = Xr[t * st + j];
                    best = t * st + j;
                }
            Yr[t] = v;
            arg[r * Lout + t] = r * L + best;
        }
    }
    if (grads_wanted(input)) {
        out->requires_grad = true;
        out->parents = {input.node()};
        out->backward_fn = [na = input.node(), arg = std::move(arg)](const TensorNode& self) {
            double* da = na->grad.data();
            const double* g = self.grad.data();
            for (std::size_t f = 0; f < self.grad.size(); ++f) da[arg[f]] += g[f];
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------ normalization

Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    std::vector<double>& running_mean, std::vector<double>& running_var,
                    bool train, double momentum, double eps) {
    check_rank("batch_norm1d", x, 3);
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("batch_norm1d: gamma/beta must have shape (" + std::to_string(C) +
                         "), got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (running_mean.size() != C || running_var.size() != C)
        throw ValueError("batch_norm1d: running stats must have " + std::to_string(C) +
                         " entries");
    const std::size_t m = B * L;
    const double* X = x.data().data();
    const double* G = gamma.data().data();
    const double* Bt = beta.data().data();

    std::vector<double> mu(C), invstd(C);
    if (train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* Xr = X + (b * C + c) * L;
                for (std::size_t l = 0; l < L; ++l) s += Xr[l];
            }
            const double mc = s / static_cast<double>(m);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* Xr = X + (b * C + c) * L;
                for (std::size_t l = 0; l < L; ++l) {
                    const double d = Xr[l] - mc;
                    v += d * d;
                }
            }
            const double vc = v / static_cast<double>(m);
            mu[c] = mc;
            invstd[c] = 1.0 / std::sqrt(vc + eps);
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mc;
            const double unbiased = m > 1 ? vc * static_cast<double>(m) / static_cast<double>(m - 1) : vc;
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = running_mean[c];
            invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
        }
    }

    auto out = new_node(x.shape());
    double* Y = out->data.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* Xr = X + (b * C + c) * L;
            double* Yr = Y + (b * C + c) * L;
            const double mc = mu[c], is = invstd[c], gc = G[c], bc = Bt[c];
            for (std::size_t l = 0; l < L; ++l) Yr[l] = gc * (Xr[l] - mc) * is + bc;
        }

    if (grads_wanted(x, gamma) || beta.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        out->backward_fn = [nx = x.node(), ng = gamma.node(), nb = beta.node(), mu, invstd, B, C,
                            L, m, train](const TensorNode& self) {
            const double* X = nx->data.data();
            const double* G = ng->data.data();
            const double* g = self.grad.data();
            double* dX = nx->requires_grad ? nx->grad.data() : nullptr;
            double* dG = ng->requires_grad ? ng->grad.data() : nullptr;
            double* dB = nb->requires_grad ? nb->grad.data() : nullptr;
            const double md = static_cast<double>(m);
            for (std::size_t c = 0; c < C; ++c) {
                const double mc = mu[c], is = invstd[c], gc = G[c];
                double s1 = 0.0, s2 = 0.0, sg = 0.0, sgx = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const double* Xr = X + (b * C + c) * L;
                    const double* gr = g + (b * C + c) * L;
                    for (std::size_t l = 0; l < L; ++l) {
                        const double xh = (Xr[l] - mc) * is;
                        sg += gr[l];
                        sgx += gr[l] * xh;
                    }
                }
                s1 = sg * gc;
                s2 = sgx * gc;
                if (dG) dG[c] += sgx;
                if (dB) dB[c] += sg;
                if (dX) {
                    for (std::size_t b = 0; b < B; ++b) {
                        const double* Xr = X + (b * C + c) * L;
                        const double* gr = g + (b * C + c) * L;
                        double* dXr = dX + (b * C + c) * L;
                        for (std::size_t l = 0; l < L; ++l) {
                            const double xh = (Xr[l] - mc) * is;
                            if (train) {
                                dXr[l] += is * (gr[l] * gc - s1 / md - xh * s2 / md);
                            } else {
                                dXr[l] += gr[l] * gc * is;
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: needs rank >= 1");
    const std::size_t h = x.shape().back();
    if (gamma.shape() != Shape{h} || beta.shape() != Shape{h})
        throw ShapeError("layer_norm: gamma/beta must have shape (" + std::to_string(h) +
                         "), got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::size_t rows = x.numel() / h;
    const double* X = x.data().data();
    const double* G = gamma.data().data();
    const double* Bt = beta.data().data();
    std::vector<double> mu(rows), invstd(rows);
    auto out = new_node(x.shape());
    double* Y = out->data.data();
    const double hd = static_cast<double>(h);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* Xr = X + r * h;
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) s += Xr[j];
        const double mc = s / hd;
        double v = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            const double d = Xr[j] - mc;
            v += d * d;
        }
        const double is = 1.0 / std::sqrt(v / hd + eps);
        mu[r] = mc;
        invstd[r] = is;
        double* Yr = Y + r * h;
        for (std::size_t j = 0; j < h; ++j) Yr[j] = G[j] * (Xr[j] - mc) * is + Bt[j];
    }
    if (grads_wanted(x, gamma) || beta.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        out->backward_fn = [nx = x.node(), ng = gamma.node(), nb = beta.node(),
                            mu = std::move(mu), invstd = std::move(invstd), rows,
                            h](const TensorNode& self) {
            const double* X = nx->data.data();
            const double* G = ng->data.data();
            const double* g = self.grad.data();
            double* dX = nx->requires_grad ? nx->grad.data() : nullptr;
            double* dG = ng->requires_grad ? ng->grad.data() : nullptr;
            double* dB = nb->requires_grad ? nb->grad.data() : nullptr;
            const double hd = static_cast<double>(h);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* Xr = X + r * h;
                const double* gr = g + r * h;
                const double mc = mu[r], is = invstd[r];
                double a = 0.0, b2 = 0.0;
                for (std::size_t j = 0; j < h; ++j) {
                    const double xh = (Xr[j] - mc) * is;
                    const double dxh = gr[j] * G[j];
                    a += dxh;
                    b2 += dxh * xh;
                    if (dG) dG[j] += gr[j] * xh;
                    if (dB) dB[j] += gr[j];
                }
                a /= hd;
                b2 /= hd;
                if (dX) {
                    double* dXr = dX + r * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double xh = (Xr[j] - mc) * is;
                        dXr[j] += is * (gr[j] * G[j] - a - xh * b2);
                    }
                }
            }
        };
    }
    return Tensor(out);
}

}  // namespace tstcc
