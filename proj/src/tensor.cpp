#include "crct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <unordered_set>

namespace crct {

namespace detail {

struct Node {
    std::vector<int> shape;
    Eigen::ArrayXd value;
    std::optional<Eigen::ArrayXd> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;
};

struct Access {
    static const std::shared_ptr<Node>& get(const Tensor& t) {
        if (!t.node_) throw Error("operation on an undefined tensor");
        return t.node_;
    }
    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }
};

}  // namespace detail

using detail::Access;
using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::shared_ptr<Node> new_node(std::vector<int> shape) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    for (int d : n->shape)
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(n->shape));
    n->value.resize(numel_of(n->shape));
    return n;
}

void accum(const std::shared_ptr<Node>& n, const Eigen::ArrayXd& g) {
    if (!n->requires_grad) return;
    if (!n->grad) n->grad = Eigen::ArrayXd::Zero(n->value.size());
    *n->grad += g;
}

bool taping(std::initializer_list<const std::shared_ptr<Node>*> parents) {
    if (!g_grad_enabled) return false;
    for (const auto* p : parents)
        if ((*p)->requires_grad) return true;
    return false;
}

// splits a shape at `axis` into outer x axis x inner extents for strided copies
struct AxisSplit {
    std::int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.axis = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
        s.inner *= shape[i];
    return s;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->value.setZero();
    n->requires_grad = requires_grad;
    return Access::wrap(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->value.setConstant(v);
    n->requires_grad = requires_grad;
    return Access::wrap(std::move(n));
}

Tensor Tensor::from_vector(std::vector<int> shape, const std::vector<double>& data,
                           bool requires_grad) {
    auto n = new_node(std::move(shape));
    if (static_cast<std::int64_t>(data.size()) != n->value.size())
        throw ShapeError("data length " + std::to_string(data.size()) + " does not fill shape " +
                         shape_str(n->shape));
    for (std::int64_t i = 0; i < n->value.size(); ++i)
        n->value[i] = data[static_cast<std::size_t>(i)];
    n->requires_grad = requires_grad;
    return Access::wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

const std::vector<int>& Tensor::shape() const { return Access::get(*this)->shape; }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return Access::get(*this)->value.size(); }

double Tensor::item() const {
    const auto& n = Access::get(*this);
    if (n->value.size() != 1)
        throw ShapeError("item() needs a single element, shape is " + shape_str(n->shape));
    return n->value[0];
}

double Tensor::at(const std::vector<int>& idx) const {
    const auto& n = Access::get(*this);
    if (idx.size() != n->shape.size())
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs shape " +
                         shape_str(n->shape));
    std::int64_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= n->shape[i])
            throw ShapeError("index out of range for shape " + shape_str(n->shape));
        off = off * n->shape[i] + idx[i];
    }
    return n->value[off];
}

const Eigen::ArrayXd& Tensor::value() const { return Access::get(*this)->value; }
Eigen::ArrayXd& Tensor::raw() { return Access::get(*this)->value; }
bool Tensor::requires_grad() const { return Access::get(*this)->requires_grad; }
bool Tensor::has_grad() const { return Access::get(*this)->grad.has_value(); }

const Eigen::ArrayXd& Tensor::grad() const {
    const auto& n = Access::get(*this);
    if (!n->grad) throw Error("gradient not populated");
    return *n->grad;
}

void Tensor::zero_grad() { Access::get(*this)->grad.reset(); }

void Tensor::ensure_grad() {
    const auto& n = Access::get(*this);
    if (!n->grad) n->grad = Eigen::ArrayXd::Zero(n->value.size());
}

void Tensor::backward() {
    const auto& root = Access::get(*this);
    if (root->value.size() != 1)
        throw Error("backward needs a scalar loss, got shape " + shape_str(root->shape));
    if (root->consumed) throw Error("double-backward unsupported: this graph was already consumed");
    root->consumed = true;
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            Node* p = top.first->parents[top.second++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(top.first);
            stack.pop_back();
        }
    }

    root->grad = Eigen::ArrayXd::Ones(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad) n->backward_fn();
        n->backward_fn = nullptr;
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& an = Access::get(a);
    const auto& bn = Access::get(b);
    if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0])
        throw ShapeError("matmul: " + shape_str(an->shape) + " x " + shape_str(bn->shape));
    const int m = an->shape[0], k = an->shape[1], n = bn->shape[1];
    auto out = new_node({m, n});
    {
        ConstMatMap A(an->value.data(), m, k), B(bn->value.data(), k, n);
        MatMap C(out->value.data(), m, n);
        C.noalias() = A * B;
    }
    if (taping({&an, &bn})) {
        out->requires_grad = true;
        out->parents = {an, bn};
        Node* self = out.get();
        out->backward_fn = [an, bn, self, m, k, n]() {
            ConstMatMap A(an->value.data(), m, k), B(bn->value.data(), k, n);
            ConstMatMap G(self->grad->data(), m, n);
            if (an->requires_grad) {
                Eigen::ArrayXd ga(static_cast<std::int64_t>(m) * k);
                MatMap GA(ga.data(), m, k);
                GA.noalias() = G * B.transpose();
                accum(an, ga);
            }
            if (bn->requires_grad) {
                Eigen::ArrayXd gb(static_cast<std::int64_t>(k) * n);
                MatMap GB(gb.data(), k, n);
                GB.noalias() = A.transpose() * G;
                accum(bn, gb);
            }
        };
    }
    return Access::wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& an = Access::get(a);
    const auto& bn = Access::get(b);
    const bool same = an->shape == bn->shape;
    const bool scalar_b = bn->value.size() == 1;
    const bool vector_b = !same && !scalar_b && bn->shape.size() == 1 &&
                          !an->shape.empty() && bn->shape[0] == an->shape.back();
    if (!same && !scalar_b && !vector_b)
        throw ShapeError("add: " + shape_str(an->shape) + " + " + shape_str(bn->shape));

    auto out = new_node(an->shape);
    if (same) {
        out->value = an->value + bn->value;
    } else if (scalar_b) {
        out->value = an->value + bn->value[0];
    } else {
        const std::int64_t cols = bn->value.size();
        const std::int64_t rows = an->value.size() / cols;
        out->value = an->value;
        for (std::int64_t r = 0; r < rows; ++r) out->value.segment(r * cols, cols) += bn->value;
    }
    if (taping({&an, &bn})) {
        out->requires_grad = true;
        out->parents = {an, bn};
        Node* self = out.get();
        out->backward_fn = [an, bn, self, same, scalar_b]() {
            const Eigen::ArrayXd& g = *self->grad;
            accum(an, g);
            if (!bn->requires_grad) return;
            if (same) {
                accum(bn, g);
            } else if (scalar_b) {
                accum(bn, Eigen::ArrayXd::Constant(1, g.sum()));
            } else {
                const std::int64_t cols = bn->value.size();
                const std::int64_t rows = g.size() / cols;
                Eigen::ArrayXd gb = Eigen::ArrayXd::Zero(cols);
                for (std::int64_t r = 0; r < rows; ++r) gb += g.segment(r * cols, cols);
                accum(bn, gb);
            }
        };
    }
    return Access::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& an = Access::get(a);
    const auto& bn = Access::get(b);
    const bool same = an->shape == bn->shape;
    const bool scalar_b = !same && bn->value.size() == 1;
    const bool scalar_a = !same && !scalar_b && an->value.size() == 1;
    if (!same && !scalar_b && !scalar_a)
        throw ShapeError("mul: " + shape_str(an->shape) + " * " + shape_str(bn->shape));

    auto out = new_node(scalar_a ? bn->shape : an->shape);
    if (same)
        out->value = an->value * bn->value;
    else if (scalar_b)
        out->value = an->value * bn->value[0];
    else
        out->value = bn->value * an->value[0];
    if (taping({&an, &bn})) {
        out->requires_grad = true;
        out->parents = {an, bn};
        Node* self = out.get();
        out->backward_fn = [an, bn, self, same, scalar_b]() {
            const Eigen::ArrayXd& g = *self->grad;
            if (same) {
                if (an->requires_grad) accum(an, g * bn->value);
                if (bn->requires_grad) accum(bn, g * an->value);
            } else if (scalar_b) {
                if (an->requires_grad) accum(an, g * bn->value[0]);
                if (bn->requires_grad) accum(bn, Eigen::ArrayXd::Constant(1, (g * an->value).sum()));
            } else {
                if (bn->requires_grad) accum(bn, g * an->value[0]);
                if (an->requires_grad) accum(an, Eigen::ArrayXd::Constant(1, (g * bn->value).sum()));
            }
        };
    }
    return Access::wrap(out);
}

Tensor scale(const Tensor& a, double c) {
    const auto& an = Access::get(a);
    auto out = new_node(an->shape);
    out->value = an->value * c;
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, c]() { accum(an, *self->grad * c); };
    }
    return Access::wrap(out);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor transpose(const Tensor& a) {
    const auto& an = Access::get(a);
    if (an->shape.size() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(an->shape));
    const int r = an->shape[0], c = an->shape[1];
    auto out = new_node({c, r});
    {
        ConstMatMap A(an->value.data(), r, c);
        MatMap T(out->value.data(), c, r);
        T = A.transpose();
    }
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, r, c]() {
            ConstMatMap G(self->grad->data(), c, r);
            Eigen::ArrayXd ga(static_cast<std::int64_t>(r) * c);
            MatMap GA(ga.data(), r, c);
            GA = G.transpose();
            accum(an, ga);
        };
    }
    return Access::wrap(out);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    const auto& an = Access::get(a);
    auto out = new_node(std::move(shape));
    if (out->value.size() != an->value.size())
        throw ShapeError("reshape: " + shape_str(an->shape) + " -> " + shape_str(out->shape) +
                         " changes element count");
    out->value = an->value;
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() { accum(an, *self->grad); };
    }
    return Access::wrap(out);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Tensor& t : parts) nodes.push_back(Access::get(t));
    const auto& ref = nodes.front()->shape;
    std::vector<int> out_shape = ref;
    const AxisSplit s0 = split_at(ref, axis);
    std::int64_t total_axis = 0;
    for (const auto& n : nodes) {
        if (n->shape.size() != ref.size())
            throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " +
                             shape_str(n->shape));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (static_cast<int>(i) != axis && n->shape[i] != ref[i])
                throw ShapeError("concat: " + shape_str(ref) + " vs " + shape_str(n->shape) +
                                 " along axis " + std::to_string(axis));
        total_axis += n->shape[static_cast<std::size_t>(axis)];
    }
    out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(total_axis);

    auto out = new_node(out_shape);
    const std::int64_t out_stride = total_axis * s0.inner;
    std::int64_t written = 0;
    for (const auto& n : nodes) {
        const std::int64_t part_axis = n->shape[static_cast<std::size_t>(axis)];
        const std::int64_t blk = part_axis * s0.inner;
        for (std::int64_t o = 0; o < s0.outer; ++o)
            out->value.segment(o * out_stride + written, blk) = n->value.segment(o * blk, blk);
        written += blk;
    }

    bool tape = false;
    if (g_grad_enabled)
        for (const auto& n : nodes) tape = tape || n->requires_grad;
    if (tape) {
        out->requires_grad = true;
        out->parents = nodes;
        Node* self = out.get();
        const std::int64_t outer = s0.outer, inner = s0.inner;
        out->backward_fn = [nodes, self, outer, inner, out_stride, axis]() {
            std::int64_t offset = 0;
            for (const auto& n : nodes) {
                const std::int64_t blk = n->shape[static_cast<std::size_t>(axis)] * inner;
                if (n->requires_grad) {
                    Eigen::ArrayXd g(n->value.size());
                    for (std::int64_t o = 0; o < outer; ++o)
                        g.segment(o * blk, blk) = self->grad->segment(o * out_stride + offset, blk);
                    accum(n, g);
                }
                offset += blk;
            }
        };
    }
    return Access::wrap(out);
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const auto& an = Access::get(a);
    const AxisSplit s = split_at(an->shape, axis);
    if (start < 0 || len < 1 || start + len > s.axis)
        throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis " + std::to_string(axis) + " of " +
                         shape_str(an->shape));
    std::vector<int> out_shape = an->shape;
    out_shape[static_cast<std::size_t>(axis)] = len;
    auto out = new_node(out_shape);
    const std::int64_t in_stride = s.axis * s.inner;
    const std::int64_t blk = static_cast<std::int64_t>(len) * s.inner;
    for (std::int64_t o = 0; o < s.outer; ++o)
        out->value.segment(o * blk, blk) = an->value.segment(o * in_stride + start * s.inner, blk);
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        const std::int64_t outer = s.outer, inner = s.inner;
        out->backward_fn = [an, self, outer, inner, in_stride, blk, start]() {
            Eigen::ArrayXd g = Eigen::ArrayXd::Zero(an->value.size());
            for (std::int64_t o = 0; o < outer; ++o)
                g.segment(o * in_stride + start * inner, blk) = self->grad->segment(o * blk, blk);
            accum(an, g);
        };
    }
    return Access::wrap(out);
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    const auto& tn = Access::get(table);
    if (tn->shape.size() != 2)
        throw ShapeError("embedding: table must be 2-D, got " + shape_str(tn->shape));
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    const int v = tn->shape[0], d = tn->shape[1];
    for (int id : ids)
        if (id < 0 || id >= v)
            throw ShapeError("embedding: id " + std::to_string(id) + " outside table " +
                             shape_str(tn->shape));
    auto out = new_node({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        out->value.segment(static_cast<std::int64_t>(i) * d, d) =
            tn->value.segment(static_cast<std::int64_t>(ids[i]) * d, d);
    if (taping({&tn})) {
        out->requires_grad = true;
        out->parents = {tn};
        Node* self = out.get();
        out->backward_fn = [tn, self, ids, d]() {
            Eigen::ArrayXd g = Eigen::ArrayXd::Zero(tn->value.size());
            for (std::size_t i = 0; i < ids.size(); ++i)
                g.segment(static_cast<std::int64_t>(ids[i]) * d, d) +=
                    self->grad->segment(static_cast<std::int64_t>(i) * d, d);
            accum(tn, g);
        };
    }
    return Access::wrap(out);
}

Tensor softmax(const Tensor& a) {
    const auto& an = Access::get(a);
    if (an->shape.empty()) throw ShapeError("softmax: scalar input");
    const std::int64_t cols = an->shape.back();
    const std::int64_t rows = an->value.size() / cols;
    if (!an->value.isFinite().all()) throw NumericalError("softmax: non-finite input");
    auto out = new_node(an->shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto x = an->value.segment(r * cols, cols);
        const double m = x.maxCoeff();
        Eigen::ArrayXd e(cols);
        // scalar exp underflows to exact zero, so -1e30 fills stay invisible
        for (std::int64_t c = 0; c < cols; ++c) e[c] = std::exp(x[c] - m);
        out->value.segment(r * cols, cols) = e / e.sum();
    }
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, rows, cols]() {
            Eigen::ArrayXd ga(an->value.size());
            for (std::int64_t r = 0; r < rows; ++r) {
                const auto y = self->value.segment(r * cols, cols);
                const auto g = self->grad->segment(r * cols, cols);
                const double dot = (g * y).sum();
                ga.segment(r * cols, cols) = y * (g - dot);
            }
            accum(an, ga);
        };
    }
    return Access::wrap(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const auto& an = Access::get(a);
    const auto& gn = Access::get(gamma);
    const auto& bn = Access::get(beta);
    if (an->shape.empty()) throw ShapeError("layer_norm: scalar input");
    const std::int64_t cols = an->shape.back();
    if (gn->shape.size() != 1 || gn->shape[0] != cols || bn->shape != gn->shape)
        throw ShapeError("layer_norm: input " + shape_str(an->shape) + " with gamma " +
                         shape_str(gn->shape) + " and beta " + shape_str(bn->shape));
    if (!an->value.isFinite().all()) throw NumericalError("layer_norm: non-finite input");
    const std::int64_t rows = an->value.size() / cols;

    auto out = new_node(an->shape);
    Eigen::ArrayXd xhat(an->value.size());
    Eigen::ArrayXd inv_sigma(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto x = an->value.segment(r * cols, cols);
        const double mu = x.mean();
        const double var = (x - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        xhat.segment(r * cols, cols) = (x - mu) * inv;
        out->value.segment(r * cols, cols) = xhat.segment(r * cols, cols) * gn->value + bn->value;
    }
    if (taping({&an, &gn, &bn})) {
        out->requires_grad = true;
        out->parents = {an, gn, bn};
        Node* self = out.get();
        out->backward_fn = [an, gn, bn, self, xhat, inv_sigma, rows, cols]() {
            Eigen::ArrayXd ga(an->value.size());
            Eigen::ArrayXd ggamma = Eigen::ArrayXd::Zero(cols);
            Eigen::ArrayXd gbeta = Eigen::ArrayXd::Zero(cols);
            for (std::int64_t r = 0; r < rows; ++r) {
                const auto g = self->grad->segment(r * cols, cols);
                const auto xh = xhat.segment(r * cols, cols);
                ggamma += g * xh;
                gbeta += g;
                const Eigen::ArrayXd dxh = g * gn->value;
                const double m1 = dxh.mean();
                const double m2 = (dxh * xh).mean();
                ga.segment(r * cols, cols) = inv_sigma[r] * (dxh - m1 - xh * m2);
            }
            if (an->requires_grad) accum(an, ga);
            accum(gn, ggamma);
            accum(bn, gbeta);
        };
    }
    return Access::wrap(out);
}

Tensor gelu(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node(an->shape);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::int64_t i = 0; i < an->value.size(); ++i) {
        const double x = an->value[i];
        out->value[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, inv_sqrt2]() {
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
            Eigen::ArrayXd ga(an->value.size());
            for (std::int64_t i = 0; i < an->value.size(); ++i) {
                const double x = an->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
                ga[i] = (*self->grad)[i] * (cdf + x * pdf);
            }
            accum(an, ga);
        };
    }
    return Access::wrap(out);
}

Tensor relu(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node(an->shape);
    out->value = an->value.max(0.0);
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() {
            accum(an, *self->grad * (an->value > 0.0).cast<double>());
        };
    }
    return Access::wrap(out);
}

Tensor sigmoid(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node(an->shape);
    for (std::int64_t i = 0; i < an->value.size(); ++i) out->value[i] = stable_sigmoid(an->value[i]);
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() {
            accum(an, *self->grad * self->value * (1.0 - self->value));
        };
    }
    return Access::wrap(out);
}

Tensor abs(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node(an->shape);
    out->value = an->value.abs();
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() { accum(an, *self->grad * an->value.sign()); };
    }
    return Access::wrap(out);
}

Tensor mean(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node({1});
    out->value[0] = an->value.mean();
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() {
            accum(an, Eigen::ArrayXd::Constant(an->value.size(),
                                               (*self->grad)[0] / static_cast<double>(an->value.size())));
        };
    }
    return Access::wrap(out);
}

Tensor sum(const Tensor& a) {
    const auto& an = Access::get(a);
    auto out = new_node({1});
    out->value[0] = an->value.sum();
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self]() {
            accum(an, Eigen::ArrayXd::Constant(an->value.size(), (*self->grad)[0]));
        };
    }
    return Access::wrap(out);
}

Tensor masked_fill(const Tensor& a, const std::vector<unsigned char>& mask, double fill) {
    const auto& an = Access::get(a);
    const std::int64_t n = an->value.size();
    const std::int64_t cols = an->shape.empty() ? 1 : an->shape.back();
    const bool full = static_cast<std::int64_t>(mask.size()) == n;
    const bool last = !full && static_cast<std::int64_t>(mask.size()) == cols;
    if (!full && !last)
        throw ShapeError("masked_fill: mask length " + std::to_string(mask.size()) +
                         " fits neither " + shape_str(an->shape) + " nor its last axis");
    Eigen::ArrayXd keep(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t mi = full ? static_cast<std::size_t>(i)
                                    : static_cast<std::size_t>(i % cols);
        keep[i] = mask[mi] ? 0.0 : 1.0;
    }
    auto out = new_node(an->shape);
    out->value = an->value * keep + (1.0 - keep) * fill;
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, keep]() { accum(an, *self->grad * keep); };
    }
    return Access::wrap(out);
}

Tensor bce_with_logits(const Tensor& logits, double target) {
    if (target < 0.0 || target > 1.0)
        throw NumericalError("bce_with_logits: target outside [0,1]");
    const auto& an = Access::get(logits);
    auto out = new_node(an->shape);
    for (std::int64_t i = 0; i < an->value.size(); ++i) {
        const double z = an->value[i];
        out->value[i] = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::fabs(z)));
    }
    if (taping({&an})) {
        out->requires_grad = true;
        out->parents = {an};
        Node* self = out.get();
        out->backward_fn = [an, self, target]() {
            Eigen::ArrayXd ga(an->value.size());
            for (std::int64_t i = 0; i < an->value.size(); ++i)
                ga[i] = (*self->grad)[i] * (stable_sigmoid(an->value[i]) - target);
            accum(an, ga);
        };
    }
    return Access::wrap(out);
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw ConfigError("gradient clip norm must be positive");
    double sq = 0.0;
    for (const Tensor& p : params)
        if (p.has_grad()) sq += p.grad().square().sum();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const Tensor& p : params) {
            const auto& n = Access::get(p);
            if (n->grad) *n->grad *= s;
        }
    }
    return norm;
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr_ <= 0.0) throw ConfigError("adam: learning rate must be positive");
    if (beta1_ < 0.0 || beta1_ >= 1.0 || beta2_ < 0.0 || beta2_ >= 1.0)
        throw ConfigError("adam: betas must lie in [0,1)");
    for (const Tensor& p : params_) {
        if (!p.defined()) throw Error("adam: undefined parameter");
        m_.push_back(Eigen::ArrayXd::Zero(p.numel()));
        v_.push_back(Eigen::ArrayXd::Zero(p.numel()));
    }
}

void Adam::step() {
    for (const Tensor& p : params_)
        if (!p.has_grad()) throw Error("adam: parameter missing its gradient");
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Eigen::ArrayXd& g = params_[i].grad();
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
        const Eigen::ArrayXd mhat = m_[i] / c1;
        const Eigen::ArrayXd vhat = v_[i] / c2;
        params_[i].raw() -= lr_ * mhat / (vhat.sqrt() + eps_);
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void Adam::load_state(std::int64_t step, std::vector<Eigen::ArrayXd> m,
                      std::vector<Eigen::ArrayXd> v) {
    if (step < 0) throw Error("adam: negative step count");
    if (m.size() != params_.size() || v.size() != params_.size())
        throw ShapeError("adam: state holds " + std::to_string(m.size()) + " moments for " +
                         std::to_string(params_.size()) + " parameters");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (m[i].size() != params_[i].numel() || v[i].size() != params_[i].numel())
            throw ShapeError("adam: moment size mismatch on parameter " + std::to_string(i));
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace crct
